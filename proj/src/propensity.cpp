#include "utvae/propensity.hpp"

#include <algorithm>
#include <cmath>

#include "utvae/error.hpp"

namespace utvae::propensity {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

}  // namespace

BallTree::BallTree(const Tensor& points, std::size_t leaf_size)
    : n_(points.rows()), d_(points.cols()), leaf_size_(leaf_size) {
  if (points.empty() || n_ == 0 || d_ == 0) throw ValidationError("ball tree: empty input");
  if (leaf_size == 0) throw ValidationError("ball tree: leaf_size must be >= 1");
  if (!points.all_finite()) throw ValidationError("ball tree: non-finite coordinates");
  points_.assign(points.data().begin(), points.data().end());
  order_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
  nodes_.reserve(2 * (n_ / leaf_size_ + 1));
  build(0, n_);
}

std::size_t BallTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.emplace_back();
  Node node;
  node.begin = begin;
  node.end = end;
  node.center.assign(d_, 0.0);
  std::vector<double> lo(d_, INFINITY), hi(d_, -INFINITY);
  for (std::size_t k = begin; k < end; ++k) {
    auto p = point(order_[k]);
    for (std::size_t j = 0; j < d_; ++j) {
      node.center[j] += p[j];
      lo[j] = std::min(lo[j], p[j]);
      hi[j] = std::max(hi[j], p[j]);
    }
  }
  for (double& c : node.center) c /= static_cast<double>(end - begin);
  double r2 = 0.0;
  for (std::size_t k = begin; k < end; ++k) r2 = std::max(r2, sq_dist(point(order_[k]), node.center));
  node.radius = std::sqrt(r2);

  std::size_t split_dim = 0;
  for (std::size_t j = 1; j < d_; ++j)
    if (hi[j] - lo[j] > hi[split_dim] - lo[split_dim]) split_dim = j;

  if (end - begin > leaf_size_ && hi[split_dim] > lo[split_dim]) {
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return points_[a * d_ + split_dim] < points_[b * d_ + split_dim];
                     });
    node.left = build(begin, mid);
    node.right = build(mid, end);
  }
  nodes_[id] = std::move(node);
  return id;
}

template <class Visit>
void BallTree::visit_ball(std::span<const double> q, double epsilon, Visit&& visit) const {
  if (q.size() != d_) {
    throw ShapeError("ball tree: query of dimension " + std::to_string(q.size()) + " for index of dimension " +
                     std::to_string(d_));
  }
  const double eps2 = epsilon * epsilon;
  // Pruning uses a slightly inflated bound; membership uses the exact squared
  // distance, the same test a linear scan applies.
  const double slack = 1e-9 * (1.0 + epsilon);
  std::vector<std::size_t> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    const double dc = std::sqrt(sq_dist(q, node.center));
    if (dc - node.radius > epsilon + slack) continue;
    if (node.is_leaf()) {
      for (std::size_t k = node.begin; k < node.end; ++k) {
        const std::size_t i = order_[k];
        if (sq_dist(q, point(i)) <= eps2) visit(i);
      }
    } else {
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
  }
}

std::vector<std::size_t> BallTree::radius_query(std::span<const double> q, double epsilon) const {
  if (!(epsilon > 0.0)) throw ValidationError("radius query: epsilon must be > 0");
  std::vector<std::size_t> out;
  visit_ball(q, epsilon, [&](std::size_t i) { out.push_back(i); });
  std::sort(out.begin(), out.end());
  return out;
}

struct RadiusCounter {
  static RadiusCount count(const BallTree& index, std::span<const double> q, double epsilon,
                           std::span<const int> labels) {
    RadiusCount c;
    index.visit_ball(q, epsilon, [&](std::size_t i) {
      ++c.total;
      if (labels[i] == 1) ++c.treated;
    });
    return c;
  }
};

RadiusCount radius_count(const BallTree& index, std::span<const double> q, double epsilon,
                         std::span<const int> labels) {
  if (!(epsilon > 0.0)) throw ValidationError("radius_count: epsilon must be > 0");
  if (labels.size() != index.size()) {
    throw ValidationError("radius_count: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(index.size()) + " indexed points");
  }
  return RadiusCounter::count(index, q, epsilon, labels);
}

void PropensityConfig::validate() const {
  if (!(epsilon > 0.0)) throw ValidationError("propensity: epsilon must be > 0");
  if (!(smoothing >= 0.0)) throw ValidationError("propensity: smoothing must be >= 0");
  if (!(clip_lo > 0.0 && clip_lo < clip_hi && clip_hi < 1.0)) {
    throw ValidationError("propensity: need 0 < clip_lo < clip_hi < 1");
  }
}

double smoothed_propensity(const RadiusCount& c, const PropensityConfig& cfg) {
  const double denom = static_cast<double>(c.total) + 2.0 * cfg.smoothing;
  // No neighbors and no pseudo-counts: fall back to the uninformative 1/2.
  const double raw = denom > 0.0 ? (static_cast<double>(c.treated) + cfg.smoothing) / denom : 0.5;
  return std::clamp(raw, cfg.clip_lo, cfg.clip_hi);
}

namespace {

void check_labels(std::span<const int> labels, std::size_t n) {
  if (labels.size() != n) throw ValidationError("propensity: labels do not match the index");
  for (int l : labels)
    if (l != 0 && l != 1) throw ValidationError("propensity: treatment labels must be 0 or 1");
}

PropensityEstimate finish(std::vector<RadiusCount> counts, const PropensityConfig& cfg) {
  PropensityEstimate est;
  est.config = cfg;
  est.raw_counts = std::move(counts);
  est.e.reserve(est.raw_counts.size());
  for (const RadiusCount& c : est.raw_counts) {
    const double denom = static_cast<double>(c.total) + 2.0 * cfg.smoothing;
    const double raw = denom > 0.0 ? (static_cast<double>(c.treated) + cfg.smoothing) / denom : 0.5;
    const double e = smoothed_propensity(c, cfg);
    if (e != raw) ++est.clipped;
    est.e.push_back(e);
  }
  return est;
}

}  // namespace

PropensityEstimate estimate_propensity(const BallTree& index, std::span<const int> labels,
                                       const PropensityConfig& cfg) {
  cfg.validate();
  check_labels(labels, index.size());
  std::vector<RadiusCount> counts(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) counts[i] = radius_count(index, index.point(i), cfg.epsilon, labels);
  return finish(std::move(counts), cfg);
}

PropensityEstimate estimate_propensity(const BallTree& index, std::span<const int> labels,
                                       const Tensor& queries, const PropensityConfig& cfg) {
  cfg.validate();
  check_labels(labels, index.size());
  if (queries.cols() != index.dim()) throw ShapeError("propensity: query dimension mismatch");
  std::vector<RadiusCount> counts(queries.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    counts[i] = radius_count(index, queries.data().subspan(i * index.dim(), index.dim()), cfg.epsilon, labels);
  }
  return finish(std::move(counts), cfg);
}

Tensor ImportanceWeights::column() const { return Tensor::column(w); }

ImportanceWeights importance_weights(std::span<const double> e, std::span<const int> t) {
  if (e.size() != t.size()) {
    throw ValidationError("importance_weights: " + std::to_string(e.size()) + " propensities for " +
                          std::to_string(t.size()) + " treatments");
  }
  ImportanceWeights out;
  out.w.resize(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!(e[i] > 0.0 && e[i] < 1.0)) throw DomainError("importance_weights: propensity outside (0,1)");
    if (t[i] != 0 && t[i] != 1) throw ValidationError("importance_weights: treatment must be 0 or 1");
    out.w[i] = t[i] == 1 ? out.target / e[i] : out.target / (1.0 - e[i]);
  }
  return out;
}

ImportanceWeights importance_weights(const PropensityEstimate& est, std::span<const int> t) {
  return importance_weights(est.e, t);
}

}  // namespace utvae::propensity
