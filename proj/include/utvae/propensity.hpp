#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "utvae/diff/tensor.hpp"

namespace utvae::propensity {

using diff::Tensor;

// Ball tree over the rows of an n x d matrix, Euclidean metric. Nodes split
// on the coordinate of widest spread at its median. Immutable once built;
// concurrent queries are safe.
class BallTree {
 public:
  struct Node {
    std::vector<double> center;  // centroid of the node's points
    double radius = 0.0;         // max distance from center to a member point
    std::size_t begin = 0;       // range into order()
    std::size_t end = 0;
    std::size_t left = kNone;
    std::size_t right = kNone;

    bool is_leaf() const { return left == kNone; }
  };

  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  // Throws ValidationError for an empty or non-finite matrix or leaf_size 0.
  BallTree(const Tensor& points, std::size_t leaf_size = 16);

  std::size_t size() const { return n_; }
  std::size_t dim() const { return d_; }
  std::size_t leaf_size() const { return leaf_size_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  // Point indices, grouped so each leaf owns a contiguous range.
  const std::vector<std::size_t>& order() const { return order_; }
  std::span<const double> point(std::size_t i) const { return {points_.data() + i * d_, d_}; }

  // Indices of all points with distance <= epsilon from q, ascending.
  std::vector<std::size_t> radius_query(std::span<const double> q, double epsilon) const;

 private:
  std::size_t build(std::size_t begin, std::size_t end);
  template <class Visit>
  void visit_ball(std::span<const double> q, double epsilon, Visit&& visit) const;
  friend struct RadiusCounter;

  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::size_t leaf_size_ = 16;
  std::vector<double> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

struct RadiusCount {
  std::size_t treated = 0;
  std::size_t total = 0;

  friend bool operator==(const RadiusCount&, const RadiusCount&) = default;
};

// Labeled neighbors within epsilon of q, the query itself included when it
// is an indexed point. labels[i] is the treatment of indexed point i.
// Throws ValidationError when epsilon <= 0.
RadiusCount radius_count(const BallTree& index, std::span<const double> q, double epsilon,
                         std::span<const int> labels);

struct PropensityConfig {
  double epsilon = 1.0;
  double smoothing = 1.0;  // Laplace pseudo-count per class
  double clip_lo = 0.05;
  double clip_hi = 0.95;

  void validate() const;
};

struct PropensityEstimate {
  std::vector<double> e;  // clipped estimate of p(T=1 | x_i)
  std::vector<RadiusCount> raw_counts;
  PropensityConfig config;
  std::size_t clipped = 0;  // entries moved by the clamp
};

// e_i = clamp((treated_i + s) / (total_i + 2 s), clip_lo, clip_hi).
double smoothed_propensity(const RadiusCount& c, const PropensityConfig& cfg);

// Estimates p(T=1|x) for every indexed point from its epsilon-ball.
PropensityEstimate estimate_propensity(const BallTree& index, std::span<const int> labels,
                                       const PropensityConfig& cfg);

// Estimates for arbitrary query rows against an indexed, labeled sample.
PropensityEstimate estimate_propensity(const BallTree& index, std::span<const int> labels,
                                       const Tensor& queries, const PropensityConfig& cfg);

struct ImportanceWeights {
  std::vector<double> w;
  double target = 0.5;  // r(T) under the uniform treatment distribution

  Tensor column() const;
};

// w_i = 0.5 / e_i for treated rows and 0.5 / (1 - e_i) for control rows.
ImportanceWeights importance_weights(const PropensityEstimate& est, std::span<const int> t);
ImportanceWeights importance_weights(std::span<const double> e, std::span<const int> t);

}  // namespace utvae::propensity
