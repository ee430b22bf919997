#include "utvae/dists.hpp"

#include <cmath>
#include <numbers>

#include "utvae/error.hpp"

namespace utvae::dists {

namespace {

void require_positive(const Var& std) {
  for (double s : std.value().data()) {
    if (!(s > 0.0)) throw DomainError("gaussian: non-positive standard deviation " + std::to_string(s));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols()) {
    throw ShapeError(std::string(what) + ": " + diff::shape_string(a.shape()) + " vs " +
                     diff::shape_string(b.shape()));
  }
}

}  // namespace

GaussianDiag GaussianDiag::from_raw(Var mean, Var raw_std) {
  Var floor = raw_std.tape().constant(Tensor::scalar(kStdFloor));
  return GaussianDiag{mean, diff::softplus(raw_std) + floor};
}

Var BernoulliP::prob() const { return diff::sigmoid(logit); }

Var gaussian_log_prob(const GaussianDiag& g, Var x) {
  require_same_shape(g.mean, g.std, "gaussian_log_prob");
  require_same_shape(g.mean, x, "gaussian_log_prob");
  require_positive(g.std);
  diff::Tape& tape = x.tape();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Var z = (x - g.mean) / g.std;
  Var per_coord = diff::scale(diff::square(z), -0.5) - diff::log(g.std);
  Var offset = tape.constant(Tensor::scalar(-half_log_2pi * static_cast<double>(x.value().cols())));
  return diff::sum(per_coord, 1) + offset;
}

Var gaussian_log_prob(const GaussianDiag& g, const Tensor& x) {
  return gaussian_log_prob(g, g.mean.tape().constant(x));
}

Var bernoulli_log_prob(const BernoulliP& b, const Tensor& y) {
  for (double v : y.data()) {
    if (v != 0.0 && v != 1.0) throw DomainError("bernoulli_log_prob: y must be 0 or 1, got " + std::to_string(v));
  }
  if (y.rows() != b.logit.value().rows() || y.cols() != b.logit.value().cols()) {
    throw ShapeError("bernoulli_log_prob: y " + diff::shape_string(y.shape()) + " vs logit " +
                     diff::shape_string(b.logit.shape()));
  }
  Var yv = b.logit.tape().constant(y);
  return diff::sum(yv * b.logit - diff::softplus(b.logit), 1);
}

Var kl_to_std_normal(const GaussianDiag& g) {
  require_same_shape(g.mean, g.std, "kl_to_std_normal");
  require_positive(g.std);
  diff::Tape& tape = g.mean.tape();
  Var one = tape.constant(Tensor::scalar(1.0));
  Var per_coord = diff::square(g.mean) + diff::square(g.std) - one - diff::scale(diff::log(g.std), 2.0);
  return diff::scale(diff::sum(per_coord, 1), 0.5);
}

Var reparam_sample(const GaussianDiag& g, const Tensor& noise) {
  require_same_shape(g.mean, g.std, "reparam_sample");
  if (noise.rows() != g.mean.value().rows() || noise.cols() != g.mean.value().cols()) {
    throw ShapeError("reparam_sample: noise " + diff::shape_string(noise.shape()) + " vs mean " +
                     diff::shape_string(g.mean.shape()));
  }
  return g.mean + g.std * g.mean.tape().constant(noise);
}

}  // namespace utvae::dists
