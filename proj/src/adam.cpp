#include "utvae/diff/adam.hpp"

#include <cmath>

#include "utvae/error.hpp"

namespace utvae::diff {

AdamState::AdamState(const ParameterSet& params, AdamConfig config) : config_(config) {
  for (const Parameter& p : params) {
    m_.emplace(p.id(), Tensor(p.value().shape(), 0.0));
    v_.emplace(p.id(), Tensor(p.value().shape(), 0.0));
  }
}

void AdamState::step(ParameterSet& params, const GradientMap& grads) {
  for (const auto& [id, g] : grads) {
    const Parameter* p = params.find(id);
    if (!p) throw ValidationError("adam: gradient for unknown parameter '" + id + "'");
    if (g.size() != p->value().size()) {
      throw ShapeError("adam: gradient shape " + shape_string(g.shape()) + " for parameter '" + id +
                       "' of shape " + shape_string(p->value().shape()));
    }
    if (!g.all_finite()) throw NonFiniteError("adam: non-finite gradient for parameter '" + id + "'");
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (Parameter& p : params) {
    auto mit = m_.find(p.id());
    if (mit == m_.end()) {
      throw ValidationError("adam: parameter '" + p.id() + "' was added after the optimizer");
    }
    Tensor& m = mit->second;
    Tensor& v = v_.find(p.id())->second;
    auto git = grads.find(p.id());
    double* w = p.value().data().data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = git == grads.end() ? 0.0 : git->second[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace utvae::diff
