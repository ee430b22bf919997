#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "utvae/diff/parameter.hpp"

namespace utvae::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over every parameter of one ParameterSet.
class AdamState {
 public:
  AdamState(const ParameterSet& params, AdamConfig config);

  // Applies one update. Parameters missing from `grads` get a zero
  // gradient. A non-finite gradient throws NonFiniteError naming the
  // parameter before anything is modified.
  void step(ParameterSet& params, const GradientMap& grads);

  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const Tensor& first_moment(const std::string& id) const { return m_.at(id); }
  const Tensor& second_moment(const std::string& id) const { return v_.at(id); }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::map<std::string, Tensor, std::less<>> m_;
  std::map<std::string, Tensor, std::less<>> v_;
};

}  // namespace utvae::diff
