#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "utvae/diff/tensor.hpp"

namespace utvae::diff {

// Which objective a trainable tensor belongs to: the generative model
// (theta), the inference network (phi) or the auxiliary predictors used at
// query time (varphi).
enum class ParamGroup { kGenerative, kInference, kAuxiliary };

std::string_view group_name(ParamGroup group);

class Parameter {
 public:
  Parameter(std::string id, Tensor value, ParamGroup group)
      : id_(std::move(id)), value_(std::move(value)), group_(group) {}

  const std::string& id() const { return id_; }
  ParamGroup group() const { return group_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }

 private:
  std::string id_;
  Tensor value_;
  ParamGroup group_;
};

// Owns the parameters of one model. Ids are unique. Parameters are never
// removed, so indices stay valid for the life of the set.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = default;
  ParameterSet& operator=(const ParameterSet&) = default;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  std::size_t add(std::string id, Tensor value, ParamGroup group);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  const Parameter* find(std::string_view id) const;
  Parameter* find(std::string_view id);
  std::size_t index_of(std::string_view id) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Parameter id -> gradient of a scalar loss. Ordered so that iteration is
// deterministic.
using GradientMap = std::map<std::string, Tensor, std::less<>>;

}  // namespace utvae::diff
