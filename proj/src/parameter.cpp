#include "utvae/diff/parameter.hpp"

#include "utvae/error.hpp"

namespace utvae::diff {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kGenerative:
      return "generative";
    case ParamGroup::kInference:
      return "inference";
    case ParamGroup::kAuxiliary:
      return "auxiliary";
  }
  return "?";
}

std::size_t ParameterSet::add(std::string id, Tensor value, ParamGroup group) {
  if (index_.contains(id)) throw ValidationError("duplicate parameter id '" + id + "'");
  const std::size_t idx = params_.size();
  index_.emplace(id, idx);
  params_.emplace_back(std::move(id), std::move(value), group);
  return idx;
}

const Parameter* ParameterSet::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter* ParameterSet::find(std::string_view id) {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParameterSet::index_of(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ValidationError("unknown parameter id '" + std::string(id) + "'");
  return it->second;
}

}  // namespace utvae::diff
