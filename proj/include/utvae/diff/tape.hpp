#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "utvae/diff/parameter.hpp"
#include "utvae/diff/tensor.hpp"

namespace utvae::diff {

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Propagates the adjoint of node `self` into its inputs.
using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

// Append-only record of primitive evaluations for reverse-mode
// differentiation. One tape serves one loss evaluation: backward() may be
// called once, after which the tape is consumed.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Trainable leaf; its gradient is reported by backward().
  Var leaf(const Parameter& param);
  // Same value as `param` but treated as a constant.
  Var detached(const Parameter& param);

  // Appends a node computed from `inputs`. Used by the primitives; `fn` is
  // dropped when no input needs a gradient. Throws NonFiniteError if
  // `value` has NaN/Inf entries.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  // Handle for an existing node.
  Var handle(std::size_t node) { return Var(this, node); }
  const Tensor& value(std::size_t node) const { return nodes_[node].value; }
  const std::vector<std::size_t>& inputs(std::size_t node) const { return nodes_[node].inputs; }
  bool requires_grad(std::size_t node) const { return nodes_[node].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Adjoint of a node after backward(); zeros for unreachable nodes.
  Tensor adjoint(Var v) const;
  const Tensor& adjoint_ref(std::size_t node) const { return nodes_[node].adjoint; }

  // Adds `grad` (already in the node's shape) into the node's adjoint.
  void accumulate(std::size_t node, const Tensor& grad);
  // Adds `grad`, summing over any dimensions along which the node was broadcast.
  void accumulate_reduced(std::size_t node, const Tensor& grad);

  // Differentiates the scalar `root`. Gradients of every trainable leaf are
  // summed per parameter id. When `all` is given, parameters that never
  // appeared on the tape map to zero tensors.
  GradientMap backward(Var root, const ParameterSet* all = nullptr);

 private:
  struct Node {
    Tensor value;
    Tensor adjoint;  // empty until something flows in
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

enum class Activation { kElu, kSoftplus };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation act);

// --- primitives -----------------------------------------------------------
//
// Binary elementwise ops broadcast numpy-style over the 2-D views of their
// operands: each dimension must match or be 1. When both shapes are equal
// the result keeps that shape; otherwise it is rank 2.

Var matmul(Var a, Var b);  // [m,k] x [k,n] -> [m,n]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var exp(Var a);
Var log(Var a);  // DomainError for non-positive input
Var sigmoid(Var a);
Var softplus(Var a);
Var elu(Var a);  // alpha = 1
Var rectifier(Var a, Activation act);
Var square(Var a);

Var sum(Var a);            // all elements -> scalar
Var sum(Var a, int axis);  // keepdims; axis 0 -> [1,c], axis 1 -> [r,1]
Var mean(Var a);
Var mean(Var a, int axis);
Var broadcast_to(Var a, const Shape& shape);
Var concat(std::span<const Var> parts, int axis);
Var slice(Var a, int axis, std::size_t begin, std::size_t end);
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace utvae::diff
