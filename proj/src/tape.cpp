#include "utvae/diff/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "utvae/error.hpp"

namespace utvae::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct Extent {
  std::size_t rows;
  std::size_t cols;
};

Extent extent(const Tensor& t) { return {t.rows(), t.cols()}; }

void require_2d(const Tensor& t, std::string_view op) {
  if (t.rank() > 2) {
    throw ShapeError(std::string(op) + ": rank " + std::to_string(t.rank()) + " operand");
  }
}

std::size_t broadcast_dim(std::size_t a, std::size_t b, std::string_view op, const Tensor& ta,
                          const Tensor& tb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(ta.shape()) + " with " +
                   shape_string(tb.shape()));
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  require_2d(a, op);
  require_2d(b, op);
  if (a.shape() == b.shape()) return a.shape();
  const Extent ea = extent(a);
  const Extent eb = extent(b);
  return Shape{broadcast_dim(ea.rows, eb.rows, op, a, b), broadcast_dim(ea.cols, eb.cols, op, a, b)};
}

// out(r,c) = f(a(r',c'), b(r'',c'')) with size-1 dimensions repeated.
template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  Tensor out(out_shape);
  if (a.size() == out.size() && b.size() == out.size()) {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const Extent eo = extent(out);
  const Extent ea = extent(a);
  const Extent eb = extent(b);
  for (std::size_t r = 0; r < eo.rows; ++r) {
    const std::size_t ra = ea.rows == 1 ? 0 : r;
    const std::size_t rb = eb.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < eo.cols; ++c) {
      const std::size_t ca = ea.cols == 1 ? 0 : c;
      const std::size_t cb = eb.cols == 1 ? 0 : c;
      out(r, c) = f(a(ra, ca), b(rb, cb));
    }
  }
  return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  const double* pa = a.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i]);
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

// --- Var / Tape -------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(const Parameter& param) {
  Node n;
  n.value = param.value();
  n.param = &param;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::detached(const Parameter& param) { return constant(param.value()); }

Var Tape::record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (consumed_) throw Error(std::string(op) + ": tape already consumed");
  if (!value.all_finite()) {
    throw NonFiniteError(std::string(op) + " produced a non-finite value");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) n.backward = std::move(fn);
  n.inputs = std::move(inputs);
  return push(std::move(n));
}

Tensor Tape::adjoint(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.adjoint.empty() && !n.value.empty()) return Tensor(n.value.shape(), 0.0);
  return n.adjoint;
}

void Tape::accumulate(std::size_t node, const Tensor& grad) {
  Node& n = nodes_[node];
  if (!n.requires_grad) return;
  if (grad.size() != n.value.size()) {
    throw ShapeError("adjoint of size " + std::to_string(grad.size()) + " for node of shape " +
                     shape_string(n.value.shape()));
  }
  if (n.adjoint.empty()) {
    n.adjoint = Tensor(n.value.shape(), std::vector<double>(grad.data().begin(), grad.data().end()));
    return;
  }
  double* dst = n.adjoint.data().data();
  const double* src = grad.data().data();
  for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
}

void Tape::accumulate_reduced(std::size_t node, const Tensor& grad) {
  Node& n = nodes_[node];
  if (!n.requires_grad) return;
  if (grad.size() == n.value.size()) {
    accumulate(node, grad);
    return;
  }
  const Extent en = extent(n.value);
  const Extent eg = extent(grad);
  Tensor reduced(n.value.shape(), 0.0);
  for (std::size_t r = 0; r < eg.rows; ++r) {
    const std::size_t rn = en.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < eg.cols; ++c) {
      const std::size_t cn = en.cols == 1 ? 0 : c;
      reduced(rn, cn) += grad(r, c);
    }
  }
  accumulate(node, reduced);
}

GradientMap Tape::backward(Var root, const ParameterSet* all) {
  if (consumed_) throw Error("backward: tape already consumed");
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_string(root.shape()));
  }
  consumed_ = true;

  GradientMap grads;
  if (all) {
    for (const Parameter& p : *all) grads.emplace(p.id(), Tensor(p.value().shape(), 0.0));
  }
  if (!nodes_[root.id()].requires_grad) return grads;

  nodes_[root.id()].adjoint = Tensor(root.shape(), 1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.adjoint.empty() || !n.backward) continue;
    n.backward(*this, i);
  }

  for (const Node& n : nodes_) {
    if (!n.param) continue;
    auto [it, inserted] = grads.try_emplace(n.param->id(), Tensor(n.value.shape(), 0.0));
    if (n.adjoint.empty()) continue;
    double* dst = it->second.data().data();
    const double* src = n.adjoint.data().data();
    for (std::size_t k = 0; k < n.adjoint.size(); ++k) dst[k] += src[k];
  }
  return grads;
}

Activation parse_activation(std::string_view name) {
  if (name == "elu") return Activation::kElu;
  if (name == "softplus") return Activation::kSoftplus;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation act) {
  return act == Activation::kElu ? "elu" : "softplus";
}

// --- primitives --------------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    throw ShapeError("matmul: " + shape_string(ta.shape()) + " x " + shape_string(tb.shape()));
  }
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out = Tensor::matrix(m, n);
  MutMap(out.data().data(), m, n).noalias() =
      ConstMap(ta.data().data(), m, k) * ConstMap(tb.data().data(), k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint_ref(self);
    ConstMap gm(g.data().data(), m, n);
    if (t.requires_grad(ia)) {
      Tensor ga = Tensor::matrix(m, k);
      MutMap(ga.data().data(), m, k).noalias() =
          gm * ConstMap(t.value(ib).data().data(), k, n).transpose();
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor gb = Tensor::matrix(k, n);
      MutMap(gb.data().data(), k, n).noalias() =
          ConstMap(t.value(ia).data().data(), m, k).transpose() * gm;
      t.accumulate(ib, gb);
    }
  });
}

Var add(Var a, Var b) {
  const Shape s = broadcast_shape(a.value(), b.value(), "add");
  Tensor out = zip(a.value(), b.value(), s, [](double x, double y) { return x + y; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint_ref(self);
    t.accumulate_reduced(ia, g);
    t.accumulate_reduced(ib, g);
  });
}

Var sub(Var a, Var b) {
  const Shape s = broadcast_shape(a.value(), b.value(), "sub");
  Tensor out = zip(a.value(), b.value(), s, [](double x, double y) { return x - y; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint_ref(self);
    t.accumulate_reduced(ia, g);
    if (t.requires_grad(ib)) t.accumulate_reduced(ib, map(g, [](double v) { return -v; }));
  });
}

Var mul(Var a, Var b) {
  const Shape s = broadcast_shape(a.value(), b.value(), "mul");
  Tensor out = zip(a.value(), b.value(), s, [](double x, double y) { return x * y; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint_ref(self);
    if (t.requires_grad(ia)) {
      t.accumulate_reduced(ia, zip(g, t.value(ib), g.shape(), [](double x, double y) { return x * y; }));
    }
    if (t.requires_grad(ib)) {
      t.accumulate_reduced(ib, zip(g, t.value(ia), g.shape(), [](double x, double y) { return x * y; }));
    }
  });
}

Var div(Var a, Var b) {
  const Shape s = broadcast_shape(a.value(), b.value(), "div");
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  Tensor out = zip(a.value(), b.value(), s, [](double x, double y) { return x / y; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("div", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint_ref(self);
    const Tensor& vb = t.value(ib);
    if (t.requires_grad(ia)) {
      t.accumulate_reduced(ia, zip(g, vb, g.shape(), [](double x, double y) { return x / y; }));
    }
    if (t.requires_grad(ib)) {
      // d(a/b)/db = -(a/b)/b
      const Tensor q = zip(t.value(self), vb, g.shape(), [](double x, double y) { return x / y; });
      t.accumulate_reduced(ib, zip(g, q, g.shape(), [](double x, double y) { return -x * y; }));
    }
  });
}

Var neg(Var a) {
  const std::size_t ia = a.id();
  return a.tape().record("neg", map(a.value(), [](double x) { return -x; }), {ia},
                         [ia](Tape& t, std::size_t self) {
                           t.accumulate(ia, map(t.adjoint_ref(self), [](double v) { return -v; }));
                         });
}

Var scale(Var a, double factor) {
  const std::size_t ia = a.id();
  return a.tape().record("scale", map(a.value(), [factor](double x) { return x * factor; }), {ia},
                         [ia, factor](Tape& t, std::size_t self) {
                           t.accumulate(ia, map(t.adjoint_ref(self),
                                                [factor](double v) { return v * factor; }));
                         });
}

Var exp(Var a) {
  require_2d(a.value(), "exp");
  const std::size_t ia = a.id();
  return a.tape().record("exp", map(a.value(), [](double x) { return std::exp(x); }), {ia},
                         [ia](Tape& t, std::size_t self) {
                           t.accumulate(ia, zip(t.adjoint_ref(self), t.value(self), t.value(self).shape(),
                                                [](double g, double y) { return g * y; }));
                         });
}

Var log(Var a) {
  require_2d(a.value(), "log");
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  const std::size_t ia = a.id();
  return a.tape().record("log", map(a.value(), [](double x) { return std::log(x); }), {ia},
                         [ia](Tape& t, std::size_t self) {
                           t.accumulate(ia, zip(t.adjoint_ref(self), t.value(ia), t.value(ia).shape(),
                                                [](double g, double x) { return g / x; }));
                         });
}

Var sigmoid(Var a) {
  require_2d(a.value(), "sigmoid");
  const std::size_t ia = a.id();
  return a.tape().record("sigmoid", map(a.value(), stable_sigmoid), {ia}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, zip(t.adjoint_ref(self), t.value(self), t.value(self).shape(),
                         [](double g, double s) { return g * s * (1.0 - s); }));
  });
}

Var softplus(Var a) {
  require_2d(a.value(), "softplus");
  const std::size_t ia = a.id();
  return a.tape().record("softplus", map(a.value(), stable_softplus), {ia}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, zip(t.adjoint_ref(self), t.value(ia), t.value(ia).shape(),
                         [](double g, double x) { return g * stable_sigmoid(x); }));
  });
}

Var elu(Var a) {
  require_2d(a.value(), "elu");
  const std::size_t ia = a.id();
  return a.tape().record("elu", map(a.value(), [](double x) { return x > 0.0 ? x : std::expm1(x); }), {ia},
                         [ia](Tape& t, std::size_t self) {
                           t.accumulate(ia, zip(t.adjoint_ref(self), t.value(ia), t.value(ia).shape(),
                                                [](double g, double x) {
                                                  return x > 0.0 ? g : g * std::exp(x);
                                                }));
                         });
}

Var rectifier(Var a, Activation act) { return act == Activation::kElu ? elu(a) : softplus(a); }

Var square(Var a) {
  require_2d(a.value(), "square");
  const std::size_t ia = a.id();
  return a.tape().record("square", map(a.value(), [](double x) { return x * x; }), {ia},
                         [ia](Tape& t, std::size_t self) {
                           t.accumulate(ia, zip(t.adjoint_ref(self), t.value(ia), t.value(ia).shape(),
                                                [](double g, double x) { return 2.0 * g * x; }));
                         });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(total), {ia}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, Tensor(t.value(ia).shape(), t.adjoint_ref(self).item()));
  });
}

Var sum(Var a, int axis) {
  const Tensor& v = a.value();
  require_2d(v, "sum");
  const Extent e = extent(v);
  Tensor out;
  if (axis == 0) {
    out = Tensor::matrix(1, e.cols);
    for (std::size_t r = 0; r < e.rows; ++r)
      for (std::size_t c = 0; c < e.cols; ++c) out(0, c) += v(r, c);
  } else if (axis == 1) {
    out = Tensor::matrix(e.rows, 1);
    for (std::size_t r = 0; r < e.rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < e.cols; ++c) acc += v(r, c);
      out(r, 0) = acc;
    }
  } else {
    throw ShapeError("sum: axis must be 0 or 1");
  }
  const std::size_t ia = a.id();
  return a.tape().record("sum_axis", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint_ref(self);
    const Tensor& x = t.value(ia);
    Tensor full(x.shape());
    const Extent ex = extent(x);
    const Extent eg = extent(g);
    for (std::size_t r = 0; r < ex.rows; ++r)
      for (std::size_t c = 0; c < ex.cols; ++c)
        full(r, c) = g(eg.rows == 1 ? 0 : r, eg.cols == 1 ? 0 : c);
    t.accumulate(ia, full);
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var mean(Var a, int axis) {
  const Extent e = extent(a.value());
  const double n = static_cast<double>(axis == 0 ? e.rows : e.cols);
  if (n == 0) throw ShapeError("mean over empty axis");
  return scale(sum(a, axis), 1.0 / n);
}

Var broadcast_to(Var a, const Shape& shape) {
  Tensor target(shape);
  const Shape s = broadcast_shape(a.value(), target, "broadcast_to");
  if (shape_size(s) != target.size()) {
    throw ShapeError("broadcast_to: " + shape_string(a.shape()) + " does not fit " + shape_string(shape));
  }
  Tensor out = zip(a.value(), target, shape, [](double x, double) { return x; });
  const std::size_t ia = a.id();
  return a.tape().record("broadcast_to", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    t.accumulate_reduced(ia, t.adjoint_ref(self));
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  Tape& tape = parts.front().tape();
  std::vector<std::size_t> ids;
  std::vector<Extent> extents;
  std::size_t total = 0;
  const Extent first = extent(parts.front().value());
  for (const Var& p : parts) {
    require_2d(p.value(), "concat");
    const Extent e = extent(p.value());
    if ((axis == 0 && e.cols != first.cols) || (axis == 1 && e.rows != first.rows)) {
      throw ShapeError("concat: incompatible " + shape_string(p.shape()));
    }
    total += axis == 0 ? e.rows : e.cols;
    ids.push_back(p.id());
    extents.push_back(e);
  }
  Tensor out = axis == 0 ? Tensor::matrix(total, first.cols) : Tensor::matrix(first.rows, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    const Extent e = extents[k];
    for (std::size_t r = 0; r < e.rows; ++r)
      for (std::size_t c = 0; c < e.cols; ++c) {
        if (axis == 0)
          out(offset + r, c) = v(r, c);
        else
          out(r, offset + c) = v(r, c);
      }
    offset += axis == 0 ? e.rows : e.cols;
  }
  return tape.record("concat", std::move(out), ids, [ids, extents, axis](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint_ref(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Extent e = extents[k];
      if (t.requires_grad(ids[k])) {
        Tensor part(t.value(ids[k]).shape());
        for (std::size_t r = 0; r < e.rows; ++r)
          for (std::size_t c = 0; c < e.cols; ++c)
            part(r, c) = axis == 0 ? g(off + r, c) : g(r, off + c);
        t.accumulate(ids[k], part);
      }
      off += axis == 0 ? e.rows : e.cols;
    }
  });
}

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  require_2d(v, "slice");
  const Extent e = extent(v);
  const std::size_t limit = axis == 0 ? e.rows : e.cols;
  if ((axis != 0 && axis != 1) || begin > end || end > limit) {
    throw ShapeError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_string(v.shape()));
  }
  const std::size_t n = end - begin;
  Tensor out = axis == 0 ? Tensor::matrix(n, e.cols) : Tensor::matrix(e.rows, n);
  const Extent eo = extent(out);
  for (std::size_t r = 0; r < eo.rows; ++r)
    for (std::size_t c = 0; c < eo.cols; ++c)
      out(r, c) = axis == 0 ? v(begin + r, c) : v(r, begin + c);
  const std::size_t ia = a.id();
  return a.tape().record("slice", std::move(out), {ia}, [ia, axis, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint_ref(self);
    Tensor full(t.value(ia).shape(), 0.0);
    const Extent eg = extent(g);
    for (std::size_t r = 0; r < eg.rows; ++r)
      for (std::size_t c = 0; c < eg.cols; ++c) {
        if (axis == 0)
          full(begin + r, c) = g(r, c);
        else
          full(r, begin + c) = g(r, c);
      }
    t.accumulate(ia, full);
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

}  // namespace utvae::diff
