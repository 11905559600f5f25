#pragma once

// Dense tensors with reverse-mode automatic differentiation on an explicit
// tape. The tape is rebuilt every step (define-by-run); nodes are recorded
// in topological order so the backward pass is a single reverse sweep.
//
// Shape discipline: elementwise ops require identical shapes; the only
// broadcasts are row-vector affine (add_rowvec, layer_norm) and
// scalar-tensor division. Everything else is a shape error.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpma {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// A named, owning array: the storage form of parameters and gradients.
template <class T>
struct Array {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;

  Array() = default;
  Array(Shape s, std::vector<T> v)
      : shape(std::move(s)), data(std::make_shared<std::vector<T>>(std::move(v))) {
    if (shape_numel(shape) != data->size())
      throw std::invalid_argument("array data length does not match shape " + shape_str(shape));
  }
  static Array zeros(Shape s) {
    const std::size_t n = shape_numel(s);
    return Array(std::move(s), std::vector<T>(n, T(0)));
  }
  std::size_t numel() const { return data ? data->size() : 0; }
};

template <class T>
class Tape;

// Immutable tensor value, optionally recorded on a tape. `node < 0` means
// the tensor is a constant (no gradient flows into it).
template <class T>
struct Tensor {
  Shape shape;
  std::shared_ptr<const std::vector<T>> values;
  Tape<T>* tape = nullptr;
  int node = -1;

  std::size_t numel() const { return values ? values->size() : 0; }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  const T* data() const { return values->data(); }
  T scalar() const {
    if (numel() != 1) throw std::invalid_argument("tensor is not scalar: " + shape_str(shape));
    return (*values)[0];
  }
  T at(std::size_t i) const { return (*values)[i]; }
  T at(std::size_t r, std::size_t c) const { return (*values)[r * shape.at(1) + c]; }
};

template <class T>
Tensor<T> constant(Shape shape, std::vector<T> v) {
  if (shape_numel(shape) != v.size())
    throw std::invalid_argument("constant data length does not match shape " + shape_str(shape));
  Tensor<T> t;
  t.shape = std::move(shape);
  t.values = std::make_shared<const std::vector<T>>(std::move(v));
  return t;
}

template <class T>
Tensor<T> constant(const Array<T>& a) {
  Tensor<T> t;
  t.shape = a.shape;
  t.values = a.data;
  return t;
}

template <class T>
Tensor<T> zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return constant<T>(std::move(shape), std::vector<T>(n, T(0)));
}

template <class T>
Tensor<T> full(Shape shape, T v) {
  const std::size_t n = shape_numel(shape);
  return constant<T>(std::move(shape), std::vector<T>(n, v));
}

// Gradient tape. Append order is topological order: every op creates its
// result after its inputs, so parents always precede children.
template <class T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  // Registers a named leaf (parameter) sharing the array's storage.
  Tensor<T> leaf(const std::string& name, const Array<T>& a) {
    Tensor<T> t;
    t.shape = a.shape;
    t.values = a.data;
    t.tape = this;
    t.node = emit(a.numel(), BackFn{});
    leaves_.push_back({name, t.node, a.shape});
    return t;
  }

  int emit(std::size_t numel, BackFn back) {
    nodes_.push_back(Node{numel, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const std::vector<T>& grad(int node) const { return grads_[static_cast<std::size_t>(node)]; }

  std::vector<T>& grad_accum(int node, std::size_t numel) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(numel, T(0));
    return g;
  }

  bool has_grad(int node) const {
    return node >= 0 && static_cast<std::size_t>(node) < grads_.size() &&
           !grads_[static_cast<std::size_t>(node)].empty();
  }

  // Single reverse sweep from the scalar loss; each node is visited once.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape));
    if (loss.tape != this || loss.node < 0)
      throw std::invalid_argument("backward: loss is not recorded on this tape");
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(loss.node)] = {T(1)};
    for (int i = loss.node; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && !grads_[static_cast<std::size_t>(i)].empty()) n.back(*this, i);
    }
  }

  // Gradients of all named leaves (zeros where the loss did not reach).
  std::map<std::string, Array<T>> leaf_gradients() const {
    std::map<std::string, Array<T>> out;
    for (const auto& l : leaves_) {
      const auto& g = grads_[static_cast<std::size_t>(l.node)];
      out[l.name] = g.empty() ? Array<T>::zeros(l.shape) : Array<T>(l.shape, g);
    }
    return out;
  }

  Array<T> gradient_of(const Tensor<T>& t) const {
    if (t.tape != this || t.node < 0)
      throw std::invalid_argument("gradient_of: tensor is not recorded on this tape");
    const auto& g = grads_[static_cast<std::size_t>(t.node)];
    return g.empty() ? Array<T>::zeros(t.shape) : Array<T>(t.shape, g);
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::size_t numel;
    BackFn back;
  };
  struct LeafRec {
    std::string name;
    int node;
    Shape shape;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::vector<LeafRec> leaves_;
};

namespace detail {

template <class T>
Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> ts) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : ts) {
    if (!t->tape) continue;
    if (!tape)
      tape = t->tape;
    else if (tape != t->tape)
      throw std::invalid_argument("operands belong to different tapes");
  }
  return tape;
}

template <class T>
Tensor<T> result(Shape shape, std::shared_ptr<std::vector<T>> out, Tape<T>* tape,
                 typename Tape<T>::BackFn back) {
  Tensor<T> r;
  r.shape = std::move(shape);
  const std::size_t n = out->size();
  r.values = std::move(out);
  if (tape) {
    r.tape = tape;
    r.node = tape->emit(n, std::move(back));
  }
  return r;
}

template <class T>
void accum(Tape<T>& tp, int node, std::size_t numel, const std::vector<T>& delta) {
  if (node < 0) return;
  auto& g = tp.grad_accum(node, numel);
  for (std::size_t i = 0; i < numel; ++i) g[i] += delta[i];
}

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) +
                                ", got " + shape_str(s));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

// Iteration over independent 1-D slices of a 1-D or 2-D tensor along `axis`.
struct Slices {
  std::size_t count, len, base_stride, step;
};

inline Slices slices_along(const Shape& s, std::size_t axis) {
  if (s.size() == 1) {
    if (axis != 0) throw std::invalid_argument("axis out of range for rank-1 tensor");
    return {1, s[0], 0, 1};
  }
  if (s.size() == 2) {
    if (axis == 1) return {s[0], s[1], s[1], 1};  // per row
    if (axis == 0) return {s[1], s[0], 1, s[1]};  // per column
    throw std::invalid_argument("axis out of range for rank-2 tensor");
  }
  throw std::invalid_argument("softmax/reduction expects rank 1 or 2, got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T, class FwdFn, class BackMake>
Tensor<T> unary_op(const Tensor<T>& x, FwdFn fwd, BackMake mk, const char*) {
  const std::size_t n = x.numel();
  auto out = std::make_shared<std::vector<T>>(n);
  const T* xv = x.data();
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = fwd(xv[i]);
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) back = mk(out);
  return detail::result<T>(x.shape, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  const std::size_t n = a.numel();
  auto out = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = (*a.values)[i] + (*b.values)[i];
  Tape<T>* tp = detail::tape_of<T>({&a, &b});
  typename Tape<T>::BackFn back;
  if (tp) {
    const int pa = a.node, pb = b.node;
    back = [pa, pb, n](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      detail::accum(t, pa, n, g);
      detail::accum(t, pb, n, g);
    };
  }
  return detail::result<T>(a.shape, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  const std::size_t n = a.numel();
  auto out = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = (*a.values)[i] - (*b.values)[i];
  Tape<T>* tp = detail::tape_of<T>({&a, &b});
  typename Tape<T>::BackFn back;
  if (tp) {
    const int pa = a.node, pb = b.node;
    back = [pa, pb, n](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      detail::accum(t, pa, n, g);
      if (pb >= 0) {
        auto& gb = t.grad_accum(pb, n);
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    };
  }
  return detail::result<T>(a.shape, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  const std::size_t n = a.numel();
  auto out = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = (*a.values)[i] * (*b.values)[i];
  Tape<T>* tp = detail::tape_of<T>({&a, &b});
  typename Tape<T>::BackFn back;
  if (tp) {
    const int pa = a.node, pb = b.node;
    auto av = a.values, bv = b.values;
    back = [pa, pb, n, av, bv](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      if (pa >= 0) {
        auto& ga = t.grad_accum(pa, n);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (*bv)[i];
      }
      if (pb >= 0) {
        auto& gb = t.grad_accum(pb, n);
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * (*av)[i];
      }
    };
  }
  return detail::result<T>(a.shape, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  const std::size_t n = a.numel();
  auto out = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = (*a.values)[i] / (*b.values)[i];
  Tape<T>* tp = detail::tape_of<T>({&a, &b});
  typename Tape<T>::BackFn back;
  if (tp) {
    const int pa = a.node, pb = b.node;
    auto av = a.values, bv = b.values;
    back = [pa, pb, n, av, bv](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      if (pa >= 0) {
        auto& ga = t.grad_accum(pa, n);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / (*bv)[i];
      }
      if (pb >= 0) {
        auto& gb = t.grad_accum(pb, n);
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * (*av)[i] / ((*bv)[i] * (*bv)[i]);
      }
    };
  }
  return detail::result<T>(a.shape, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return unary_op(
      x, [c](T v) { return v * c; },
      [&x, c](const std::shared_ptr<std::vector<T>>&) -> typename Tape<T>::BackFn {
        const int p = x.node;
        const std::size_t n = x.numel();
        return [p, c, n](Tape<T>& t, int self) {
          const auto& g = t.grad(self);
          auto& gp = t.grad_accum(p, n);
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[i] * c;
        };
      },
      "scale");
}

template <class T>
Tensor<T> add_const(const Tensor<T>& x, T c) {
  return unary_op(
      x, [c](T v) { return v + c; },
      [&x](const std::shared_ptr<std::vector<T>>&) -> typename Tape<T>::BackFn {
        const int p = x.node;
        const std::size_t n = x.numel();
        return [p, n](Tape<T>& t, int self) { detail::accum(t, p, n, t.grad(self)); };
      },
      "add_const");
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <class T>
Tensor<T> exp_t(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return std::exp(v); },
      [&x](const std::shared_ptr<std::vector<T>>& out) -> typename Tape<T>::BackFn {
        const int p = x.node;
        const std::size_t n = x.numel();
        return [p, n, out](Tape<T>& t, int self) {
          const auto& g = t.grad(self);
          auto& gp = t.grad_accum(p, n);
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[i] * (*out)[i];
        };
      },
      "exp");
}

template <class T>
Tensor<T> log_t(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return std::log(v); },
      [&x](const std::shared_ptr<std::vector<T>>&) -> typename Tape<T>::BackFn {
        const int p = x.node;
        const std::size_t n = x.numel();
        auto xv = x.values;
        return [p, n, xv](Tape<T>& t, int self) {
          const auto& g = t.grad(self);
          auto& gp = t.grad_accum(p, n);
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[i] / (*xv)[i];
        };
      },
      "log");
}

template <class T>
Tensor<T> sqrt_t(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return std::sqrt(v); },
      [&x](const std::shared_ptr<std::vector<T>>& out) -> typename Tape<T>::BackFn {
        const int p = x.node;
        const std::size_t n = x.numel();
        return [p, n, out](Tape<T>& t, int self) {
          const auto& g = t.grad(self);
          auto& gp = t.grad_accum(p, n);
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[i] / (T(2) * (*out)[i]);
        };
      },
      "sqrt");
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary_op(
      x,
      [](T v) {
        return T(0.5) * v * (T(1) + T(std::erf(static_cast<double>(v) * inv_sqrt2)));
      },
      [&x](const std::shared_ptr<std::vector<T>>&) -> typename Tape<T>::BackFn {
        const int p = x.node;
        const std::size_t n = x.numel();
        auto xv = x.values;
        return [p, n, xv](Tape<T>& t, int self) {
          const auto& g = t.grad(self);
          auto& gp = t.grad_accum(p, n);
          for (std::size_t i = 0; i < n; ++i) {
            const double v = static_cast<double>((*xv)[i]);
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            gp[i] += g[i] * T(cdf + v * pdf);
          }
        };
      },
      "gelu");
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape, 2, "matmul lhs");
  detail::require_rank(b.shape, 2, "matmul rhs");
  if (a.shape[1] != b.shape[0])
    throw std::invalid_argument("matmul: inner extents disagree, " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  auto out = std::make_shared<std::vector<T>>(m * n, T(0));
  {
    const T* A = a.data();
    const T* B = b.data();
    T* O = out->data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T av = A[i * k + p];
        const T* Bp = B + p * n;
        T* Oi = O + i * n;
        for (std::size_t j = 0; j < n; ++j) Oi[j] += av * Bp[j];
      }
  }
  Tape<T>* tp = detail::tape_of<T>({&a, &b});
  typename Tape<T>::BackFn back;
  if (tp) {
    const int pa = a.node, pb = b.node;
    auto av = a.values, bv = b.values;
    back = [pa, pb, m, k, n, av, bv](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      if (pa >= 0) {
        auto& ga = t.grad_accum(pa, m * k);
        const T* B = bv->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T s = T(0);
            const T* Gi = g.data() + i * n;
            const T* Bp = B + p * n;
            for (std::size_t j = 0; j < n; ++j) s += Gi[j] * Bp[j];
            ga[i * k + p] += s;
          }
      }
      if (pb >= 0) {
        auto& gb = t.grad_accum(pb, k * n);
        const T* A = av->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T x = A[i * k + p];
            const T* Gi = g.data() + i * n;
            T* GBp = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) GBp[j] += x * Gi[j];
          }
      }
    };
  }
  return detail::result<T>({m, n}, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_rank(x.shape, 2, "transpose");
  const std::size_t r = x.shape[0], c = x.shape[1];
  auto out = std::make_shared<std::vector<T>>(r * c);
  const T* X = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) (*out)[j * r + i] = X[i * c + j];
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    back = [p, r, c](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, r * c);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[j * r + i];
    };
  }
  return detail::result<T>({c, r}, std::move(out), tp, std::move(back));
}

// x[R x C] + v[C] broadcast over rows (bias add).
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_rank(x.shape, 2, "add_rowvec lhs");
  detail::require_rank(v.shape, 1, "add_rowvec rhs");
  if (x.shape[1] != v.shape[0])
    throw std::invalid_argument("add_rowvec: width mismatch " + shape_str(x.shape) + " vs " +
                                shape_str(v.shape));
  const std::size_t r = x.shape[0], c = x.shape[1];
  auto out = std::make_shared<std::vector<T>>(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) (*out)[i * c + j] = (*x.values)[i * c + j] + (*v.values)[j];
  Tape<T>* tp = detail::tape_of<T>({&x, &v});
  typename Tape<T>::BackFn back;
  if (tp) {
    const int px = x.node, pv = v.node;
    back = [px, pv, r, c](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      detail::accum(t, px, r * c, g);
      if (pv >= 0) {
        auto& gv = t.grad_accum(pv, c);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
      }
    };
  }
  return detail::result<T>({r, c}, std::move(out), tp, std::move(back));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s += (*x.values)[i];
  auto out = std::make_shared<std::vector<T>>(1, s);
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    back = [p, n](Tape<T>& t, int self) {
      const T g = t.grad(self)[0];
      auto& gp = t.grad_accum(p, n);
      for (std::size_t i = 0; i < n; ++i) gp[i] += g;
    };
  }
  return detail::result<T>({1}, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / T(x.numel()));
}

// Collapse one axis of a 2-D tensor: axis 0 gives column sums [C], axis 1
// gives row sums [R].
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  detail::require_rank(x.shape, 2, "sum_axis");
  const auto sl = detail::slices_along(x.shape, axis == 0 ? 0 : 1);
  auto out = std::make_shared<std::vector<T>>(sl.count, T(0));
  const T* X = x.data();
  for (std::size_t s = 0; s < sl.count; ++s) {
    T acc = T(0);
    for (std::size_t i = 0; i < sl.len; ++i) acc += X[s * sl.base_stride + i * sl.step];
    (*out)[s] = acc;
  }
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    const std::size_t n = x.numel();
    back = [p, n, sl](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, n);
      for (std::size_t s = 0; s < sl.count; ++s)
        for (std::size_t i = 0; i < sl.len; ++i) gp[s * sl.base_stride + i * sl.step] += g[s];
    };
  }
  return detail::result<T>({sl.count}, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  const std::size_t len = axis == 0 ? x.shape.at(0) : x.shape.at(1);
  return scale(sum_axis(x, axis), T(1) / T(len));
}

// Column-wise max over rows; the subgradient routes to the first argmax.
template <class T>
Tensor<T> max_axis0(const Tensor<T>& x) {
  detail::require_rank(x.shape, 2, "max_axis0");
  const std::size_t r = x.shape[0], c = x.shape[1];
  if (r == 0) throw std::invalid_argument("max_axis0: empty tensor");
  auto out = std::make_shared<std::vector<T>>(c);
  auto arg = std::make_shared<std::vector<std::size_t>>(c, 0);
  const T* X = x.data();
  for (std::size_t j = 0; j < c; ++j) {
    T best = X[j];
    std::size_t bi = 0;
    for (std::size_t i = 1; i < r; ++i)
      if (X[i * c + j] > best) {
        best = X[i * c + j];
        bi = i;
      }
    (*out)[j] = best;
    (*arg)[j] = bi;
  }
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    back = [p, r, c, arg](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, r * c);
      for (std::size_t j = 0; j < c; ++j) gp[(*arg)[j] * c + j] += g[j];
    };
  }
  return detail::result<T>({c}, std::move(out), tp, std::move(back));
}

// ---------------------------------------------------------------------------
// Softmax family (max-subtraction stabilized)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto sl = detail::slices_along(x.shape, axis);
  auto out = std::make_shared<std::vector<T>>(x.numel());
  const T* X = x.data();
  T* O = out->data();
  for (std::size_t s = 0; s < sl.count; ++s) {
    T mx = X[s * sl.base_stride];
    for (std::size_t i = 1; i < sl.len; ++i)
      mx = std::max(mx, X[s * sl.base_stride + i * sl.step]);
    T denom = T(0);
    for (std::size_t i = 0; i < sl.len; ++i) {
      const T e = std::exp(X[s * sl.base_stride + i * sl.step] - mx);
      O[s * sl.base_stride + i * sl.step] = e;
      denom += e;
    }
    for (std::size_t i = 0; i < sl.len; ++i) O[s * sl.base_stride + i * sl.step] /= denom;
  }
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    const std::size_t n = x.numel();
    back = [p, n, sl, out](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, n);
      for (std::size_t s = 0; s < sl.count; ++s) {
        T dot = T(0);
        for (std::size_t i = 0; i < sl.len; ++i) {
          const std::size_t ix = s * sl.base_stride + i * sl.step;
          dot += g[ix] * (*out)[ix];
        }
        for (std::size_t i = 0; i < sl.len; ++i) {
          const std::size_t ix = s * sl.base_stride + i * sl.step;
          gp[ix] += (*out)[ix] * (g[ix] - dot);
        }
      }
    };
  }
  return detail::result<T>(x.shape, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto sl = detail::slices_along(x.shape, axis);
  auto out = std::make_shared<std::vector<T>>(x.numel());
  const T* X = x.data();
  T* O = out->data();
  for (std::size_t s = 0; s < sl.count; ++s) {
    T mx = X[s * sl.base_stride];
    for (std::size_t i = 1; i < sl.len; ++i)
      mx = std::max(mx, X[s * sl.base_stride + i * sl.step]);
    T denom = T(0);
    for (std::size_t i = 0; i < sl.len; ++i)
      denom += std::exp(X[s * sl.base_stride + i * sl.step] - mx);
    const T lse = mx + std::log(denom);
    for (std::size_t i = 0; i < sl.len; ++i) {
      const std::size_t ix = s * sl.base_stride + i * sl.step;
      O[ix] = X[ix] - lse;
    }
  }
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    const std::size_t n = x.numel();
    back = [p, n, sl, out](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, n);
      for (std::size_t s = 0; s < sl.count; ++s) {
        T gsum = T(0);
        for (std::size_t i = 0; i < sl.len; ++i) gsum += g[s * sl.base_stride + i * sl.step];
        for (std::size_t i = 0; i < sl.len; ++i) {
          const std::size_t ix = s * sl.base_stride + i * sl.step;
          gp[ix] += g[ix] - std::exp((*out)[ix]) * gsum;
        }
      }
    };
  }
  return detail::result<T>(x.shape, std::move(out), tp, std::move(back));
}

// log(sum(exp(x))) of a 1-D tensor, max-subtraction stabilized.
template <class T>
Tensor<T> logsumexp(const Tensor<T>& x) {
  detail::require_rank(x.shape, 1, "logsumexp");
  const std::size_t n = x.numel();
  if (n == 0) throw std::invalid_argument("logsumexp: empty tensor");
  T mx = (*x.values)[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, (*x.values)[i]);
  T denom = T(0);
  for (std::size_t i = 0; i < n; ++i) denom += std::exp((*x.values)[i] - mx);
  auto out = std::make_shared<std::vector<T>>(1, mx + std::log(denom));
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    auto xv = x.values;
    const T lse = (*out)[0];
    back = [p, n, xv, lse](Tape<T>& t, int self) {
      const T g = t.grad(self)[0];
      auto& gp = t.grad_accum(p, n);
      for (std::size_t i = 0; i < n; ++i) gp[i] += g * std::exp((*xv)[i] - lse);
    };
  }
  return detail::result<T>({1}, std::move(out), tp, std::move(back));
}

// ---------------------------------------------------------------------------
// Layer normalization over the trailing axis, biased variance.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() != 1 && x.rank() != 2)
    throw std::invalid_argument("layer_norm expects rank 1 or 2, got " + shape_str(x.shape));
  detail::require_rank(gain.shape, 1, "layer_norm gain");
  detail::require_rank(bias.shape, 1, "layer_norm bias");
  const std::size_t d = x.shape.back();
  if (gain.shape[0] != d || bias.shape[0] != d)
    throw std::invalid_argument("layer_norm: affine width mismatch");
  if (eps < T(0)) throw std::invalid_argument("layer_norm: eps must be >= 0");
  const std::size_t rows = x.rank() == 2 ? x.shape[0] : 1;
  auto out = std::make_shared<std::vector<T>>(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<T>>(rows);
  const T* X = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = X + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      (*out)[r * d + j] = (*gain.values)[j] * h + (*bias.values)[j];
    }
  }
  Tape<T>* tp = detail::tape_of<T>({&x, &gain, &bias});
  typename Tape<T>::BackFn back;
  if (tp) {
    const int px = x.node, pg = gain.node, pb = bias.node;
    auto gv = gain.values;
    back = [px, pg, pb, rows, d, xhat, inv_sigma, gv](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      if (pb >= 0) {
        auto& grad_b = t.grad_accum(pb, d);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) grad_b[j] += g[r * d + j];
      }
      if (pg >= 0) {
        auto& grad_g = t.grad_accum(pg, d);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) grad_g[j] += g[r * d + j] * (*xhat)[r * d + j];
      }
      if (px >= 0) {
        auto& gx = t.grad_accum(px, rows * d);
        for (std::size_t r = 0; r < rows; ++r) {
          // dxhat = g . gain; dx = (dxhat - mean(dxhat) - xhat * mean(dxhat . xhat)) / sigma
          T m1 = T(0), m2 = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * (*gv)[j];
            m1 += dh;
            m2 += dh * (*xhat)[r * d + j];
          }
          m1 /= T(d);
          m2 /= T(d);
          const T is = (*inv_sigma)[r];
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * (*gv)[j];
            gx[r * d + j] += (dh - m1 - (*xhat)[r * d + j] * m2) * is;
          }
        }
      }
    };
  }
  return detail::result<T>(x.shape, std::move(out), tp, std::move(back));
}

// ---------------------------------------------------------------------------
// Structural ops: concat, slicing, gather/scatter, stacking, reshape
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const auto& p : parts) detail::require_rank(p.shape, 2, "concat");
  if (axis > 1) throw std::invalid_argument("concat: axis out of range");
  const std::size_t fixed = axis == 0 ? parts[0].shape[1] : parts[0].shape[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t f = axis == 0 ? p.shape[1] : p.shape[0];
    if (f != fixed)
      throw std::invalid_argument("concat: mismatched extents along fixed axis");
    total += axis == 0 ? p.shape[0] : p.shape[1];
  }
  const std::size_t R = axis == 0 ? total : fixed;
  const std::size_t C = axis == 0 ? fixed : total;
  auto out = std::make_shared<std::vector<T>>(R * C);
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  Tape<T>* tp = nullptr;
  for (const auto& p : parts) {
    Tape<T>* q = detail::tape_of<T>({&p});
    if (q) {
      if (tp && tp != q) throw std::invalid_argument("concat: operands on different tapes");
      tp = q;
    }
  }
  std::vector<int> pnodes;
  std::vector<std::size_t> extents;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pr = p.shape[0], pc = p.shape[1];
    if (axis == 0) {
      std::copy(p.values->begin(), p.values->end(), out->begin() + off * C);
      off += pr;
    } else {
      for (std::size_t i = 0; i < pr; ++i)
        std::copy(p.values->begin() + i * pc, p.values->begin() + (i + 1) * pc,
                  out->begin() + i * C + off);
      off += pc;
    }
    pnodes.push_back(p.node);
    extents.push_back(axis == 0 ? pr : pc);
  }
  typename Tape<T>::BackFn back;
  if (tp) {
    back = [pnodes, extents, axis, R, C](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      std::size_t off2 = 0;
      for (std::size_t k = 0; k < pnodes.size(); ++k) {
        const std::size_t e = extents[k];
        if (pnodes[k] >= 0) {
          if (axis == 0) {
            auto& gp = t.grad_accum(pnodes[k], e * C);
            for (std::size_t i = 0; i < e * C; ++i) gp[i] += g[off2 * C + i];
          } else {
            auto& gp = t.grad_accum(pnodes[k], R * e);
            for (std::size_t i = 0; i < R; ++i)
              for (std::size_t j = 0; j < e; ++j) gp[i * e + j] += g[i * C + off2 + j];
          }
        }
        off2 += e;
      }
    };
  }
  return detail::result<T>({R, C}, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  detail::require_rank(x.shape, 2, "slice_cols");
  const std::size_t R = x.shape[0], C = x.shape[1];
  if (c0 >= c1 || c1 > C) throw std::invalid_argument("slice_cols: bad column range");
  const std::size_t W = c1 - c0;
  auto out = std::make_shared<std::vector<T>>(R * W);
  for (std::size_t i = 0; i < R; ++i)
    std::copy(x.values->begin() + i * C + c0, x.values->begin() + i * C + c1,
              out->begin() + i * W);
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    back = [p, R, C, c0, W](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, R * C);
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < W; ++j) gp[i * C + c0 + j] += g[i * W + j];
    };
  }
  return detail::result<T>({R, W}, std::move(out), tp, std::move(back));
}

// Gather rows by index list; also serves as embedding lookup.
template <class T>
Tensor<T> take_rows(const Tensor<T>& x, const std::vector<std::size_t>& idx) {
  detail::require_rank(x.shape, 2, "take_rows");
  const std::size_t R = x.shape[0], C = x.shape[1];
  for (std::size_t i : idx)
    if (i >= R)
      throw std::invalid_argument("take_rows: index " + std::to_string(i) + " out of range [0," +
                                  std::to_string(R) + ")");
  auto out = std::make_shared<std::vector<T>>(idx.size() * C);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(x.values->begin() + idx[k] * C, x.values->begin() + (idx[k] + 1) * C,
              out->begin() + k * C);
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    auto ix = std::make_shared<std::vector<std::size_t>>(idx);
    back = [p, R, C, ix](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, R * C);
      for (std::size_t k = 0; k < ix->size(); ++k)
        for (std::size_t j = 0; j < C; ++j) gp[(*ix)[k] * C + j] += g[k * C + j];
    };
  }
  return detail::result<T>({idx.size(), C}, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  return take_rows(table, ids);
}

// Place rows of x at the listed positions of an otherwise-zero [total x C]
// tensor. Indices must be distinct.
template <class T>
Tensor<T> scatter_rows(const Tensor<T>& x, const std::vector<std::size_t>& idx,
                       std::size_t total) {
  detail::require_rank(x.shape, 2, "scatter_rows");
  if (idx.size() != x.shape[0])
    throw std::invalid_argument("scatter_rows: index count does not match row count");
  const std::size_t C = x.shape[1];
  std::vector<char> seen(total, 0);
  for (std::size_t i : idx) {
    if (i >= total) throw std::invalid_argument("scatter_rows: index out of range");
    if (seen[i]) throw std::invalid_argument("scatter_rows: duplicate index");
    seen[i] = 1;
  }
  auto out = std::make_shared<std::vector<T>>(total * C, T(0));
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(x.values->begin() + k * C, x.values->begin() + (k + 1) * C,
              out->begin() + idx[k] * C);
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    auto ix = std::make_shared<std::vector<std::size_t>>(idx);
    back = [p, C, ix](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, ix->size() * C);
      for (std::size_t k = 0; k < ix->size(); ++k)
        for (std::size_t j = 0; j < C; ++j) gp[k * C + j] += g[(*ix)[k] * C + j];
    };
  }
  return detail::result<T>({total, C}, std::move(out), tp, std::move(back));
}

// Repeat a vector as n identical rows.
template <class T>
Tensor<T> tile_rows(const Tensor<T>& v, std::size_t n) {
  detail::require_rank(v.shape, 1, "tile_rows");
  const std::size_t C = v.shape[0];
  auto out = std::make_shared<std::vector<T>>(n * C);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(v.values->begin(), v.values->end(), out->begin() + i * C);
  Tape<T>* tp = detail::tape_of<T>({&v});
  typename Tape<T>::BackFn back;
  if (tp && v.node >= 0) {
    const int p = v.node;
    back = [p, n, C](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, C);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < C; ++j) gp[j] += g[i * C + j];
    };
  }
  return detail::result<T>({n, C}, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> take_diag(const Tensor<T>& x) {
  detail::require_rank(x.shape, 2, "take_diag");
  if (x.shape[0] != x.shape[1]) throw std::invalid_argument("take_diag: matrix not square");
  const std::size_t N = x.shape[0];
  auto out = std::make_shared<std::vector<T>>(N);
  for (std::size_t i = 0; i < N; ++i) (*out)[i] = (*x.values)[i * N + i];
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    back = [p, N](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, N * N);
      for (std::size_t i = 0; i < N; ++i) gp[i * N + i] += g[i];
    };
  }
  return detail::result<T>({N}, std::move(out), tp, std::move(back));
}

// out[r] = x[r][cols[r]]: one element per row (cross-entropy target pick).
template <class T>
Tensor<T> take_cols_per_row(const Tensor<T>& x, const std::vector<std::size_t>& cols) {
  detail::require_rank(x.shape, 2, "take_cols_per_row");
  const std::size_t R = x.shape[0], C = x.shape[1];
  if (cols.size() != R) throw std::invalid_argument("take_cols_per_row: need one column per row");
  for (std::size_t c : cols)
    if (c >= C) throw std::invalid_argument("take_cols_per_row: column index out of range");
  auto out = std::make_shared<std::vector<T>>(R);
  for (std::size_t i = 0; i < R; ++i) (*out)[i] = (*x.values)[i * C + cols[i]];
  Tape<T>* tp = detail::tape_of<T>({&x});
  typename Tape<T>::BackFn back;
  if (tp && x.node >= 0) {
    const int p = x.node;
    auto cc = std::make_shared<std::vector<std::size_t>>(cols);
    back = [p, R, C, cc](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      auto& gp = t.grad_accum(p, R * C);
      for (std::size_t i = 0; i < R; ++i) gp[i * C + (*cc)[i]] += g[i];
    };
  }
  return detail::result<T>({R}, std::move(out), tp, std::move(back));
}

// Stack 1-D tensors of equal length as the rows of a matrix.
template <class T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const std::size_t C = rows[0].shape.at(0);
  for (const auto& r : rows) {
    detail::require_rank(r.shape, 1, "stack_rows");
    if (r.shape[0] != C) throw std::invalid_argument("stack_rows: mismatched row lengths");
  }
  const std::size_t R = rows.size();
  auto out = std::make_shared<std::vector<T>>(R * C);
  Tape<T>* tp = nullptr;
  std::vector<int> pnodes(R, -1);
  for (std::size_t i = 0; i < R; ++i) {
    std::copy(rows[i].values->begin(), rows[i].values->end(), out->begin() + i * C);
    Tape<T>* q = detail::tape_of<T>({&rows[i]});
    if (q) {
      if (tp && tp != q) throw std::invalid_argument("stack_rows: operands on different tapes");
      tp = q;
    }
    pnodes[i] = rows[i].node;
  }
  typename Tape<T>::BackFn back;
  if (tp) {
    back = [pnodes, C](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      for (std::size_t i = 0; i < pnodes.size(); ++i)
        if (pnodes[i] >= 0) {
          auto& gp = t.grad_accum(pnodes[i], C);
          for (std::size_t j = 0; j < C; ++j) gp[j] += g[i * C + j];
        }
    };
  }
  return detail::result<T>({R, C}, std::move(out), tp, std::move(back));
}

// Assemble scalar tensors (row-major order) into an [R x C] matrix.
template <class T>
Tensor<T> stack_scalars(const std::vector<Tensor<T>>& xs, std::size_t R, std::size_t C) {
  if (xs.size() != R * C) throw std::invalid_argument("stack_scalars: element count mismatch");
  auto out = std::make_shared<std::vector<T>>(R * C);
  Tape<T>* tp = nullptr;
  std::vector<int> pnodes(R * C, -1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    (*out)[i] = xs[i].scalar();
    Tape<T>* q = detail::tape_of<T>({&xs[i]});
    if (q) {
      if (tp && tp != q) throw std::invalid_argument("stack_scalars: operands on different tapes");
      tp = q;
    }
    pnodes[i] = xs[i].node;
  }
  typename Tape<T>::BackFn back;
  if (tp) {
    back = [pnodes](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      for (std::size_t i = 0; i < pnodes.size(); ++i)
        if (pnodes[i] >= 0) t.grad_accum(pnodes[i], 1)[0] += g[i];
    };
  }
  return detail::result<T>({R, C}, std::move(out), tp, std::move(back));
}

// Shape change sharing storage; gradient is the identity.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape) + " -> " +
                                shape_str(shape));
  Tensor<T> r;
  r.shape = std::move(shape);
  r.values = x.values;
  r.tape = x.tape;
  if (x.tape && x.node >= 0) {
    const int p = x.node;
    const std::size_t n = x.numel();
    r.node = x.tape->emit(n, [p, n](Tape<T>& t, int self) {
      detail::accum(t, p, n, t.grad(self));
    });
  }
  return r;
}

// x / s where s is a scalar tensor (the one sanctioned scalar broadcast).
template <class T>
Tensor<T> div_by_scalar(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) throw std::invalid_argument("div_by_scalar: divisor is not scalar");
  const T sv = s.scalar();
  const std::size_t n = x.numel();
  auto out = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = (*x.values)[i] / sv;
  Tape<T>* tp = detail::tape_of<T>({&x, &s});
  typename Tape<T>::BackFn back;
  if (tp) {
    const int px = x.node, ps = s.node;
    auto xv = x.values;
    back = [px, ps, n, sv, xv](Tape<T>& t, int self) {
      const auto& g = t.grad(self);
      if (px >= 0) {
        auto& gx = t.grad_accum(px, n);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / sv;
      }
      if (ps >= 0) {
        T acc = T(0);
        for (std::size_t i = 0; i < n; ++i) acc -= g[i] * (*xv)[i] / (sv * sv);
        t.grad_accum(ps, 1)[0] += acc;
      }
    };
  }
  return detail::result<T>(x.shape, std::move(out), tp, std::move(back));
}

template <class T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  return sum_all(mul(a, b));
}

template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-12)) {
  return div_by_scalar(x, sqrt_t(add_const(dot(x, x), eps)));
}

}  // namespace mpma
