#pragma once

// Minimal dense-tensor engine with reverse-mode autodiff.
//
// Tensors are row-major value handles over shared storage. Differentiable
// ops are methods on Graph, which records a tape; Graph::backward replays
// it in reverse and accumulates (sums) gradients on shared inputs. The
// engine is single-threaded and bitwise deterministic for a fixed op
// sequence.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "utc/rng.hpp"

namespace utc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // same length as data once tracked, else empty
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl = std::make_shared<TensorImpl<T>>();
    t.impl->shape = std::move(shape);
    t.impl->data.assign(shape_numel(t.impl->shape), T(0));
    t.impl->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw TensorError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl = std::make_shared<TensorImpl<T>>();
    t.impl->shape = std::move(shape);
    t.impl->data = std::move(data);
    t.impl->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (T& v : t.impl->data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return impl != nullptr; }
  const Shape& shape() const { return impl->shape; }
  std::size_t size() const { return impl->data.size(); }
  std::size_t dim(std::size_t i) const { return impl->shape.at(i); }
  std::size_t rank() const { return impl->shape.size(); }
  std::vector<T>& data() { return impl->data; }
  const std::vector<T>& data() const { return impl->data; }
  std::vector<T>& grad() { return impl->grad; }
  const std::vector<T>& grad() const { return impl->grad; }
  bool requires_grad() const { return impl->requires_grad; }
  T item() const {
    if (size() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
    return impl->data[0];
  }

  void ensure_grad() {
    if (impl->grad.size() != impl->data.size()) impl->grad.assign(impl->data.size(), T(0));
  }
  void zero_grad() {
    if (!impl->grad.empty()) std::fill(impl->grad.begin(), impl->grad.end(), T(0));
  }
  bool tracked() const {
    return impl && (impl->requires_grad || !impl->grad.empty());
  }

  std::shared_ptr<TensorImpl<T>> impl;
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data())
    if (!std::isfinite(v)) throw TensorError(std::string("non-finite value produced by ") + op);
}

}  // namespace detail

// Records differentiable ops; owns the tape. One Graph per forward/backward
// pass. Parameters (leaf tensors with requires_grad) outlive graphs and keep
// their grad buffers across passes.
template <typename T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t tape_size() const { return tape_.size(); }

  // ---- elementwise ----

  Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    require_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (track(out, {a, b})) {
      record([a, b, out]() mutable {
        accumulate(a, out.grad(), [](T g) { return g; });
        accumulate(b, out.grad(), [](T g) { return g; });
      });
    }
    return finish(out, "add");
  }

  Tensor<T> sub(Tensor<T> a, Tensor<T> b) { return add(a, scale(b, T(-1))); }

  Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
    require_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (track(out, {a, b})) {
      record([a, b, out]() mutable {
        if (a.tracked()) {
          a.ensure_grad();
          for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i] * b.data()[i];
        }
        if (b.tracked()) {
          b.ensure_grad();
          for (std::size_t i = 0; i < b.size(); ++i) b.grad()[i] += out.grad()[i] * a.data()[i];
        }
      });
    }
    return finish(out, "mul");
  }

  Tensor<T> scale(Tensor<T> a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
    if (track(out, {a})) {
      record([a, out, c]() mutable {
        accumulate(a, out.grad(), [c](T g) { return g * c; });
      });
    }
    return finish(out, "scale");
  }

  // a + alpha * b, same shapes.
  Tensor<T> add_scaled(Tensor<T> a, Tensor<T> b, T alpha) {
    return add(a, scale(b, alpha));
  }

  // x: [..., n], bias: [n], broadcast over leading dims.
  Tensor<T> add_bias(Tensor<T> x, Tensor<T> bias) {
    std::size_t n = x.shape().back();
    if (bias.rank() != 1 || bias.dim(0) != n)
      throw TensorError("add_bias: bias shape " + shape_str(bias.shape()) +
                        " incompatible with " + shape_str(x.shape()));
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    std::size_t rows = x.size() / n;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j)
        out.data()[r * n + j] = x.data()[r * n + j] + bias.data()[j];
    if (track(out, {x, bias})) {
      record([x, bias, out, rows, n]() mutable {
        accumulate(x, out.grad(), [](T g) { return g; });
        if (bias.tracked()) {
          bias.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) bias.grad()[j] += out.grad()[r * n + j];
        }
      });
    }
    return finish(out, "add_bias");
  }

  Tensor<T> gelu(Tensor<T> x) {
    // tanh approximation, BERT-family convention.
    const T k0 = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T k1 = static_cast<T>(0.044715);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      T v = x.data()[i];
      out.data()[i] = T(0.5) * v * (T(1) + std::tanh(k0 * (v + k1 * v * v * v)));
    }
    if (track(out, {x})) {
      record([x, out, k0, k1]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.size(); ++i) {
          T v = x.data()[i];
          T u = k0 * (v + k1 * v * v * v);
          T th = std::tanh(u);
          T du = k0 * (T(1) + T(3) * k1 * v * v);
          T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
          x.grad()[i] += out.grad()[i] * d;
        }
      });
    }
    return finish(out, "gelu");
  }

  Tensor<T> sigmoid(Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      T v = x.data()[i];
      out.data()[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                : std::exp(v) / (T(1) + std::exp(v));
    }
    if (track(out, {x})) {
      record([x, out]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.size(); ++i) {
          T s = out.data()[i];
          x.grad()[i] += out.grad()[i] * s * (T(1) - s);
        }
      });
    }
    return finish(out, "sigmoid");
  }

  Tensor<T> log(Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::log(x.data()[i]);
    if (track(out, {x})) {
      record([x, out]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += out.grad()[i] / x.data()[i];
      });
    }
    return finish(out, "log");
  }

  // Inverted dropout; mask drawn from rng. p == 0 is the identity.
  Tensor<T> dropout(Tensor<T> x, T p, Rng& rng) {
    if (p <= T(0)) return x;
    if (p >= T(1)) throw TensorError("dropout: rate must be < 1");
    auto keep = std::make_shared<std::vector<T>>(x.size());
    T inv = T(1) / (T(1) - p);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      (*keep)[i] = rng.uniform() < static_cast<double>(p) ? T(0) : inv;
      out.data()[i] = x.data()[i] * (*keep)[i];
    }
    if (track(out, {x})) {
      record([x, out, keep]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += out.grad()[i] * (*keep)[i];
      });
    }
    return finish(out, "dropout");
  }

  // ---- shape ----

  Tensor<T> reshape(Tensor<T> x, Shape shape) {
    if (shape_numel(shape) != x.size())
      throw TensorError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor<T> out = Tensor<T>::from(std::move(shape), x.data());
    if (track(out, {x})) {
      record([x, out]() mutable {
        accumulate(x, out.grad(), [](T g) { return g; });
      });
    }
    return out;
  }

  Tensor<T> permute(Tensor<T> x, std::vector<std::size_t> perm) {
    if (perm.size() != x.rank()) throw TensorError("permute: rank mismatch");
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.dim(perm[i]);
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    auto in_strides = strides(x.shape());
    auto out_strides = strides(out_shape);
    std::size_t n = x.size();
    std::size_t r = x.rank();
    std::vector<std::size_t> idx(r);
    for (std::size_t o = 0; o < n; ++o) {
      std::size_t rem = o;
      std::size_t src = 0;
      for (std::size_t k = 0; k < r; ++k) {
        idx[k] = rem / out_strides[k];
        rem %= out_strides[k];
        src += idx[k] * in_strides[perm[k]];
      }
      out.data()[o] = x.data()[src];
    }
    if (track(out, {x})) {
      auto os = out_strides;
      auto is = in_strides;
      record([x, out, perm, os, is]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        std::size_t r = perm.size();
        for (std::size_t o = 0; o < out.size(); ++o) {
          std::size_t rem = o;
          std::size_t src = 0;
          for (std::size_t k = 0; k < r; ++k) {
            std::size_t ik = rem / os[k];
            rem %= os[k];
            src += ik * is[perm[k]];
          }
          x.grad()[src] += out.grad()[o];
        }
      });
    }
    return out;
  }

  // 2D only.
  Tensor<T> transpose(Tensor<T> x) {
    if (x.rank() != 2) throw TensorError("transpose: expects rank 2");
    return permute(x, {1, 0});
  }

  // rows [start, start+len) of a rank>=2 tensor's first axis (or a 1D slice).
  Tensor<T> slice_rows(Tensor<T> x, std::size_t start, std::size_t len) {
    if (x.rank() < 1 || start + len > x.dim(0))
      throw TensorError("slice_rows: range [" + std::to_string(start) + "," +
                        std::to_string(start + len) + ") out of bounds for " +
                        shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[0] = len;
    std::size_t row = x.size() / x.dim(0);
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    std::copy(x.data().begin() + start * row, x.data().begin() + (start + len) * row,
              out.data().begin());
    if (track(out, {x})) {
      record([x, out, start, row]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < out.size(); ++i) x.grad()[start * row + i] += out.grad()[i];
      });
    }
    return out;
  }

  Tensor<T> concat_rows(Tensor<T> a, Tensor<T> b) {
    if (a.rank() != b.rank() || a.rank() < 1)
      throw TensorError("concat_rows: rank mismatch");
    for (std::size_t k = 1; k < a.rank(); ++k)
      if (a.dim(k) != b.dim(k)) throw TensorError("concat_rows: trailing dims differ");
    Shape out_shape = a.shape();
    out_shape[0] = a.dim(0) + b.dim(0);
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
    if (track(out, {a, b})) {
      std::size_t na = a.size();
      record([a, b, out, na]() mutable {
        if (a.tracked()) {
          a.ensure_grad();
          for (std::size_t i = 0; i < na; ++i) a.grad()[i] += out.grad()[i];
        }
        if (b.tracked()) {
          b.ensure_grad();
          for (std::size_t i = 0; i < b.size(); ++i) b.grad()[i] += out.grad()[na + i];
        }
      });
    }
    return finish(out, "concat_rows");
  }

  // x: [n, d], idx into rows; output [idx.size(), d]. Backward scatter-adds.
  Tensor<T> gather_rows(Tensor<T> x, std::vector<std::size_t> idx) {
    if (x.rank() != 2) throw TensorError("gather_rows: expects rank 2");
    std::size_t d = x.dim(1);
    for (std::size_t i : idx)
      if (i >= x.dim(0)) throw TensorError("gather_rows: index out of range");
    Tensor<T> out = Tensor<T>::zeros({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy(x.data().begin() + idx[r] * d, x.data().begin() + (idx[r] + 1) * d,
                out.data().begin() + r * d);
    if (track(out, {x})) {
      record([x, out, idx, d]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (std::size_t j = 0; j < d; ++j) x.grad()[idx[r] * d + j] += out.grad()[r * d + j];
      });
    }
    return out;
  }

  // table: [vocab, d]; ids -> [ids.size(), d].
  Tensor<T> embedding(Tensor<T> table, const std::vector<int>& ids) {
    std::vector<std::size_t> idx(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.dim(0))
        throw TensorError("embedding: id " + std::to_string(ids[i]) + " out of vocabulary");
      idx[i] = static_cast<std::size_t>(ids[i]);
    }
    return gather_rows(table, idx);
  }

  Tensor<T> stack_scalars(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw TensorError("stack_scalars: empty input");
    Tensor<T> out = Tensor<T>::zeros({xs.size()});
    for (std::size_t i = 0; i < xs.size(); ++i) out.data()[i] = xs[i].item();
    bool any = false;
    for (const auto& x : xs) any = any || x.tracked();
    if (grad_enabled_ && any) {
      out.ensure_grad();
      auto copies = xs;
      record([copies, out]() mutable {
        for (std::size_t i = 0; i < copies.size(); ++i)
          if (copies[i].tracked()) {
            copies[i].ensure_grad();
            copies[i].grad()[0] += out.grad()[i];
          }
      });
    }
    return finish(out, "stack_scalars");
  }

  // ---- linear algebra ----

  // a: [..., m, k] x w: [k, n] -> [..., m, n]; leading dims flattened.
  Tensor<T> matmul(Tensor<T> a, Tensor<T> w) {
    if (a.rank() < 2 || w.rank() != 2 || a.shape().back() != w.dim(0))
      throw TensorError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(w.shape()));
    std::size_t k = w.dim(0), n = w.dim(1);
    std::size_t m = a.size() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    detail::ECMap<T> A(a.data().data(), m, k);
    detail::ECMap<T> W(w.data().data(), k, n);
    detail::EMap<T> O(out.data().data(), m, n);
    O.noalias() = A * W;
    if (track(out, {a, w})) {
      record([a, w, out, m, k, n]() mutable {
        detail::ECMap<T> A(a.data().data(), m, k);
        detail::ECMap<T> W(w.data().data(), k, n);
        detail::ECMap<T> G(out.grad().data(), m, n);
        if (a.tracked()) {
          a.ensure_grad();
          detail::EMap<T> GA(a.grad().data(), m, k);
          GA.noalias() += G * W.transpose();
        }
        if (w.tracked()) {
          w.ensure_grad();
          detail::EMap<T> GW(w.grad().data(), k, n);
          GW.noalias() += A.transpose() * G;
        }
      });
    }
    return finish(out, "matmul");
  }

  // Batched matmul: a [..., m, k] x b [..., k, n] with identical leading dims.
  Tensor<T> bmm(Tensor<T> a, Tensor<T> b) {
    if (a.rank() != b.rank() || a.rank() < 2)
      throw TensorError("bmm: rank mismatch");
    for (std::size_t i = 0; i + 2 < a.rank(); ++i)
      if (a.dim(i) != b.dim(i)) throw TensorError("bmm: leading dims differ");
    std::size_t m = a.dim(a.rank() - 2), k = a.shape().back();
    if (b.dim(b.rank() - 2) != k) throw TensorError("bmm: inner dims differ");
    std::size_t n = b.shape().back();
    std::size_t batch = a.size() / (m * k);
    Shape out_shape = a.shape();
    out_shape[out_shape.size() - 2] = m;
    out_shape.back() = n;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      detail::ECMap<T> A(a.data().data() + bi * m * k, m, k);
      detail::ECMap<T> B(b.data().data() + bi * k * n, k, n);
      detail::EMap<T> O(out.data().data() + bi * m * n, m, n);
      O.noalias() = A * B;
    }
    if (track(out, {a, b})) {
      record([a, b, out, batch, m, k, n]() mutable {
        for (std::size_t bi = 0; bi < batch; ++bi) {
          detail::ECMap<T> A(a.data().data() + bi * m * k, m, k);
          detail::ECMap<T> B(b.data().data() + bi * k * n, k, n);
          detail::ECMap<T> G(out.grad().data() + bi * m * n, m, n);
          if (a.tracked()) {
            a.ensure_grad();
            detail::EMap<T> GA(a.grad().data() + bi * m * k, m, k);
            GA.noalias() += G * B.transpose();
          }
          if (b.tracked()) {
            b.ensure_grad();
            detail::EMap<T> GB(b.grad().data() + bi * k * n, k, n);
            GB.noalias() += A.transpose() * G;
          }
        }
      });
    }
    return finish(out, "bmm");
  }

  Tensor<T> dot(Tensor<T> u, Tensor<T> v) {
    if (u.rank() != 1 || v.rank() != 1 || u.size() != v.size())
      throw TensorError("dot: expects equal-length vectors");
    T s = T(0);
    for (std::size_t i = 0; i < u.size(); ++i) s += u.data()[i] * v.data()[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    if (track(out, {u, v})) {
      record([u, v, out]() mutable {
        T g = out.grad()[0];
        if (u.tracked()) {
          u.ensure_grad();
          for (std::size_t i = 0; i < u.size(); ++i) u.grad()[i] += g * v.data()[i];
        }
        if (v.tracked()) {
          v.ensure_grad();
          for (std::size_t i = 0; i < v.size(); ++i) v.grad()[i] += g * u.data()[i];
        }
      });
    }
    return finish(out, "dot");
  }

  // cos(u, v); errors on zero-norm inputs. Value lies in [-1, 1].
  Tensor<T> cosine_similarity(Tensor<T> u, Tensor<T> v) {
    if (u.rank() != 1 || v.rank() != 1 || u.size() != v.size())
      throw TensorError("cosine_similarity: expects equal-length vectors");
    T nu = T(0), nv = T(0), d = T(0);
    for (std::size_t i = 0; i < u.size(); ++i) {
      nu += u.data()[i] * u.data()[i];
      nv += v.data()[i] * v.data()[i];
      d += u.data()[i] * v.data()[i];
    }
    if (nu == T(0) || nv == T(0)) throw TensorError("cosine_similarity: zero-norm input");
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    T c = d / (nu * nv);
    Tensor<T> out = Tensor<T>::scalar(c);
    if (track(out, {u, v})) {
      record([u, v, out, nu, nv, c]() mutable {
        T g = out.grad()[0];
        if (u.tracked()) {
          u.ensure_grad();
          for (std::size_t i = 0; i < u.size(); ++i)
            u.grad()[i] += g * (v.data()[i] / (nu * nv) - c * u.data()[i] / (nu * nu));
        }
        if (v.tracked()) {
          v.ensure_grad();
          for (std::size_t i = 0; i < v.size(); ++i)
            v.grad()[i] += g * (u.data()[i] / (nu * nv) - c * v.data()[i] / (nv * nv));
        }
      });
    }
    return finish(out, "cosine_similarity");
  }

  // ---- reductions ----

  // [n, d] -> [d], arithmetic mean over rows.
  Tensor<T> mean_rows(Tensor<T> x) {
    if (x.rank() != 2 || x.dim(0) == 0) throw TensorError("mean_rows: expects nonempty [n, d]");
    std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros({d});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) out.data()[j] += x.data()[r * d + j];
    for (std::size_t j = 0; j < d; ++j) out.data()[j] /= static_cast<T>(n);
    if (track(out, {x})) {
      record([x, out, n, d]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < d; ++j)
            x.grad()[r * d + j] += out.grad()[j] / static_cast<T>(n);
      });
    }
    return finish(out, "mean_rows");
  }

  Tensor<T> mean_all(Tensor<T> x) {
    if (x.size() == 0) throw TensorError("mean_all: empty tensor");
    T s = T(0);
    for (T v : x.data()) s += v;
    Tensor<T> out = Tensor<T>::scalar(s / static_cast<T>(x.size()));
    if (track(out, {x})) {
      record([x, out]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        T g = out.grad()[0] / static_cast<T>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += g;
      });
    }
    return finish(out, "mean_all");
  }

  Tensor<T> sum_all(Tensor<T> x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    Tensor<T> out = Tensor<T>::scalar(s);
    if (track(out, {x})) {
      record([x, out]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        T g = out.grad()[0];
        for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += g;
      });
    }
    return finish(out, "sum_all");
  }

  // 1D -> scalar, numerically stabilized.
  Tensor<T> logsumexp(Tensor<T> x) {
    if (x.rank() != 1 || x.size() == 0) throw TensorError("logsumexp: expects nonempty vector");
    T mx = x.data()[0];
    for (T v : x.data()) mx = std::max(mx, v);
    T s = T(0);
    for (T v : x.data()) s += std::exp(v - mx);
    Tensor<T> out = Tensor<T>::scalar(mx + std::log(s));
    if (track(out, {x})) {
      record([x, out, mx, s]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        T g = out.grad()[0];
        for (std::size_t i = 0; i < x.size(); ++i)
          x.grad()[i] += g * std::exp(x.data()[i] - mx) / s;
      });
    }
    return finish(out, "logsumexp");
  }

  // ---- normalization / softmax ----

  // Numerically stabilized softmax along `axis`. -inf logits get exact
  // zero weight; each line must keep at least one finite entry.
  Tensor<T> softmax(Tensor<T> x, std::size_t axis) {
    if (axis >= x.rank())
      throw TensorError("softmax: axis " + std::to_string(axis) + " invalid for " +
                        shape_str(x.shape()));
    for (T v : x.data())
      if (std::isnan(v) || v == std::numeric_limits<T>::infinity())
        throw TensorError("softmax: non-finite input");
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto st = strides(x.shape());
    std::size_t len = x.dim(axis);
    std::size_t stride = st[axis];
    std::size_t lines = x.size() / len;
    auto line_base = [stride, len](std::size_t l) {
      std::size_t outer = l / stride;
      std::size_t inner = l % stride;
      return outer * stride * len + inner;
    };
    for (std::size_t l = 0; l < lines; ++l) {
      std::size_t base = line_base(l);
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x.data()[base + i * stride]);
      if (mx == -std::numeric_limits<T>::infinity())
        throw TensorError("softmax: all entries of a line are -inf");
      T s = T(0);
      for (std::size_t i = 0; i < len; ++i) {
        T e = std::exp(x.data()[base + i * stride] - mx);
        out.data()[base + i * stride] = e;
        s += e;
      }
      for (std::size_t i = 0; i < len; ++i) out.data()[base + i * stride] /= s;
    }
    if (track(out, {x})) {
      record([x, out, len, stride, lines, line_base]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        for (std::size_t l = 0; l < lines; ++l) {
          std::size_t base = line_base(l);
          T dotgy = T(0);
          for (std::size_t i = 0; i < len; ++i)
            dotgy += out.grad()[base + i * stride] * out.data()[base + i * stride];
          for (std::size_t i = 0; i < len; ++i)
            x.grad()[base + i * stride] +=
                out.data()[base + i * stride] * (out.grad()[base + i * stride] - dotgy);
        }
      });
    }
    return finish(out, "softmax");
  }

  // Softmax over the last axis with a boolean keep-mask per line entry.
  // Masked-out entries get exactly zero weight and zero gradient, so the
  // output at kept positions is bitwise independent of masked content.
  // x: [..., rows, len]; mask: rows*len entries (broadcast over leading dims).
  Tensor<T> masked_softmax_last(Tensor<T> x, std::shared_ptr<const std::vector<std::uint8_t>> keep) {
    std::size_t len = x.shape().back();
    std::size_t lines = x.size() / len;
    if (keep->size() != x.size() && keep->size() != 0)
      if (x.size() % keep->size() != 0)
        throw TensorError("masked_softmax_last: mask size mismatch");
    std::size_t period = keep->empty() ? 0 : keep->size();
    auto kept = [&keep, period](std::size_t flat) {
      return period == 0 ? true : (*keep)[flat % period] != 0;
    };
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t l = 0; l < lines; ++l) {
      std::size_t base = l * len;
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t i = 0; i < len; ++i)
        if (kept(base + i)) {
          mx = std::max(mx, x.data()[base + i]);
          any = true;
        }
      if (!any) throw TensorError("masked_softmax_last: fully masked line");
      T s = T(0);
      for (std::size_t i = 0; i < len; ++i) {
        if (!kept(base + i)) continue;
        T e = std::exp(x.data()[base + i] - mx);
        out.data()[base + i] = e;
        s += e;
      }
      for (std::size_t i = 0; i < len; ++i)
        if (kept(base + i)) out.data()[base + i] /= s;
    }
    if (track(out, {x})) {
      record([x, out, keep, period, lines, len]() mutable {
        if (!x.tracked()) return;
        x.ensure_grad();
        auto kept = [&keep, period](std::size_t flat) {
          return period == 0 ? true : (*keep)[flat % period] != 0;
        };
        for (std::size_t l = 0; l < lines; ++l) {
          std::size_t base = l * len;
          T dotgy = T(0);
          for (std::size_t i = 0; i < len; ++i)
            dotgy += out.grad()[base + i] * out.data()[base + i];
          for (std::size_t i = 0; i < len; ++i)
            if (kept(base + i))
              x.grad()[base + i] += out.data()[base + i] * (out.grad()[base + i] - dotgy);
        }
      });
    }
    return finish(out, "masked_softmax_last");
  }

  // Per-row (last axis) normalization then affine: gain * xhat + bias.
  Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias, T eps) {
    std::size_t n = x.shape().back();
    if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n)
      throw TensorError("layer_norm: gain/bias must match last-axis size " + std::to_string(n));
    std::size_t rows = x.size() / n;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_sigma = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x.data().data() + r * n;
      T mu = T(0);
      for (std::size_t j = 0; j < n; ++j) mu += xr[j];
      mu /= static_cast<T>(n);
      T var = T(0);
      for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<T>(n);
      T is = T(1) / std::sqrt(var + eps);
      (*inv_sigma)[r] = is;
      for (std::size_t j = 0; j < n; ++j) {
        T xh = (xr[j] - mu) * is;
        (*xhat)[r * n + j] = xh;
        out.data()[r * n + j] = gain.data()[j] * xh + bias.data()[j];
      }
    }
    if (track(out, {x, gain, bias})) {
      record([x, gain, bias, out, xhat, inv_sigma, rows, n]() mutable {
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = out.grad().data() + r * n;
          const T* xh = xhat->data() + r * n;
          if (gain.tracked()) {
            gain.ensure_grad();
            for (std::size_t j = 0; j < n; ++j) gain.grad()[j] += g[j] * xh[j];
          }
          if (bias.tracked()) {
            bias.ensure_grad();
            for (std::size_t j = 0; j < n; ++j) bias.grad()[j] += g[j];
          }
          if (x.tracked()) {
            x.ensure_grad();
            T m1 = T(0), m2 = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              T dxh = g[j] * gain.data()[j];
              m1 += dxh;
              m2 += dxh * xh[j];
            }
            m1 /= static_cast<T>(n);
            m2 /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              T dxh = g[j] * gain.data()[j];
              x.grad()[r * n + j] += (dxh - m1 - xh[j] * m2) * (*inv_sigma)[r];
            }
          }
        }
      });
    }
    return finish(out, "layer_norm");
  }

  // ---- losses as primitives ----

  // logits: [m, V]; targets: m class ids; mean negative log-likelihood.
  Tensor<T> cross_entropy_rows(Tensor<T> logits, const std::vector<int>& targets) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size())
      throw TensorError("cross_entropy_rows: logits " + shape_str(logits.shape()) +
                        " vs " + std::to_string(targets.size()) + " targets");
    std::size_t m = logits.dim(0), V = logits.dim(1);
    auto probs = std::make_shared<std::vector<T>>(logits.size());
    T total = T(0);
    for (std::size_t r = 0; r < m; ++r) {
      const T* row = logits.data().data() + r * V;
      int t = targets[r];
      if (t < 0 || static_cast<std::size_t>(t) >= V)
        throw TensorError("cross_entropy_rows: target out of range");
      T mx = row[0];
      for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, row[j]);
      T s = T(0);
      for (std::size_t j = 0; j < V; ++j) {
        T e = std::exp(row[j] - mx);
        (*probs)[r * V + j] = e;
        s += e;
      }
      for (std::size_t j = 0; j < V; ++j) (*probs)[r * V + j] /= s;
      total += mx + std::log(s) - row[t];
    }
    Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(m));
    if (track(out, {logits})) {
      record([logits, out, probs, targets, m, V]() mutable {
        if (!logits.tracked()) return;
        logits.ensure_grad();
        T g = out.grad()[0] / static_cast<T>(m);
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t j = 0; j < V; ++j)
            logits.grad()[r * V + j] += g * (*probs)[r * V + j];
          logits.grad()[r * V + targets[r]] -= g;
        }
      });
    }
    return finish(out, "cross_entropy_rows");
  }

  // Mean squared error over all elements.
  Tensor<T> mse(Tensor<T> pred, Tensor<T> target) {
    require_same_shape(pred, target, "mse");
    T s = T(0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      T d = pred.data()[i] - target.data()[i];
      s += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(s / static_cast<T>(pred.size()));
    if (track(out, {pred, target})) {
      record([pred, target, out]() mutable {
        T g = T(2) * out.grad()[0] / static_cast<T>(pred.size());
        if (pred.tracked()) {
          pred.ensure_grad();
          for (std::size_t i = 0; i < pred.size(); ++i)
            pred.grad()[i] += g * (pred.data()[i] - target.data()[i]);
        }
        if (target.tracked()) {
          target.ensure_grad();
          for (std::size_t i = 0; i < target.size(); ++i)
            target.grad()[i] -= g * (pred.data()[i] - target.data()[i]);
        }
      });
    }
    return finish(out, "mse");
  }

  // ---- backward ----

  void backward(Tensor<T> loss) {
    if (!loss.defined() || loss.size() != 1)
      throw TensorError("backward: loss must be a scalar tensor");
    if (tape_.empty()) throw TensorError("backward: tape is empty (detached graph)");
    if (!loss.tracked())
      throw TensorError("backward: loss is not connected to any tracked input");
    loss.ensure_grad();
    loss.grad()[0] += T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  }

 private:
  static std::vector<std::size_t> strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
  }

  static void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
      throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }

  template <typename F>
  static void accumulate(Tensor<T>& t, const std::vector<T>& g, F f) {
    if (!t.tracked()) return;
    t.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) t.grad()[i] += f(g[i]);
  }

  bool track(Tensor<T>& out, std::initializer_list<Tensor<T>> inputs) {
    if (!grad_enabled_) return false;
    bool any = false;
    for (const auto& t : inputs) any = any || t.tracked();
    if (any) out.ensure_grad();
    return any;
  }

  void record(std::function<void()> op) { tape_.push_back(std::move(op)); }

  Tensor<T> finish(Tensor<T> out, const char* op) {
    detail::check_finite(out, op);
    return out;
  }

  bool grad_enabled_;
  std::vector<std::function<void()>> tape_;
};

// Central finite differences of f at x, used as the independent gradient
// oracle in tests. f must be a pure function of the data vector.
template <typename T, typename F>
std::vector<T> finite_difference(F f, std::vector<T> x, T h = T(1e-5)) {
  std::vector<T> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    T orig = x[i];
    x[i] = orig + h;
    T fp = f(x);
    x[i] = orig - h;
    T fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (T(2) * h);
  }
  return g;
}

}  // namespace utc
