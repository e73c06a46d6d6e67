#pragma once

#include <cmath>

#include "dunet/tensor.hpp"

namespace dunet {

namespace detail {

// Broadcast check: equal rank, each dim equal or 1 on one side.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  require(a.size() == b.size(),
          "elementwise op rank mismatch: " + shape_str(a) + " vs " +
              shape_str(b));
  Shape out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    require(a[i] == b[i] || a[i] == 1 || b[i] == 1,
            "elementwise op dim " + std::to_string(i) + " mismatch: " +
                shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(a[i], b[i]);
  }
  return out;
}

inline std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

// Maps a flat index in `out` to a flat index in an operand broadcast to it.
struct BcastIndexer {
  std::vector<int64_t> out_strides, op_strides;
  BcastIndexer(const Shape& out, const Shape& op) {
    out_strides = strides_of(out);
    auto st = strides_of(op);
    op_strides.resize(op.size());
    for (size_t i = 0; i < op.size(); ++i)
      op_strides[i] = (op[i] == 1 && out[i] != 1) ? 0 : st[i];
  }
  int64_t operator()(int64_t flat) const {
    int64_t idx = 0;
    for (size_t i = 0; i < out_strides.size(); ++i) {
      int64_t c = flat / out_strides[i];
      flat -= c * out_strides[i];
      idx += c * op_strides[i];
    }
    return idx;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same rank; dims equal or 1)
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename BwdF>
Var<T> binary_ew(const Var<T>& a, const Var<T>& b, FwdF f, BwdF df) {
  // Scalar-vs-tensor shorthand: a 1-element operand matches any shape.
  Shape out_shape;
  if (a.size() == 1 && a.ndim() != b.ndim())
    out_shape = b.shape();
  else if (b.size() == 1 && a.ndim() != b.ndim())
    out_shape = a.shape();
  else
    out_shape = detail::broadcast_shape(a.shape(), b.shape());

  const int64_t n = numel(out_shape);
  const bool a_scalar = a.size() == 1, b_scalar = b.size() == 1;
  detail::BcastIndexer ia(out_shape, a_scalar ? Shape(out_shape.size(), 1)
                                              : a.shape());
  detail::BcastIndexer ib(out_shape, b_scalar ? Shape(out_shape.size(), 1)
                                              : b.shape());
  std::vector<T> v(n);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int64_t i = 0; i < n; ++i) v[i] = f(av[ia(i)], bv[ib(i)]);

  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(out_shape, std::move(v), {an, bn},
                    [an, bn, ia, ib, df, n](Node<T>& o) {
                      for (int64_t i = 0; i < n; ++i) {
                        T g = o.grad[i];
                        T da, db;
                        df(an->value[ia(i)], bn->value[ib(i)], g, da, db);
                        if (an->requires_grad) an->grad[ia(i)] += da;
                        if (bn->requires_grad) bn->grad[ib(i)] += db;
                      }
                    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary_ew(
      a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = g;
      });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary_ew(
      a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = -g;
      });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary_ew(
      a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g * y;
        db = g * x;
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename BwdF>
Var<T> unary_ew(const Var<T>& x, FwdF f, BwdF df) {
  const int64_t n = x.size();
  std::vector<T> v(n);
  const auto& xv = x.data();
  for (int64_t i = 0; i < n; ++i) v[i] = f(xv[i]);
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(v), {xn}, [xn, df, n](Node<T>& o) {
    for (int64_t i = 0; i < n; ++i)
      xn->grad[i] += o.grad[i] * df(xn->value[i], o.value[i]);
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary_ew(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary_ew(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  // Exact erf form.
  const T inv_sqrt2 = T(0.70710678118654752440);
  const T inv_sqrt2pi = T(0.39894228040143267794);
  return unary_ew(
      x,
      [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [=](T v, T) {
        T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
  return unary_ew(
      x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return scale(x, T(-1));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape new_shape) {
  require(numel(new_shape) == x.size(),
          "reshape to " + shape_str(new_shape) + " from " +
              shape_str(x.shape()) + ": element count differs");
  auto xn = x.node();
  std::vector<T> v = x.data();
  const int64_t n = x.size();
  return make_op<T>(std::move(new_shape), std::move(v), {xn},
                    [xn, n](Node<T>& o) {
                      for (int64_t i = 0; i < n; ++i) xn->grad[i] += o.grad[i];
                    });
}

template <typename T>
Var<T> transpose(const Var<T>& x, const std::vector<int>& perm) {
  require(perm.size() == x.ndim(), "transpose perm rank mismatch");
  Shape out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape()[perm[i]];
  auto in_st = detail::strides_of(x.shape());
  auto out_st = detail::strides_of(out_shape);
  const int64_t n = x.size();
  // map: flat out index -> flat in index
  std::vector<int64_t> src_stride(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) src_stride[i] = in_st[perm[i]];
  std::vector<T> v(n);
  const auto& xv = x.data();
  auto map = [&](int64_t flat) {
    int64_t idx = 0;
    for (size_t i = 0; i < out_st.size(); ++i) {
      int64_t c = flat / out_st[i];
      flat -= c * out_st[i];
      idx += c * src_stride[i];
    }
    return idx;
  };
  for (int64_t i = 0; i < n; ++i) v[i] = xv[map(i)];
  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(v), {xn},
                    [xn, out_st, src_stride, n](Node<T>& o) {
                      for (int64_t i = 0; i < n; ++i) {
                        int64_t flat = i, idx = 0;
                        for (size_t d = 0; d < out_st.size(); ++d) {
                          int64_t c = flat / out_st[d];
                          flat -= c * out_st[d];
                          idx += c * src_stride[d];
                        }
                        xn->grad[idx] += o.grad[i];
                      }
                    });
}

template <typename T>
Var<T> slice_axis(const Var<T>& x, int axis, int64_t start, int64_t len) {
  require(axis >= 0 && axis < static_cast<int>(x.ndim()), "slice axis range");
  require(start >= 0 && start + len <= x.shape()[axis],
          "slice [" + std::to_string(start) + "," +
              std::to_string(start + len) + ") out of bounds on axis " +
              std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.shape()[i];
  const int64_t ax = x.shape()[axis];
  std::vector<T> v(numel(out_shape));
  const auto& xv = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t a = 0; a < len; ++a)
      std::copy_n(&xv[(o * ax + start + a) * inner], inner,
                  &v[(o * len + a) * inner]);
  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(v), {xn},
                    [xn, outer, inner, ax, start, len](Node<T>& o) {
                      for (int64_t ou = 0; ou < outer; ++ou)
                        for (int64_t a = 0; a < len; ++a) {
                          const T* g = &o.grad[(ou * len + a) * inner];
                          T* dst = &xn->grad[(ou * ax + start + a) * inner];
                          for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                        }
                    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  require(!xs.empty(), "concat of empty list");
  Shape out_shape = xs[0].shape();
  int64_t ax_total = 0;
  for (const auto& x : xs) {
    require(x.ndim() == xs[0].ndim(), "concat rank mismatch");
    for (size_t i = 0; i < x.ndim(); ++i)
      if (static_cast<int>(i) != axis)
        require(x.shape()[i] == xs[0].shape()[i],
                "concat dim " + std::to_string(i) + " mismatch: " +
                    shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
    ax_total += x.shape()[axis];
  }
  out_shape[axis] = ax_total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];

  std::vector<T> v(numel(out_shape));
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<int64_t> ax_sizes;
  for (const auto& x : xs) {
    parents.push_back(x.node());
    ax_sizes.push_back(x.shape()[axis]);
  }
  for (int64_t o = 0; o < outer; ++o) {
    int64_t off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
      const auto& xv = xs[k].data();
      std::copy_n(&xv[o * ax_sizes[k] * inner], ax_sizes[k] * inner,
                  &v[(o * ax_total + off) * inner]);
      off += ax_sizes[k];
    }
  }
  return make_op<T>(std::move(out_shape), std::move(v), parents,
                    [parents, ax_sizes, ax_total, outer, inner](Node<T>& o) {
                      for (int64_t ou = 0; ou < outer; ++ou) {
                        int64_t off = 0;
                        for (size_t k = 0; k < parents.size(); ++k) {
                          auto& p = *parents[k];
                          if (p.requires_grad) {
                            const T* g = &o.grad[(ou * ax_total + off) * inner];
                            T* dst = &p.grad[ou * ax_sizes[k] * inner];
                            for (int64_t i = 0; i < ax_sizes[k] * inner; ++i)
                              dst[i] += g[i];
                          }
                          off += ax_sizes[k];
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  auto xn = x.node();
  const int64_t n = x.size();
  return make_op<T>({1}, {s}, {xn}, [xn, n](Node<T>& o) {
    for (int64_t i = 0; i < n; ++i) xn->grad[i] += o.grad[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> sum_axis(const Var<T>& x, int axis) {
  require(axis >= 0 && axis < static_cast<int>(x.ndim()), "sum axis range");
  Shape out_shape;
  for (size_t i = 0; i < x.ndim(); ++i)
    if (static_cast<int>(i) != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape = {1};
  int64_t outer = 1, inner = 1;
  const int64_t ax = x.shape()[axis];
  for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.shape()[i];
  std::vector<T> v(outer * inner, T(0));
  const auto& xv = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t a = 0; a < ax; ++a)
      for (int64_t i = 0; i < inner; ++i)
        v[o * inner + i] += xv[(o * ax + a) * inner + i];
  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(v), {xn},
                    [xn, outer, inner, ax](Node<T>& o) {
                      for (int64_t ou = 0; ou < outer; ++ou)
                        for (int64_t a = 0; a < ax; ++a)
                          for (int64_t i = 0; i < inner; ++i)
                            xn->grad[(ou * ax + a) * inner + i] +=
                                o.grad[ou * inner + i];
                    });
}

// [B,C,H,W] -> [B,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require(x.ndim() == 4, "global_avg_pool expects [B,C,H,W], got " +
                             shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> v(B * C, T(0));
  const auto& xv = x.data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    T s = T(0);
    for (int64_t i = 0; i < HW; ++i) s += xv[bc * HW + i];
    v[bc] = s / static_cast<T>(HW);
  }
  auto xn = x.node();
  return make_op<T>({B, C}, std::move(v), {xn}, [xn, B, C, HW](Node<T>& o) {
    for (int64_t bc = 0; bc < B * C; ++bc) {
      T g = o.grad[bc] / static_cast<T>(HW);
      for (int64_t i = 0; i < HW; ++i) xn->grad[bc * HW + i] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// softmax / layer_norm
// ---------------------------------------------------------------------------

template <typename T>
Var<T> softmax(const Var<T>& x, int axis) {
  require(axis >= 0 && axis < static_cast<int>(x.ndim()), "softmax axis");
  int64_t outer = 1, inner = 1;
  const int64_t ax = x.shape()[axis];
  for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.shape()[i];
  std::vector<T> v(x.size());
  const auto& xv = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T m = xv[o * ax * inner + i];
      for (int64_t a = 1; a < ax; ++a)
        m = std::max(m, xv[(o * ax + a) * inner + i]);
      T z = T(0);
      for (int64_t a = 0; a < ax; ++a) {
        T e = std::exp(xv[(o * ax + a) * inner + i] - m);
        v[(o * ax + a) * inner + i] = e;
        z += e;
      }
      for (int64_t a = 0; a < ax; ++a) v[(o * ax + a) * inner + i] /= z;
    }
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(v), {xn},
                    [xn, outer, inner, ax](Node<T>& o) {
                      for (int64_t ou = 0; ou < outer; ++ou)
                        for (int64_t i = 0; i < inner; ++i) {
                          T dot = T(0);
                          for (int64_t a = 0; a < ax; ++a) {
                            int64_t k = (ou * ax + a) * inner + i;
                            dot += o.grad[k] * o.value[k];
                          }
                          for (int64_t a = 0; a < ax; ++a) {
                            int64_t k = (ou * ax + a) * inner + i;
                            xn->grad[k] += o.value[k] * (o.grad[k] - dot);
                          }
                        }
                    });
}

// Normalizes along `axis` to zero mean / unit variance, then applies the
// per-axis affine (gain, bias both shaped [axis_len]).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  int axis, T eps = T(1e-5)) {
  const int64_t ax = x.shape()[axis];
  require(gain.size() == ax && bias.size() == ax,
          "layer_norm affine size must equal normalized axis length");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.shape()[i];
  std::vector<T> v(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(outer * inner);
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T mu = T(0);
      for (int64_t a = 0; a < ax; ++a) mu += xv[(o * ax + a) * inner + i];
      mu /= static_cast<T>(ax);
      T var = T(0);
      for (int64_t a = 0; a < ax; ++a) {
        T d = xv[(o * ax + a) * inner + i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(ax);
      T is = T(1) / std::sqrt(var + eps);
      inv_std[o * inner + i] = is;
      for (int64_t a = 0; a < ax; ++a) {
        int64_t k = (o * ax + a) * inner + i;
        xhat[k] = (xv[k] - mu) * is;
        v[k] = xhat[k] * gv[a] + bv[a];
      }
    }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return make_op<T>(
      x.shape(), std::move(v), {xn, gn, bn},
      [xn, gn, bn, outer, inner, ax, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<T>& o) {
        for (int64_t ou = 0; ou < outer; ++ou)
          for (int64_t i = 0; i < inner; ++i) {
            T is = inv_std[ou * inner + i];
            T mean_g = T(0), mean_gx = T(0);
            for (int64_t a = 0; a < ax; ++a) {
              int64_t k = (ou * ax + a) * inner + i;
              T gdy = o.grad[k] * gn->value[a];
              mean_g += gdy;
              mean_gx += gdy * xhat[k];
            }
            mean_g /= static_cast<T>(ax);
            mean_gx /= static_cast<T>(ax);
            for (int64_t a = 0; a < ax; ++a) {
              int64_t k = (ou * ax + a) * inner + i;
              if (xn->requires_grad) {
                T gdy = o.grad[k] * gn->value[a];
                xn->grad[k] += is * (gdy - mean_g - xhat[k] * mean_gx);
              }
              if (gn->requires_grad) gn->grad[a] += o.grad[k] * xhat[k];
              if (bn->requires_grad) bn->grad[a] += o.grad[k];
            }
          }
      });
}

// ---------------------------------------------------------------------------
// linear / matmul
// ---------------------------------------------------------------------------

// Affine map over the last axis: x[...,Din] w[Dout,Din] (+ b[Dout]).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  require(w.ndim() == 2, "linear weight must be 2-D");
  const int64_t din = w.dim(1), dout = w.dim(0);
  require(x.shape().back() == din,
          "linear: input last dim " + std::to_string(x.shape().back()) +
              " != weight Din " + std::to_string(din));
  if (b.valid()) require(b.size() == dout, "linear bias length != Dout");
  const int64_t rows = x.size() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  std::vector<T> v(rows * dout);
  const auto& xv = x.data();
  const auto& wv = w.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t o = 0; o < dout; ++o) {
      T s = b.valid() ? b.data()[o] : T(0);
      const T* xr = &xv[r * din];
      const T* wr = &wv[o * din];
      for (int64_t i = 0; i < din; ++i) s += xr[i] * wr[i];
      v[r * dout + o] = s;
    }
  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<Node<T>>> parents{xn, wn};
  std::shared_ptr<Node<T>> bn;
  if (b.valid()) {
    bn = b.node();
    parents.push_back(bn);
  }
  return make_op<T>(std::move(out_shape), std::move(v), parents,
                    [xn, wn, bn, rows, din, dout](Node<T>& o) {
                      for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < dout; ++j) {
                          T g = o.grad[r * dout + j];
                          if (g == T(0)) continue;
                          if (xn->requires_grad) {
                            T* dx = &xn->grad[r * din];
                            const T* wr = &wn->value[j * din];
                            for (int64_t i = 0; i < din; ++i)
                              dx[i] += g * wr[i];
                          }
                          if (wn->requires_grad) {
                            T* dw = &wn->grad[j * din];
                            const T* xr = &xn->value[r * din];
                            for (int64_t i = 0; i < din; ++i)
                              dw[i] += g * xr[i];
                          }
                          if (bn && bn->requires_grad) bn->grad[j] += g;
                        }
                    });
}

// Batched matmul: [B...,M,K] x [B...,K,N] with identical batch dims.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.ndim() >= 2 && b.ndim() == a.ndim(), "matmul rank mismatch");
  for (size_t i = 0; i + 2 < a.ndim(); ++i)
    require(a.shape()[i] == b.shape()[i], "matmul batch dim mismatch");
  const int64_t M = a.shape()[a.ndim() - 2], K = a.shape().back();
  require(b.shape()[b.ndim() - 2] == K,
          "matmul inner dim mismatch: " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  const int64_t N = b.shape().back();
  int64_t batch = a.size() / (M * K);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<T> v(batch * M * N, T(0));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int64_t bt = 0; bt < batch; ++bt) {
    const T* A = &av[bt * M * K];
    const T* B = &bv[bt * K * N];
    T* C = &v[bt * M * N];
    for (int64_t m = 0; m < M; ++m)
      for (int64_t k = 0; k < K; ++k) {
        T x = A[m * K + k];
        if (x == T(0)) continue;
        for (int64_t n = 0; n < N; ++n) C[m * N + n] += x * B[k * N + n];
      }
  }
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(std::move(out_shape), std::move(v), {an, bn},
                    [an, bn, batch, M, K, N](Node<T>& o) {
                      for (int64_t bt = 0; bt < batch; ++bt) {
                        const T* G = &o.grad[bt * M * N];
                        const T* A = &an->value[bt * M * K];
                        const T* B = &bn->value[bt * K * N];
                        if (an->requires_grad) {
                          T* dA = &an->grad[bt * M * K];
                          for (int64_t m = 0; m < M; ++m)
                            for (int64_t n = 0; n < N; ++n) {
                              T g = G[m * N + n];
                              if (g == T(0)) continue;
                              for (int64_t k = 0; k < K; ++k)
                                dA[m * K + k] += g * B[k * N + n];
                            }
                        }
                        if (bn->requires_grad) {
                          T* dB = &bn->grad[bt * K * N];
                          for (int64_t m = 0; m < M; ++m)
                            for (int64_t n = 0; n < N; ++n) {
                              T g = G[m * N + n];
                              if (g == T(0)) continue;
                              for (int64_t k = 0; k < K; ++k)
                                dB[k * N + n] += g * A[m * K + k];
                            }
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

// Cross-correlation (no kernel flip). x[B,Cin,H,W], w[Cout,Cin/g,kh,kw].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>(),
              int stride = 1, int padding = 0, int groups = 1) {
  require(x.ndim() == 4, "conv2d input must be [B,Cin,H,W], got " +
                             shape_str(x.shape()));
  require(w.ndim() == 4, "conv2d weight must be [Cout,Cin/g,kh,kw], got " +
                             shape_str(w.shape()));
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(Cin % groups == 0, "conv2d: Cin " + std::to_string(Cin) +
                                 " not divisible by groups " +
                                 std::to_string(groups));
  require(Cout % groups == 0, "conv2d: Cout not divisible by groups");
  require(w.dim(1) == Cin / groups,
          "conv2d: weight dim 1 is " + std::to_string(w.dim(1)) +
              ", expected Cin/groups = " + std::to_string(Cin / groups));
  if (b.valid()) require(b.size() == Cout, "conv2d bias length != Cout");
  const int64_t Ho = (H + 2 * padding - kh) / stride + 1;
  const int64_t Wo = (W + 2 * padding - kw) / stride + 1;
  require(Ho >= 1 && Wo >= 1, "conv2d output would be empty for input " +
                                  shape_str(x.shape()));
  const int64_t cpg_in = Cin / groups, cpg_out = Cout / groups;

  std::vector<T> v(B * Cout * Ho * Wo);
  const auto& xv = x.data();
  const auto& wv = w.data();
  for (int64_t bt = 0; bt < B; ++bt)
    for (int64_t co = 0; co < Cout; ++co) {
      const int64_t g = co / cpg_out;
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          T s = b.valid() ? b.data()[co] : T(0);
          for (int64_t ci = 0; ci < cpg_in; ++ci) {
            const T* xp = &xv[((bt * Cin + g * cpg_in + ci) * H) * W];
            const T* wp = &wv[((co * cpg_in + ci) * kh) * kw];
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= H) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= W) continue;
                s += xp[iy * W + ix] * wp[ky * kw + kx];
              }
            }
          }
          v[((bt * Cout + co) * Ho + oy) * Wo + ox] = s;
        }
    }
  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<Node<T>>> parents{xn, wn};
  std::shared_ptr<Node<T>> bn;
  if (b.valid()) {
    bn = b.node();
    parents.push_back(bn);
  }
  return make_op<T>(
      {B, Cout, Ho, Wo}, std::move(v), parents,
      [xn, wn, bn, B, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, padding,
       cpg_in, cpg_out](Node<T>& o) {
        for (int64_t bt = 0; bt < B; ++bt)
          for (int64_t co = 0; co < Cout; ++co) {
            const int64_t g = co / cpg_out;
            for (int64_t oy = 0; oy < Ho; ++oy)
              for (int64_t ox = 0; ox < Wo; ++ox) {
                const T go = o.grad[((bt * Cout + co) * Ho + oy) * Wo + ox];
                if (go == T(0)) continue;
                if (bn && bn->requires_grad) bn->grad[co] += go;
                for (int64_t ci = 0; ci < cpg_in; ++ci) {
                  const int64_t xoff = ((bt * Cin + g * cpg_in + ci) * H) * W;
                  const int64_t woff = ((co * cpg_in + ci) * kh) * kw;
                  for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                      const int64_t ix = ox * stride - padding + kx;
                      if (ix < 0 || ix >= W) continue;
                      if (xn->requires_grad)
                        xn->grad[xoff + iy * W + ix] +=
                            go * wn->value[woff + ky * kw + kx];
                      if (wn->requires_grad)
                        wn->grad[woff + ky * kw + kx] +=
                            go * xn->value[xoff + iy * W + ix];
                    }
                  }
                }
              }
          }
      });
}

// ---------------------------------------------------------------------------
// bilinear resize / sample
// ---------------------------------------------------------------------------

namespace detail {
// align-corners=false source coordinate, clamped to valid range.
inline void src_coord(int64_t dst, int64_t out_n, int64_t in_n, int64_t& i0,
                      int64_t& i1, double& f) {
  double s = (static_cast<double>(dst) + 0.5) *
                 (static_cast<double>(in_n) / static_cast<double>(out_n)) -
             0.5;
  if (s < 0) s = 0;
  if (s > static_cast<double>(in_n - 1)) s = static_cast<double>(in_n - 1);
  i0 = static_cast<int64_t>(std::floor(s));
  i1 = std::min(i0 + 1, in_n - 1);
  f = s - static_cast<double>(i0);
}
}  // namespace detail

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int64_t out_h, int64_t out_w) {
  require(x.ndim() == 4, "bilinear_resize expects [B,C,H,W]");
  require(out_h >= 1 && out_w >= 1, "bilinear_resize output dims must be >=1");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h == H && out_w == W) {
    // exact identity, bit for bit
    auto xn = x.node();
    std::vector<T> v = x.data();
    return make_op<T>(x.shape(), std::move(v), {xn}, [xn](Node<T>& o) {
      for (int64_t i = 0; i < static_cast<int64_t>(o.grad.size()); ++i)
        xn->grad[i] += o.grad[i];
    });
  }
  // precompute per-axis neighbors and weights
  std::vector<int64_t> y0(out_h), y1(out_h), x0(out_w), x1(out_w);
  std::vector<T> fy(out_h), fx(out_w);
  for (int64_t oy = 0; oy < out_h; ++oy) {
    double f;
    detail::src_coord(oy, out_h, H, y0[oy], y1[oy], f);
    fy[oy] = static_cast<T>(f);
  }
  for (int64_t ox = 0; ox < out_w; ++ox) {
    double f;
    detail::src_coord(ox, out_w, W, x0[ox], x1[ox], f);
    fx[ox] = static_cast<T>(f);
  }
  std::vector<T> v(B * C * out_h * out_w);
  const auto& xv = x.data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* p = &xv[bc * H * W];
    T* q = &v[bc * out_h * out_w];
    for (int64_t oy = 0; oy < out_h; ++oy)
      for (int64_t ox = 0; ox < out_w; ++ox) {
        T a = p[y0[oy] * W + x0[ox]], b = p[y0[oy] * W + x1[ox]];
        T c = p[y1[oy] * W + x0[ox]], d = p[y1[oy] * W + x1[ox]];
        T top = a + fx[ox] * (b - a);
        T bot = c + fx[ox] * (d - c);
        q[oy * out_w + ox] = top + fy[oy] * (bot - top);
      }
  }
  auto xn = x.node();
  return make_op<T>(
      {B, C, out_h, out_w}, std::move(v), {xn},
      [xn, B, C, H, W, out_h, out_w, y0 = std::move(y0), y1 = std::move(y1),
       x0 = std::move(x0), x1 = std::move(x1), fy = std::move(fy),
       fx = std::move(fx)](Node<T>& o) {
        for (int64_t bc = 0; bc < B * C; ++bc) {
          T* dp = &xn->grad[bc * H * W];
          const T* g = &o.grad[bc * out_h * out_w];
          for (int64_t oy = 0; oy < out_h; ++oy)
            for (int64_t ox = 0; ox < out_w; ++ox) {
              T go = g[oy * out_w + ox];
              if (go == T(0)) continue;
              T wy1 = fy[oy], wy0 = T(1) - wy1;
              T wx1 = fx[ox], wx0 = T(1) - wx1;
              dp[y0[oy] * W + x0[ox]] += go * wy0 * wx0;
              dp[y0[oy] * W + x1[ox]] += go * wy0 * wx1;
              dp[y1[oy] * W + x0[ox]] += go * wy1 * wx0;
              dp[y1[oy] * W + x1[ox]] += go * wy1 * wx1;
            }
        }
      });
}

// Samples value[B,C,H,W] at points[B,P,2] with (x,y) normalized to [0,1].
// Out-of-range points clamp to the border (zero point-gradient there).
// The normalized coordinate of pixel (i,j) is ((j+0.5)/W, (i+0.5)/H).
template <typename T>
Var<T> bilinear_sample(const Var<T>& value, const Var<T>& points) {
  require(value.ndim() == 4, "bilinear_sample value must be [B,C,H,W]");
  require(points.ndim() == 3 && points.shape().back() == 2,
          "bilinear_sample points must be [B,P,2], got " +
              shape_str(points.shape()));
  require(value.dim(0) == points.dim(0), "bilinear_sample batch mismatch");
  const int64_t B = value.dim(0), C = value.dim(1), H = value.dim(2),
                W = value.dim(3), P = points.dim(1);
  std::vector<T> v(B * C * P);
  const auto& vv = value.data();
  const auto& pv = points.data();
  // saved per-point geometry for backward
  std::vector<int64_t> ix0(B * P), ix1(B * P), iy0(B * P), iy1(B * P);
  std::vector<T> fx(B * P), fy(B * P);
  std::vector<uint8_t> in_x(B * P), in_y(B * P);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t p = 0; p < P; ++p) {
      const int64_t k = b * P + p;
      T px = pv[k * 2 + 0] * static_cast<T>(W) - T(0.5);
      T py = pv[k * 2 + 1] * static_cast<T>(H) - T(0.5);
      in_x[k] = px > T(0) && px < static_cast<T>(W - 1);
      in_y[k] = py > T(0) && py < static_cast<T>(H - 1);
      px = std::min(std::max(px, T(0)), static_cast<T>(W - 1));
      py = std::min(std::max(py, T(0)), static_cast<T>(H - 1));
      ix0[k] = static_cast<int64_t>(std::floor(px));
      iy0[k] = static_cast<int64_t>(std::floor(py));
      ix1[k] = std::min(ix0[k] + 1, W - 1);
      iy1[k] = std::min(iy0[k] + 1, H - 1);
      fx[k] = px - static_cast<T>(ix0[k]);
      fy[k] = py - static_cast<T>(iy0[k]);
      for (int64_t c = 0; c < C; ++c) {
        const T* m = &vv[(b * C + c) * H * W];
        T a = m[iy0[k] * W + ix0[k]], bb = m[iy0[k] * W + ix1[k]];
        T cc = m[iy1[k] * W + ix0[k]], d = m[iy1[k] * W + ix1[k]];
        T top = a + fx[k] * (bb - a);
        T bot = cc + fx[k] * (d - cc);
        v[(b * C + c) * P + p] = top + fy[k] * (bot - top);
      }
    }
  auto vn = value.node();
  auto pn = points.node();
  return make_op<T>(
      {B, C, P}, std::move(v), {vn, pn},
      [vn, pn, B, C, H, W, P, ix0 = std::move(ix0), ix1 = std::move(ix1),
       iy0 = std::move(iy0), iy1 = std::move(iy1), fx = std::move(fx),
       fy = std::move(fy), in_x = std::move(in_x),
       in_y = std::move(in_y)](Node<T>& o) {
        for (int64_t b = 0; b < B; ++b)
          for (int64_t p = 0; p < P; ++p) {
            const int64_t k = b * P + p;
            T dpx = T(0), dpy = T(0);
            for (int64_t c = 0; c < C; ++c) {
              T go = o.grad[(b * C + c) * P + p];
              if (go == T(0)) continue;
              const int64_t base = (b * C + c) * H * W;
              T wx1 = fx[k], wx0 = T(1) - wx1;
              T wy1 = fy[k], wy0 = T(1) - wy1;
              if (vn->requires_grad) {
                vn->grad[base + iy0[k] * W + ix0[k]] += go * wy0 * wx0;
                vn->grad[base + iy0[k] * W + ix1[k]] += go * wy0 * wx1;
                vn->grad[base + iy1[k] * W + ix0[k]] += go * wy1 * wx0;
                vn->grad[base + iy1[k] * W + ix1[k]] += go * wy1 * wx1;
              }
              if (pn->requires_grad) {
                const T a = vn->value[base + iy0[k] * W + ix0[k]];
                const T bb = vn->value[base + iy0[k] * W + ix1[k]];
                const T cc = vn->value[base + iy1[k] * W + ix0[k]];
                const T d = vn->value[base + iy1[k] * W + ix1[k]];
                dpx += go * (wy0 * (bb - a) + wy1 * (d - cc));
                dpy += go * (wx0 * (cc - a) + wx1 * (d - bb));
              }
            }
            if (pn->requires_grad) {
              if (in_x[k]) pn->grad[k * 2 + 0] += dpx * static_cast<T>(W);
              if (in_y[k]) pn->grad[k * 2 + 1] += dpy * static_cast<T>(H);
            }
          }
      });
}

}  // namespace dunet
