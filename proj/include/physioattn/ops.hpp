#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "physioattn/tensor.hpp"

namespace physioattn {

enum class Padding { valid, same };
enum class PoolKind { max, avg };
enum class Activation { relu, sigmoid, tanh };
enum class Mode { train, eval };

namespace detail {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
// Reductions with a fixed summation order, independent of buffer alignment.
template <class T, class F>
T lane_sum(std::size_t n, F term) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t k = 0; k < 8; ++k) acc[k] += term(i + k);
  for (; i < n; ++i) acc[i % 8] += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}
template <class T>
T fixed_sum(const T* p, std::size_t n) {
  return lane_sum<T>(n, [p](std::size_t i) { return p[i]; });
}
template <class T>
T fixed_dot(const T* a, const T* b, std::size_t n) {
  return lane_sum<T>(n, [a, b](std::size_t i) { return a[i] * b[i]; });
}
template <class T>
T fixed_sq_dev(const T* p, std::size_t n, T m) {
  return lane_sum<T>(n, [p, m](std::size_t i) { return (p[i] - m) * (p[i] - m); });
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  long r = static_cast<long>(rank);
  long a = axis < 0 ? axis + r : axis;
  require(a >= 0 && a < r, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// (outer, axis length, inner) decomposition of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class T>
bool needs(const Node<T>& n, std::size_t i) {
  return n.inputs.size() > i && n.inputs[i]->requires_grad;
}

}  // namespace detail

/// Padding split for "same" convolution/pooling: output length ceil(L/stride),
/// symmetric with the odd extra element on the right.
inline std::pair<std::size_t, std::size_t> same_padding(std::size_t length, std::size_t kernel,
                                                        std::size_t stride) {
  std::size_t out = (length + stride - 1) / stride;
  long total = static_cast<long>((out - 1) * stride + kernel) - static_cast<long>(length);
  std::size_t t = total > 0 ? static_cast<std::size_t>(total) : 0;
  return {t / 2, t - t / 2};
}

/// Output length of a 1D sliding window; throws when the window does not fit.
inline std::size_t window_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                        Padding padding) {
  detail::require(stride >= 1, "stride must be positive");
  detail::require(kernel >= 1, "kernel/window must be positive");
  std::size_t pad = 0;
  if (padding == Padding::same) {
    auto [l, r] = same_padding(length, kernel, stride);
    pad = l + r;
  }
  detail::require(kernel <= length + pad, "window " + std::to_string(kernel) + " exceeds padded length " +
                                              std::to_string(length + pad));
  return (length + pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// convolution / pooling

template <class T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 Padding padding) {
  using namespace detail;
  require(input.rank() == 3, "conv1d input must be [B,Cin,L], got " + to_string(input.shape()));
  require(kernel.rank() == 3, "conv1d kernel must be [Cout,Cin,K], got " + to_string(kernel.shape()));
  require(stride >= 1, "conv1d stride must be positive");
  const std::size_t B = input.dim(0), Cin = input.dim(1), L = input.dim(2);
  const std::size_t Cout = kernel.dim(0), K = kernel.dim(2);
  require(kernel.dim(1) == Cin, "conv1d channel mismatch: input " + to_string(input.shape()) + " vs kernel " +
                                    to_string(kernel.shape()));
  if (bias) require(bias.rank() == 1 && bias.dim(0) == Cout, "conv1d bias must be [Cout]");
  const std::size_t Lo = window_output_length(L, K, stride, padding);
  const std::size_t left = padding == Padding::same ? same_padding(L, K, stride).first : 0;
  const std::size_t CK = Cin * K;
  const bool pointwise = K == 1 && stride == 1 && left == 0;

  auto im2col = [=](const T* x, T* cols) {
    for (std::size_t ci = 0; ci < Cin; ++ci) {
      for (std::size_t k = 0; k < K; ++k) {
        T* row = cols + (ci * K + k) * Lo;
        for (std::size_t i = 0; i < Lo; ++i) {
          long pos = static_cast<long>(i * stride + k) - static_cast<long>(left);
          row[i] = (pos >= 0 && pos < static_cast<long>(L)) ? x[ci * L + pos] : T(0);
        }
      }
    }
  };

  std::vector<T> out(B * Cout * Lo);
  std::vector<T> cols(pointwise ? 0 : CK * Lo);
  CMapR<T> W(kernel.data().data(), Cout, CK);
  for (std::size_t b = 0; b < B; ++b) {
    const T* xb = input.data().data() + b * Cin * L;
    const T* colp = xb;
    if (!pointwise) {
      im2col(xb, cols.data());
      colp = cols.data();
    }
    MapR<T> Y(out.data() + b * Cout * Lo, Cout, Lo);
    Y.noalias() = W * CMapR<T>(colp, CK, Lo);
    if (bias) {
      for (std::size_t co = 0; co < Cout; ++co) Y.row(co).array() += bias.data()[co];
    }
  }
  add_macs(B * Cout * CK * Lo);

  return make_op_result<T>(
      {B, Cout, Lo}, std::move(out), {input, kernel, bias ? bias : Tensor<T>::zeros({Cout})}, "conv1d",
      [=](Node<T>& n) {
        const auto& x = n.inputs[0]->value;
        const auto& w = n.inputs[1]->value;
        CMapR<T> Wm(w.data(), Cout, CK);
        std::vector<T> colbuf(pointwise ? 0 : CK * Lo);
        std::vector<T> dcols(CK * Lo);
        for (std::size_t b = 0; b < B; ++b) {
          CMapR<T> G(n.grad.data() + b * Cout * Lo, Cout, Lo);
          const T* xb = x.data() + b * Cin * L;
          const T* colp = xb;
          if (!pointwise) {
            im2col(xb, colbuf.data());
            colp = colbuf.data();
          }
          if (needs(n, 1)) {
            MapR<T> dW(n.inputs[1]->grad.data(), Cout, CK);
            dW.noalias() += G * CMapR<T>(colp, CK, Lo).transpose();
          }
          if (needs(n, 2)) {
            auto& db = n.inputs[2]->grad;
            for (std::size_t co = 0; co < Cout; ++co) db[co] += fixed_sum(n.grad.data() + (b * Cout + co) * Lo, Lo);
          }
          if (needs(n, 0)) {
            T* dx = n.inputs[0]->grad.data() + b * Cin * L;
            if (pointwise) {
              MapR<T>(dx, Cin, L).noalias() += Wm.transpose() * G;
            } else {
              MapR<T>(dcols.data(), CK, Lo).noalias() = Wm.transpose() * G;
              for (std::size_t ci = 0; ci < Cin; ++ci) {
                for (std::size_t k = 0; k < K; ++k) {
                  const T* row = dcols.data() + (ci * K + k) * Lo;
                  for (std::size_t i = 0; i < Lo; ++i) {
                    long pos = static_cast<long>(i * stride + k) - static_cast<long>(left);
                    if (pos >= 0 && pos < static_cast<long>(L)) dx[ci * L + pos] += row[i];
                  }
                }
              }
            }
          }
        }
        add_macs(2 * B * Cout * CK * Lo);
      });
}

template <class T>
Tensor<T> pool1d(const Tensor<T>& input, PoolKind kind, std::size_t window, std::size_t stride,
                 Padding padding = Padding::valid) {
  using namespace detail;
  require(input.rank() == 3, "pool1d input must be [B,C,L], got " + to_string(input.shape()));
  require(window >= 1 && stride >= 1, "pool1d window and stride must be positive");
  const std::size_t B = input.dim(0), C = input.dim(1), L = input.dim(2);
  require(padding == Padding::same || window <= L,
          "pool1d window " + std::to_string(window) + " exceeds length " + std::to_string(L));
  const std::size_t Lo = window_output_length(L, window, stride, padding);
  const long left = padding == Padding::same ? static_cast<long>(same_padding(L, window, stride).first) : 0;
  const auto& x = input.data();
  std::vector<T> out(B * C * Lo);
  // per output: source index (max) or valid-element count (avg)
  std::vector<std::size_t> aux(B * C * Lo);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* row = x.data() + bc * L;
    for (std::size_t i = 0; i < Lo; ++i) {
      long lo = static_cast<long>(i * stride) - left;
      long hi = lo + static_cast<long>(window);
      lo = std::max(lo, 0L);
      hi = std::min(hi, static_cast<long>(L));
      std::size_t o = bc * Lo + i;
      if (kind == PoolKind::max) {
        std::size_t best = static_cast<std::size_t>(lo);
        for (long j = lo + 1; j < hi; ++j) {
          if (row[j] > row[best]) best = static_cast<std::size_t>(j);  // first occurrence wins ties
        }
        out[o] = row[best];
        aux[o] = best;
      } else {
        T s = 0;
        for (long j = lo; j < hi; ++j) s += row[j];
        aux[o] = static_cast<std::size_t>(hi - lo);
        out[o] = s / static_cast<T>(aux[o]);
      }
    }
  }
  return make_op_result<T>({B, C, Lo}, std::move(out), {input}, kind == PoolKind::max ? "maxpool1d" : "avgpool1d",
                           [=, aux = std::move(aux)](Node<T>& n) {
                             auto& dx = n.inputs[0]->grad;
                             for (std::size_t bc = 0; bc < B * C; ++bc) {
                               for (std::size_t i = 0; i < Lo; ++i) {
                                 std::size_t o = bc * Lo + i;
                                 T g = n.grad[o];
                                 if (kind == PoolKind::max) {
                                   dx[bc * L + aux[o]] += g;
                                 } else {
                                   long lo = std::max(static_cast<long>(i * stride) - left, 0L);
                                   g /= static_cast<T>(aux[o]);
                                   for (std::size_t j = 0; j < aux[o]; ++j) dx[bc * L + lo + j] += g;
                                 }
                               }
                             }
                           });
}

/// Reduces the length axis: [B,C,L] -> [B,C].
template <class T>
Tensor<T> global_pool(const Tensor<T>& input, PoolKind kind) {
  using namespace detail;
  require(input.rank() == 3, "global_pool input must be [B,C,L], got " + to_string(input.shape()));
  const std::size_t B = input.dim(0), C = input.dim(1), L = input.dim(2);
  const auto& x = input.data();
  std::vector<T> out(B * C);
  std::vector<std::size_t> arg(kind == PoolKind::max ? B * C : 0);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* row = x.data() + bc * L;
    if (kind == PoolKind::max) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < L; ++j) {
        if (row[j] > row[best]) best = j;
      }
      arg[bc] = best;
      out[bc] = row[best];
    } else {
      T s = 0;
      for (std::size_t j = 0; j < L; ++j) s += row[j];
      out[bc] = s / static_cast<T>(L);
    }
  }
  return make_op_result<T>({B, C}, std::move(out), {input}, "global_pool", [=, arg = std::move(arg)](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      if (kind == PoolKind::max) {
        dx[bc * L + arg[bc]] += n.grad[bc];
      } else {
        T g = n.grad[bc] / static_cast<T>(L);
        for (std::size_t j = 0; j < L; ++j) dx[bc * L + j] += g;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// dense / matmul

/// Affine map over the last axis: [..., N] x [N, M] + [M] -> [..., M].
template <class T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  using namespace detail;
  require(input.rank() >= 1 && weight.rank() == 2, "dense expects input [...,N] and weight [N,M]");
  const std::size_t N = input.shape().back(), M = weight.dim(1);
  require(weight.dim(0) == N, "dense dimension mismatch: input " + to_string(input.shape()) + " vs weight " +
                                  to_string(weight.shape()));
  if (bias) require(bias.rank() == 1 && bias.dim(0) == M, "dense bias must be [M]");
  const std::size_t R = input.size() / N;
  Shape out_shape = input.shape();
  out_shape.back() = M;
  std::vector<T> out(R * M);
  MapR<T> Y(out.data(), R, M);
  Y.noalias() = CMapR<T>(input.data().data(), R, N) * CMapR<T>(weight.data().data(), N, M);
  if (bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data().data(), M);
    Y.rowwise() += bv;
  }
  add_macs(R * N * M);
  return make_op_result<T>(std::move(out_shape), std::move(out), {input, weight, bias ? bias : Tensor<T>::zeros({M})},
                           "dense", [=](Node<T>& n) {
                             CMapR<T> G(n.grad.data(), R, M);
                             if (needs(n, 0)) {
                               MapR<T>(n.inputs[0]->grad.data(), R, N).noalias() +=
                                   G * CMapR<T>(n.inputs[1]->value.data(), N, M).transpose();
                             }
                             if (needs(n, 1)) {
                               MapR<T>(n.inputs[1]->grad.data(), N, M).noalias() +=
                                   CMapR<T>(n.inputs[0]->value.data(), R, N).transpose() * G;
                             }
                             if (needs(n, 2)) {
                               auto& db = n.inputs[2]->grad;
                               for (std::size_t r = 0; r < R; ++r)
                                 for (std::size_t m = 0; m < M; ++m) db[m] += n.grad[r * M + m];
                             }
                             add_macs(2 * R * N * M);
                           });
}

/// Batched matrix product over identical leading dims: [...,M,K] x [...,K,N].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require(a.rank() >= 2 && a.rank() == b.rank(), "matmul operands must share rank >= 2");
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    require(a.dim(i) == b.dim(i), "matmul batch dims differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t M = a.dim(r - 2), K = a.dim(r - 1), N = b.dim(r - 1);
  require(b.dim(r - 2) == K, "matmul inner dims differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t batch = a.size() / (M * K);
  Shape out_shape = a.shape();
  out_shape[r - 1] = N;
  std::vector<T> out(batch * M * N);
  for (std::size_t i = 0; i < batch; ++i) {
    MapR<T>(out.data() + i * M * N, M, N).noalias() =
        CMapR<T>(a.data().data() + i * M * K, M, K) * CMapR<T>(b.data().data() + i * K * N, K, N);
  }
  add_macs(batch * M * K * N);
  return make_op_result<T>(std::move(out_shape), std::move(out), {a, b}, "matmul", [=](Node<T>& n) {
    for (std::size_t i = 0; i < batch; ++i) {
      CMapR<T> G(n.grad.data() + i * M * N, M, N);
      if (needs(n, 0)) {
        MapR<T>(n.inputs[0]->grad.data() + i * M * K, M, K).noalias() +=
            G * CMapR<T>(n.inputs[1]->value.data() + i * K * N, K, N).transpose();
      }
      if (needs(n, 1)) {
        MapR<T>(n.inputs[1]->grad.data() + i * K * N, K, N).noalias() +=
            CMapR<T>(n.inputs[0]->value.data() + i * M * K, M, K).transpose() * G;
      }
    }
    add_macs(2 * batch * M * K * N);
  });
}

// ---------------------------------------------------------------------------
// elementwise

template <class T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  const auto& x = input.data();
  std::vector<T> y(x.size());
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] >= T(0)) {
          y[i] = T(1) / (T(1) + std::exp(-x[i]));
        } else {
          T e = std::exp(x[i]);
          y[i] = e / (T(1) + e);
        }
      }
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
      break;
  }
  return make_op_result<T>(input.shape(), std::move(y), {input}, "activation", [kind](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    const auto& y = n.value;
    const auto& g = n.grad;
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] += y[i] > T(0) ? g[i] : T(0);
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] += g[i] * (T(1) - y[i] * y[i]);
        break;
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::relu);
}
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Activation::sigmoid);
}

/// Numerically stable softmax along one axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& input, long axis = -1) {
  using namespace detail;
  const auto ax = normalize_axis(axis, input.rank());
  const auto sp = split_at(input.shape(), ax);
  const auto& x = input.data();
  std::vector<T> y(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      T m = x[base];
      for (std::size_t j = 1; j < sp.len; ++j) m = std::max(m, x[base + j * sp.inner]);
      T s = 0;
      for (std::size_t j = 0; j < sp.len; ++j) {
        T e = std::exp(x[base + j * sp.inner] - m);
        y[base + j * sp.inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < sp.len; ++j) y[base + j * sp.inner] /= s;
    }
  }
  return make_op_result<T>(input.shape(), std::move(y), {input}, "softmax", [sp](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    const auto& y = n.value;
    const auto& g = n.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < sp.len; ++j) dot += g[base + j * sp.inner] * y[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t k = base + j * sp.inner;
          dx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

namespace detail {

// Same-rank broadcast: every dim of a and b equals the output dim or is 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  require(a.size() == b.size(), "broadcast requires equal ranks: " + to_string(a) + " vs " + to_string(b));
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i] == b[i] || a[i] == 1 || b[i] == 1, "shapes not broadcastable: " + to_string(a) + " vs " + to_string(b));
    out[i] = std::max(a[i], b[i]);
  }
  return out;
}

inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(s.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = (s[i] == out[i]) ? acc : 0;
    acc *= s[i];
  }
  return st;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t total = numel(out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      ia -= sa[d] * (out[d] - 1);
      ib -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

enum class BinaryOp { add, sub, mul };

template <class T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryOp op) {
  const Shape out = broadcast_shape(a.shape(), b.shape());
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<T> z(numel(out));
  const bool same = a.shape() == b.shape();
  auto apply = [op](T u, T v) { return op == BinaryOp::add ? u + v : op == BinaryOp::sub ? u - v : u * v; };
  const auto sa = broadcast_strides(a.shape(), out);
  const auto sb = broadcast_strides(b.shape(), out);
  if (same) {
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = apply(x[i], y[i]);
  } else {
    for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { z[o] = apply(x[i], y[j]); });
  }
  const char* name = op == BinaryOp::add ? "add" : op == BinaryOp::sub ? "sub" : "mul";
  return make_op_result<T>(out, std::move(z), {a, b}, name, [=](Node<T>& n) {
    const auto& g = n.grad;
    const bool na = needs(n, 0), nb = needs(n, 1);
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    T* da = na ? n.inputs[0]->grad.data() : nullptr;
    T* db = nb ? n.inputs[1]->grad.data() : nullptr;
    auto step = [&](std::size_t o, std::size_t i, std::size_t j) {
      switch (op) {
        case BinaryOp::add:
          if (na) da[i] += g[o];
          if (nb) db[j] += g[o];
          break;
        case BinaryOp::sub:
          if (na) da[i] += g[o];
          if (nb) db[j] -= g[o];
          break;
        case BinaryOp::mul:
          if (na) da[i] += g[o] * bv[j];
          if (nb) db[j] += g[o] * av[i];
          break;
      }
    };
    if (same) {
      for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
    } else {
      for_each_broadcast(out, sa, sb, step);
    }
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryOp::add);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryOp::sub);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryOp::mul);
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> y(x.data());
  for (auto& v : y) v *= s;
  return make_op_result<T>(x.shape(), std::move(y), {x}, "scale", [s](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// layout

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.size(),
                  "reshape " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
  return make_op_result<T>(std::move(shape), x.data(), {x}, "reshape", [](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[i];
  });
}

/// Flattens everything after the batch axis: [B, ...] -> [B, prod(...)].
template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
  return reshape(x, {x.dim(0), x.size() / x.dim(0)});
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  using namespace detail;
  const std::size_t r = x.rank();
  require(perm.size() == r, "permute order has wrong length");
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    require(p < r && !used[p], "permute order is not a permutation");
    used[p] = true;
  }
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = x.dim(perm[i]);
  // stride of source for each output axis
  std::vector<std::size_t> src_stride(r), st(r);
  std::size_t acc = 1;
  for (std::size_t i = r; i-- > 0;) {
    st[i] = acc;
    acc *= x.dim(i);
  }
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = st[perm[i]];
  std::vector<std::size_t> map(x.size());
  std::vector<std::size_t> zero(r, 0);
  for_each_broadcast(out, src_stride, zero, [&](std::size_t o, std::size_t s, std::size_t) { map[o] = s; });
  std::vector<T> y(x.size());
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = x.data()[map[o]];
  return make_op_result<T>(std::move(out), std::move(y), {x}, "permute", [map = std::move(map)](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    for (std::size_t o = 0; o < map.size(); ++o) dx[map[o]] += n.grad[o];
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, long axis) {
  using namespace detail;
  require(!xs.empty(), "concat of zero tensors");
  const std::size_t r = xs[0].rank();
  const auto ax = normalize_axis(axis, r);
  Shape out = xs[0].shape();
  out[ax] = 0;
  for (const auto& t : xs) {
    require(t.rank() == r, "concat rank mismatch");
    for (std::size_t i = 0; i < r; ++i) {
      if (i != ax) require(t.dim(i) == xs[0].dim(i), "concat shape mismatch: " + to_string(t.shape()) + " vs " + to_string(xs[0].shape()));
    }
    out[ax] += t.dim(ax);
  }
  const auto sp = split_at(out, ax);
  std::vector<T> y(numel(out));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t chunk = t.dim(ax) * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(t.data().data() + o * chunk, chunk, y.data() + o * sp.len * sp.inner + off * sp.inner);
    }
    off += t.dim(ax);
  }
  return make_op_result<T>(out, std::move(y), xs, "concat", [sp, offsets](Node<T>& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!n.inputs[k]->requires_grad) continue;
      auto& dx = n.inputs[k]->grad;
      const std::size_t chunk = dx.size() / sp.outer;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const T* src = n.grad.data() + o * sp.len * sp.inner + offsets[k] * sp.inner;
        T* dst = dx.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

/// Mean over one axis, which is removed from the shape.
template <class T>
Tensor<T> reduce_mean(const Tensor<T>& x, long axis) {
  using namespace detail;
  const auto ax = normalize_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  Shape out = x.shape();
  out.erase(out.begin() + static_cast<long>(ax));
  if (out.empty()) out = {1};
  std::vector<T> y(sp.outer * sp.inner, T(0));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.len; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i) y[o * sp.inner + i] += x.data()[(o * sp.len + j) * sp.inner + i];
  for (auto& v : y) v /= static_cast<T>(sp.len);
  return make_op_result<T>(std::move(out), std::move(y), {x}, "reduce_mean", [sp](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    const T inv = T(1) / static_cast<T>(sp.len);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.len; ++j)
        for (std::size_t i = 0; i < sp.inner; ++i) dx[(o * sp.len + j) * sp.inner + i] += n.grad[o * sp.inner + i] * inv;
  });
}

/// Max over one axis (first index wins ties), axis removed.
template <class T>
Tensor<T> reduce_max(const Tensor<T>& x, long axis) {
  using namespace detail;
  const auto ax = normalize_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  Shape out = x.shape();
  out.erase(out.begin() + static_cast<long>(ax));
  if (out.empty()) out = {1};
  std::vector<T> y(sp.outer * sp.inner);
  std::vector<std::size_t> arg(y.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.len * sp.inner + i;
      for (std::size_t j = 1; j < sp.len; ++j) {
        std::size_t k = (o * sp.len + j) * sp.inner + i;
        if (x.data()[k] > x.data()[best]) best = k;
      }
      y[o * sp.inner + i] = x.data()[best];
      arg[o * sp.inner + i] = best;
    }
  }
  return make_op_result<T>(std::move(out), std::move(y), {x}, "reduce_max", [arg = std::move(arg)](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += n.grad[o];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (auto v : x.data()) s += v;
  return make_op_result<T>({1}, {s}, {x}, "sum", [](Node<T>& n) {
    auto& dx = n.inputs[0]->grad;
    for (auto& d : dx) d += n.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------------------
// normalization

template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels = 0) : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Per-channel batch normalization of [B,C,L] (or [B,C]). Train mode uses batch
/// statistics and updates the running estimates; eval mode uses the running ones.
template <class T>
Tensor<T> batchnorm1d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                      Mode mode) {
  using namespace detail;
  require(input.rank() == 2 || input.rank() == 3, "batchnorm1d input must be [B,C,L] or [B,C]");
  const std::size_t B = input.dim(0), C = input.dim(1), L = input.rank() == 3 ? input.dim(2) : 1;
  require(gamma.size() == C && beta.size() == C, "batchnorm1d gamma/beta must be [C]");
  require(state.running_mean.size() == C && state.running_var.size() == C, "batchnorm1d state has wrong channel count");
  const std::size_t N = B * L;
  if (mode == Mode::train) require(N >= 2, "batchnorm1d train mode needs B*L >= 2");
  const auto& x = input.data();
  std::vector<T> mean(C, T(0)), invstd(C);
  if (mode == Mode::train) {
    std::vector<T> var(C, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        mean[c] += fixed_sum(x.data() + (b * C + c) * L, L);
      }
    for (auto& m : mean) m /= static_cast<T>(N);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        var[c] += fixed_sq_dev(x.data() + (b * C + c) * L, L, mean[c]);
      }
    for (std::size_t c = 0; c < C; ++c) {
      var[c] /= static_cast<T>(N);
      invstd[c] = T(1) / std::sqrt(var[c] + state.eps);
      state.running_mean[c] = state.momentum * state.running_mean[c] + (T(1) - state.momentum) * mean[c];
      state.running_var[c] = state.momentum * state.running_var[c] + (T(1) - state.momentum) * var[c];
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  std::vector<T> xhat(x.size()), y(x.size());
  const auto& g = gamma.data();
  const auto& be = beta.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (b * C + c) * L;
      const T* r = x.data() + off;
      T* xh = xhat.data() + off;
      T* yr = y.data() + off;
      const T m = mean[c], is = invstd[c], gc = g[c], bc = be[c];
      for (std::size_t l = 0; l < L; ++l) {
        xh[l] = (r[l] - m) * is;
        yr[l] = gc * xh[l] + bc;
      }
    }
  const bool batch_stats = mode == Mode::train;
  return make_op_result<T>(input.shape(), std::move(y), {input, gamma, beta}, "batchnorm1d",
                           [=, xhat = std::move(xhat)](Node<T>& n) {
                             const auto& gm = n.inputs[1]->value;
                             const auto& dy = n.grad;
                             std::vector<T> sdy(C, T(0)), sdyx(C, T(0));
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t c = 0; c < C; ++c) {
                                 const std::size_t off = (b * C + c) * L;
                                 sdy[c] += fixed_sum(dy.data() + off, L);
                                 sdyx[c] += fixed_dot(dy.data() + off, xhat.data() + off, L);
                               }
                             if (needs(n, 1))
                               for (std::size_t c = 0; c < C; ++c) n.inputs[1]->grad[c] += sdyx[c];
                             if (needs(n, 2))
                               for (std::size_t c = 0; c < C; ++c) n.inputs[2]->grad[c] += sdy[c];
                             if (!needs(n, 0)) return;
                             auto& dx = n.inputs[0]->grad;
                             const T invN = T(1) / static_cast<T>(N);
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t c = 0; c < C; ++c) {
                                 const std::size_t off = (b * C + c) * L;
                                 const T* d = dy.data() + off;
                                 const T* xh = xhat.data() + off;
                                 T* o = dx.data() + off;
                                 const T k = gm[c] * invstd[c];
                                 if (batch_stats) {
                                   const T a1 = invN * sdy[c], a2 = invN * sdyx[c];
                                   for (std::size_t l = 0; l < L; ++l) o[l] += k * (d[l] - a1 - xh[l] * a2);
                                 } else {
                                   for (std::size_t l = 0; l < L; ++l) o[l] += k * d[l];
                                 }
                               }
                           });
}

/// Normalizes over the last axis with learned scale and shift.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  using namespace detail;
  const std::size_t D = input.shape().back();
  require(gamma.size() == D && beta.size() == D, "layer_norm gamma/beta must match last axis");
  const std::size_t R = input.size() / D;
  const auto& x = input.data();
  std::vector<T> xhat(x.size()), y(x.size()), invstd(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* row = x.data() + r * D;
    T m = 0;
    for (std::size_t j = 0; j < D; ++j) m += row[j];
    m /= static_cast<T>(D);
    T v = 0;
    for (std::size_t j = 0; j < D; ++j) v += (row[j] - m) * (row[j] - m);
    v /= static_cast<T>(D);
    invstd[r] = T(1) / std::sqrt(v + eps);
    for (std::size_t j = 0; j < D; ++j) {
      xhat[r * D + j] = (row[j] - m) * invstd[r];
      y[r * D + j] = gamma.data()[j] * xhat[r * D + j] + beta.data()[j];
    }
  }
  return make_op_result<T>(input.shape(), std::move(y), {input, gamma, beta}, "layer_norm",
                           [=, xhat = std::move(xhat), invstd = std::move(invstd)](Node<T>& n) {
                             const auto& gm = n.inputs[1]->value;
                             const auto& dy = n.grad;
                             const bool nx = needs(n, 0), ng = needs(n, 1), nb = needs(n, 2);
                             std::vector<T> dxh(D);
                             for (std::size_t r = 0; r < R; ++r) {
                               T s1 = 0, s2 = 0;
                               for (std::size_t j = 0; j < D; ++j) {
                                 std::size_t k = r * D + j;
                                 if (ng) n.inputs[1]->grad[j] += dy[k] * xhat[k];
                                 if (nb) n.inputs[2]->grad[j] += dy[k];
                                 dxh[j] = dy[k] * gm[j];
                                 s1 += dxh[j];
                                 s2 += dxh[j] * xhat[k];
                               }
                               if (!nx) continue;
                               auto& dx = n.inputs[0]->grad;
                               const T invD = T(1) / static_cast<T>(D);
                               for (std::size_t j = 0; j < D; ++j) {
                                 std::size_t k = r * D + j;
                                 dx[k] += invstd[r] * (dxh[j] - invD * s1 - xhat[k] * invD * s2);
                               }
                             }
                           });
}

// ---------------------------------------------------------------------------
// losses

/// Mean binary cross-entropy on logits.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  detail::require(logits.size() == targets.size(), "bce_with_logits size mismatch");
  const auto& z = logits.data();
  const auto& t = targets.data();
  T s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    s += std::max(z[i], T(0)) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const std::size_t N = z.size();
  return make_op_result<T>({1}, {s / static_cast<T>(N)}, {logits, targets}, "bce_with_logits", [N](Node<T>& n) {
    if (!n.inputs[0]->requires_grad) return;
    const auto& z = n.inputs[0]->value;
    const auto& t = n.inputs[1]->value;
    auto& dz = n.inputs[0]->grad;
    const T g = n.grad[0] / static_cast<T>(N);
    for (std::size_t i = 0; i < N; ++i) {
      T p = z[i] >= 0 ? T(1) / (T(1) + std::exp(-z[i])) : std::exp(z[i]) / (T(1) + std::exp(z[i]));
      dz[i] += g * (p - t[i]);
    }
  });
}

/// Root mean squared error.
template <class T>
Tensor<T> rmse(const Tensor<T>& pred, const Tensor<T>& targets) {
  detail::require(pred.size() == targets.size(), "rmse size mismatch");
  const auto& p = pred.data();
  const auto& t = targets.data();
  T s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  const std::size_t N = p.size();
  const T r = std::sqrt(s / static_cast<T>(N));
  return make_op_result<T>({1}, {r}, {pred, targets}, "rmse", [N](Node<T>& n) {
    if (!n.inputs[0]->requires_grad) return;
    const T r = n.value[0];
    if (r == T(0)) return;
    const auto& p = n.inputs[0]->value;
    const auto& t = n.inputs[1]->value;
    auto& dp = n.inputs[0]->grad;
    const T g = n.grad[0] / (static_cast<T>(N) * r);
    for (std::size_t i = 0; i < N; ++i) dp[i] += g * (p[i] - t[i]);
  });
}

}  // namespace physioattn
