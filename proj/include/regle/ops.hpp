#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "regle/autograd.hpp"
#include "regle/errors.hpp"
#include "regle/tensor.hpp"

// Differentiable primitives. Each op validates shapes, computes its output and
// records a backward closure on the tape. Matrix products go through Eigen;
// scalar reductions accumulate in double.

namespace regle {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_string(s));
  }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw DimensionError(std::string(op) + ": axis " + std::to_string(i) + " mismatch " +
                           shape_string(a) + " vs " + shape_string(b));
    }
  }
}

/// Both convolutions reduce to a step +1 correlation over a zero-padded copy
/// of the input. Each batch item occupies `padded` = L + K - 1 rows: `left`
/// zeros, the L input rows, then the remaining zeros. Row r of the im2col
/// matrix is then the K*Cin contiguous floats starting at row r, so the
/// matrix is an overlapping-stride view and never materialized.
struct ConvGeometry {
  std::size_t batch, length, cin, kernel, cout, left;

  std::size_t padded() const { return length + kernel - 1; }
  std::size_t total_rows() const { return batch * padded(); }
  // Rows of the strided view that stay inside the padded buffer.
  std::size_t view_rows() const { return total_rows() - (kernel - 1); }
};

template <class T>
using StridedMap = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

/// Copies rows [B,L,C] into the padded layout, `lead` extra zero rows first.
template <class T>
std::vector<T> pad_rows(const T* x, std::size_t batch, std::size_t length, std::size_t channels,
                        std::size_t padded, std::size_t left, std::size_t lead) {
  std::vector<T> out((lead + batch * padded) * channels, T{0});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(x + b * length * channels, length * channels, out.data() + (lead + b * padded + left) * channels);
  }
  return out;
}

/// Kernel as the [K*Cin, Cout] matrix of a step +1 correlation; the
/// transpose convolution reads taps in reverse order.
template <class T>
std::vector<T> correlation_kernel(const Tensor<T>& w, bool reversed) {
  const std::size_t K = w.dim(0), block = w.dim(1) * w.dim(2);
  std::vector<T> out(K * block);
  for (std::size_t k = 0; k < K; ++k) {
    std::copy_n(w.raw() + (reversed ? K - 1 - k : k) * block, block, out.data() + k * block);
  }
  return out;
}

template <class T>
Var conv_like(Tape<T>& tape, Var input, Var kernel, bool transpose, const char* op) {
  const Shape& xs = tape.shape(input);
  const Shape& ks = tape.shape(kernel);
  require_rank(xs, 3, op, "input [B,L,Cin]");
  require_rank(ks, 3, op, "kernel [K,Cin,Cout]");
  if (ks[1] != xs[2]) {
    throw DimensionError(std::string(op) + ": input axis 2 (channels) is " + std::to_string(xs[2]) +
                         " but kernel axis 1 is " + std::to_string(ks[1]));
  }
  if (ks[0] > xs[1]) {
    throw DimensionError(std::string(op) + ": kernel axis 0 (width " + std::to_string(ks[0]) +
                         ") exceeds input axis 1 (length " + std::to_string(xs[1]) + ")");
  }
  // "same" padding: floor((K-1)/2) zeros before, the rest after. The
  // transpose reads l - k + floor((K-1)/2), which after reversing the taps
  // is a correlation with ceil((K-1)/2) zeros before.
  const std::size_t K = ks[0];
  const std::size_t before = transpose ? K - 1 - (K - 1) / 2 : (K - 1) / 2;
  const ConvGeometry g{xs[0], xs[1], xs[2], K, ks[2], before};
  const std::size_t width = K * g.cin, P = g.padded();

  auto xp = std::make_shared<std::vector<T>>(
      pad_rows(tape.value(input).raw(), g.batch, g.length, g.cin, P, g.left, 0));
  const std::vector<T> wk = correlation_kernel(tape.value(kernel), transpose);
  const StridedMap<T> cols(xp->data(), g.view_rows(), width, Eigen::OuterStride<>(g.cin));
  RowMat<T> yp(g.view_rows(), g.cout);
  yp.noalias() = cols * ConstMatMap<T>(wk.data(), width, g.cout);
  Tensor<T> out(Shape{g.batch, g.length, g.cout});
  for (std::size_t b = 0; b < g.batch; ++b) {
    std::copy_n(yp.data() + b * P * g.cout, g.length * g.cout, out.raw() + b * g.length * g.cout);
  }
  if (!tape.requires_grad(kernel)) xp.reset();

  return tape.record(std::move(out), {input, kernel}, [input, kernel, g, xp, transpose](Tape<T>& t,
                                                                                       const Tensor<T>& gy) {
    const std::size_t K = g.kernel, P = g.padded(), width = K * g.cin;
    // dy in the padded row layout behind K-1 extra zero rows; the rows
    // that carried no output are zero.
    const std::vector<T> z = pad_rows(gy.raw(), g.batch, g.length, g.cout, P, 0, K - 1);
    if (t.requires_grad(kernel)) {
      const StridedMap<T> cols(xp->data(), g.view_rows(), width, Eigen::OuterStride<>(g.cin));
      RowMat<T> dwk = cols.transpose() * ConstMatMap<T>(z.data() + (K - 1) * g.cout, g.view_rows(), g.cout);
      auto gw = t.grad_buffer(kernel);
      const std::size_t block = g.cin * g.cout;
      for (std::size_t k = 0; k < K; ++k) {
        const T* src = dwk.data() + k * block;
        T* dst = gw.data() + (transpose ? K - 1 - k : k) * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    }
    if (t.requires_grad(input)) {
      // dxp[q] = sum_k dyp[q - k] W_k^T, a correlation of z with the taps
      // reversed and channels swapped.
      const Tensor<T>& w = t.value(kernel);
      std::vector<T> w2(K * g.cout * g.cin);
      for (std::size_t j = 0; j < K; ++j) {
        const std::size_t tap = transpose ? j : K - 1 - j;
        for (std::size_t ci = 0; ci < g.cin; ++ci)
          for (std::size_t co = 0; co < g.cout; ++co) w2[(j * g.cout + co) * g.cin + ci] = w(tap, ci, co);
      }
      const StridedMap<T> zcols(z.data(), g.total_rows(), K * g.cout, Eigen::OuterStride<>(g.cout));
      RowMat<T> dxp = zcols * ConstMatMap<T>(w2.data(), K * g.cout, g.cin);
      auto gx = t.grad_buffer(input);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* src = dxp.data() + (b * P + g.left) * g.cin;
        T* dst = gx.data() + b * g.length * g.cin;
        for (std::size_t i = 0; i < g.length * g.cin; ++i) dst[i] += src[i];
      }
    }
  });
}

template <class T>
Var unary(Tape<T>& tape, Var x, auto fwd, auto dfdx) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return tape.record(std::move(out), {x}, [x, dfdx](Tape<T>& t, const Tensor<T>& gy) {
    const T* xv = t.value(x).raw();
    const T* g = gy.raw();
    T* gx = t.grad_buffer(x).data();
    for (std::size_t i = 0, n = gy.size(); i < n; ++i) gx[i] += g[i] * dfdx(xv[i]);
  });
}

}  // namespace detail

/// 1-D convolution with "same" padding.
/// out[b,l,co] = sum_{k,ci} in[b, l+k-floor((K-1)/2), ci] * kernel[k,ci,co].
template <class T>
Var conv1d(Tape<T>& tape, Var input, Var kernel) {
  return detail::conv_like(tape, input, kernel, false, "conv1d");
}

/// Adjoint of conv1d: for a fixed kernel W,
/// <conv1d(x, W), y> == <x, conv1d_transpose(y, swap_channels(W))>.
template <class T>
Var conv1d_transpose(Tape<T>& tape, Var input, Var kernel) {
  return detail::conv_like(tape, input, kernel, true, "conv1d_transpose");
}

/// Kernel [K,Cin,Cout] -> [K,Cout,Cin].
template <class T>
Tensor<T> swap_channels(const Tensor<T>& kernel) {
  detail::require_rank(kernel.shape(), 3, "swap_channels", "kernel");
  const std::size_t K = kernel.dim(0), ci = kernel.dim(1), co = kernel.dim(2);
  Tensor<T> out(Shape{K, co, ci});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t a = 0; a < ci; ++a)
      for (std::size_t b = 0; b < co; ++b) out(k, b, a) = kernel(k, a, b);
  return out;
}

/// Max pooling with window and stride 2 along axis 1. Ties route the gradient
/// to the lower index.
template <class T>
Var maxpool1d(Tape<T>& tape, Var input) {
  const Shape& s = tape.shape(input);
  detail::require_rank(s, 3, "maxpool1d", "input [B,L,C]");
  if (s[1] % 2 != 0) {
    throw DimensionError("maxpool1d: input axis 1 (length " + std::to_string(s[1]) + ") must be even");
  }
  const std::size_t B = s[0], half = s[1] / 2, C = s[2];
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(Shape{B, half, C});
  auto second = std::make_shared<std::vector<std::uint8_t>>(out.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < half; ++l)
      for (std::size_t c = 0; c < C; ++c) {
        const T a = x(b, 2 * l, c), d = x(b, 2 * l + 1, c);
        const std::size_t o = (b * half + l) * C + c;
        (*second)[o] = d > a;
        out[o] = std::max(a, d);
      }
  return tape.record(std::move(out), {input}, [input, B, half, C, second](Tape<T>& t, const Tensor<T>& gy) {
    auto gx = t.grad_buffer(input);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < half; ++l)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t o = (b * half + l) * C + c;
          gx[(b * 2 * half + 2 * l + (*second)[o]) * C + c] += gy[o];
        }
  });
}

/// Nearest-neighbour upsampling by 2 along axis 1.
template <class T>
Var upsample1d(Tape<T>& tape, Var input) {
  const Shape& s = tape.shape(input);
  detail::require_rank(s, 3, "upsample1d", "input [B,L,C]");
  const std::size_t B = s[0], L = s[1], C = s[2];
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(Shape{B, 2 * L, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c) out(b, 2 * l, c) = out(b, 2 * l + 1, c) = x(b, l, c);
  return tape.record(std::move(out), {input}, [input, B, L, C](Tape<T>& t, const Tensor<T>& gy) {
    auto gx = t.grad_buffer(input);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t c = 0; c < C; ++c) {
          gx[(b * L + l) * C + c] += gy[(b * 2 * L + 2 * l) * C + c] + gy[(b * 2 * L + 2 * l + 1) * C + c];
        }
  });
}

/// Affine map: input[B,F] * weights[F,G] + bias[G].
template <class T>
Var dense(Tape<T>& tape, Var input, Var weights, Var bias) {
  const Shape& xs = tape.shape(input);
  const Shape& ws = tape.shape(weights);
  const Shape& bs = tape.shape(bias);
  detail::require_rank(xs, 2, "dense", "input [B,F]");
  detail::require_rank(ws, 2, "dense", "weights [F,G]");
  detail::require_rank(bs, 1, "dense", "bias [G]");
  if (xs[1] != ws[0]) {
    throw DimensionError("dense: input axis 1 is " + std::to_string(xs[1]) + " but weights axis 0 is " +
                         std::to_string(ws[0]));
  }
  if (bs[0] != ws[1]) {
    throw DimensionError("dense: bias axis 0 is " + std::to_string(bs[0]) + " but weights axis 1 is " +
                         std::to_string(ws[1]));
  }
  const std::size_t B = xs[0], F = xs[1], G = ws[1];
  using detail::ConstMatMap;
  using detail::MatMap;
  Tensor<T> out(Shape{B, G});
  MatMap<T> y(out.raw(), B, G);
  y.noalias() = ConstMatMap<T>(tape.value(input).raw(), B, F) * ConstMatMap<T>(tape.value(weights).raw(), F, G);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(tape.value(bias).raw(), G);
  return tape.record(std::move(out), {input, weights, bias},
                     [input, weights, bias, B, F, G](Tape<T>& t, const Tensor<T>& gy) {
                       ConstMatMap<T> dy(gy.raw(), B, G);
                       if (t.requires_grad(weights)) {
                         MatMap<T>(t.grad_buffer(weights).data(), F, G).noalias() +=
                             ConstMatMap<T>(t.value(input).raw(), B, F).transpose() * dy;
                       }
                       if (t.requires_grad(bias)) {
                         auto gb = t.grad_buffer(bias);
                         for (std::size_t g = 0; g < G; ++g) {
                           double acc = 0.0;
                           for (std::size_t b = 0; b < B; ++b) acc += gy[b * G + g];
                           gb[g] += static_cast<T>(acc);
                         }
                       }
                       if (t.requires_grad(input)) {
                         MatMap<T>(t.grad_buffer(input).data(), B, F).noalias() +=
                             dy * ConstMatMap<T>(t.value(weights).raw(), F, G).transpose();
                       }
                     });
}

/// Adds bias[C] along the last axis.
template <class T>
Var bias_add(Tape<T>& tape, Var input, Var bias) {
  const Shape& xs = tape.shape(input);
  const Shape& bs = tape.shape(bias);
  detail::require_rank(bs, 1, "bias_add", "bias [C]");
  if (xs.back() != bs[0]) {
    throw DimensionError("bias_add: input axis " + std::to_string(xs.size() - 1) + " is " +
                         std::to_string(xs.back()) + " but bias has " + std::to_string(bs[0]));
  }
  const std::size_t C = bs[0];
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& bv = tape.value(bias);
  Tensor<T> out(xs);
  const std::size_t rows = x.size() / C;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = x[r * C + c] + bv[c];
  return tape.record(std::move(out), {input, bias}, [input, bias, C](Tape<T>& t, const Tensor<T>& gy) {
    if (t.requires_grad(input)) {
      auto gx = t.grad_buffer(input);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (t.requires_grad(bias)) {
      std::vector<double> acc(C, 0.0);
      const std::size_t rows = gy.size() / C;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < C; ++c) acc[c] += gy[r * C + c];
      auto gb = t.grad_buffer(bias);
      for (std::size_t c = 0; c < C; ++c) gb[c] += static_cast<T>(acc[c]);
    }
  });
}

template <class T>
Var relu(Tape<T>& tape, Var x) {
  return detail::unary(
      tape, x, [](T v) { return std::max(v, T{0}); }, [](T v) { return static_cast<T>(v > T{0}); });
}

template <class T>
Var leaky_relu(Tape<T>& tape, Var x, T slope = T(0.2)) {
  return detail::unary(
      tape, x, [slope](T v) { return v > T{0} ? v : slope * v; },
      [slope](T v) { return slope + (T{1} - slope) * static_cast<T>(v > T{0}); });
}

template <class T>
Var exp(Tape<T>& tape, Var x) {
  return detail::unary(
      tape, x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <class T>
Var square(Tape<T>& tape, Var x) {
  return detail::unary(
      tape, x, [](T v) { return v * v; }, [](T v) { return T{2} * v; });
}

template <class T>
Var scale(Tape<T>& tape, Var x, T c) {
  return detail::unary(
      tape, x, [c](T v) { return c * v; }, [c](T) { return c; });
}

template <class T>
Var add_scalar(Tape<T>& tape, Var x, T c) {
  return detail::unary(
      tape, x, [c](T v) { return v + c; }, [](T) { return T{1}; });
}

namespace detail {

template <class T>
Var binary(Tape<T>& tape, Var a, Var b, const char* op, auto fwd, auto da, auto db) {
  require_same_shape(tape.shape(a), tape.shape(b), op);
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return tape.record(std::move(out), {a, b}, [a, b, da, db](Tape<T>& t, const Tensor<T>& gy) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    if (t.requires_grad(a)) {
      auto ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * da(av[i], bv[i]);
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * db(av[i], bv[i]);
    }
  });
}

}  // namespace detail

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  return detail::binary(
      tape, a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <class T>
Var sub(Tape<T>& tape, Var a, Var b) {
  return detail::binary(
      tape, a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  return detail::binary(
      tape, a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& gy) {
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

/// Sum of all elements as a [1] tensor.
template <class T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  double acc = 0.0;
  for (T v : xv.data()) acc += static_cast<double>(v);
  return tape.record(Tensor<T>::scalar(static_cast<T>(acc)), {x}, [x](Tape<T>& t, const Tensor<T>& gy) {
    auto gx = t.grad_buffer(x);
    for (auto& g : gx) g += gy[0];
  });
}

template <class T>
Var mean(Tape<T>& tape, Var x) {
  const double n = static_cast<double>(tape.value(x).size());
  return scale(tape, sum(tape, x), static_cast<T>(1.0 / n));
}

/// Column j of a [B,C] tensor as a [B] tensor.
template <class T>
Var select_column(Tape<T>& tape, Var x, std::size_t j) {
  const Shape& s = tape.shape(x);
  detail::require_rank(s, 2, "select_column", "input [B,C]");
  if (j >= s[1]) throw DimensionError("select_column: column " + std::to_string(j) + " out of range for axis 1");
  const std::size_t B = s[0], C = s[1];
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(Shape{B});
  for (std::size_t b = 0; b < B; ++b) out[b] = xv[b * C + j];
  return tape.record(std::move(out), {x}, [x, j, B, C](Tape<T>& t, const Tensor<T>& gy) {
    auto gx = t.grad_buffer(x);
    for (std::size_t b = 0; b < B; ++b) gx[b * C + j] += gy[b];
  });
}

/// Softmax over the last axis.
template <class T>
Var softmax(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  const std::size_t C = xv.shape().back(), rows = xv.size() / C;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.raw() + r * C;
    T* o = out.raw() + r * C;
    const T m = *std::max_element(in, in + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(static_cast<double>(in[c] - m));
    for (std::size_t c = 0; c < C; ++c) o[c] = static_cast<T>(std::exp(static_cast<double>(in[c] - m)) / z);
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return tape.record(std::move(out), {x}, [x, y, C, rows](Tape<T>& t, const Tensor<T>& gy) {
    auto gx = t.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += gy[r * C + c] * (*y)[r * C + c];
      for (std::size_t c = 0; c < C; ++c) {
        gx[r * C + c] += static_cast<T>((*y)[r * C + c] * (gy[r * C + c] - dot));
      }
    }
  });
}

/// log(softmax(x)) over the last axis, computed stably.
template <class T>
Var log_softmax(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  const std::size_t C = xv.shape().back(), rows = xv.size() / C;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.raw() + r * C;
    const T m = *std::max_element(in, in + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(static_cast<double>(in[c] - m));
    const double lse = static_cast<double>(m) + std::log(z);
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = static_cast<T>(in[c] - lse);
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return tape.record(std::move(out), {x}, [x, y, C, rows](Tape<T>& t, const Tensor<T>& gy) {
    auto gx = t.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < C; ++c) total += gy[r * C + c];
      for (std::size_t c = 0; c < C; ++c) {
        gx[r * C + c] += static_cast<T>(gy[r * C + c] - std::exp(static_cast<double>((*y)[r * C + c])) * total);
      }
    }
  });
}

}  // namespace regle
