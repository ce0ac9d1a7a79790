#pragma once

// Differentiable layer operations over Tensor<T>.
//
// Sequence ops accept [C, L] or batched [B, C, L] input and keep the rank of
// their input. Vector ops (dense, cross_entropy) accept [N] or [B, N].
// Gradients accumulate into existing buffers, so parameters shared between
// several ops receive the sum of their contributions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "clarae/tensor.hpp"

namespace clarae {

enum class Mode { train, eval };

namespace detail {

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc{0};
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
inline T sum(const T* x, std::size_t n) {
  T acc{0};
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

// Batch, channel and length extents of a [C, L] or [B, C, L] tensor.
struct SeqDims {
  std::size_t batch, channels, length;
};

template <typename T>
SeqDims seq_dims(const Tensor<T>& x, const char* op) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
  throw ShapeError(std::string(op) + ": expected [C,L] or [B,C,L], got " + to_string(x.shape()));
}

template <typename T>
Shape seq_shape(const Tensor<T>& like, std::size_t b, std::size_t c, std::size_t l) {
  if (like.rank() == 2) return {c, l};
  return {b, c, l};
}

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* op, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(op) + ": " + what + " must be " + to_string(expected) + ", got " +
                     to_string(t.shape()));
  }
}

// Index range [lo, hi) of output positions t whose input position t*stride+shift
// lies inside [0, len).
inline std::pair<std::size_t, std::size_t> valid_range(std::ptrdiff_t shift, std::size_t stride,
                                                       std::size_t len, std::size_t out_len) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(len) - 1 - shift;
  if (last < 0) return {0, 0};
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_len), last / s + 1);
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;

  /// Zero padding of (K-1)/2 on both ends; output length equals input length.
  static ConvGeometry same(std::size_t kernel) {
    if (kernel % 2 == 0) throw ShapeError("conv1d: same padding needs an odd kernel");
    return {1, (kernel - 1) / 2, (kernel - 1) / 2};
  }
};

/// out[c, t] = bias[c] + sum_{i,k} weight[c, i, k] * input_padded[i, t*stride + k].
/// weight is [C_out, C_in, K].
template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, ConvGeometry geo) {
  const auto [batch, cin, len] = detail::seq_dims(x, "conv1d");
  if (weight.rank() != 3 || weight.dim(1) != cin) {
    throw ShapeError("conv1d: weight " + to_string(weight.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  detail::require_shape(bias, {cout}, "conv1d", "bias");
  if (geo.stride == 0) throw ShapeError("conv1d: stride must be positive");
  const std::size_t padded = len + geo.pad_left + geo.pad_right;
  if (padded < k) throw ShapeError("conv1d: kernel longer than padded input");
  const std::size_t lout = (padded - k) / geo.stride + 1;
  const std::size_t stride = geo.stride;
  const auto pad = static_cast<std::ptrdiff_t>(geo.pad_left);

  Tensor<T> out(detail::seq_shape(x, batch, cout, lout));
  const T* xp = x.data();
  const T* wp = weight.data();
  const T* bp = bias.data();
  T* op = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* orow = op + (b * cout + co) * lout;
      std::fill(orow, orow + lout, bp[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xrow = xp + (b * cin + ci) * len;
        const T* wrow = wp + (co * cin + ci) * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
          const auto [lo, hi] = detail::valid_range(shift, stride, len, lout);
          if (lo >= hi) continue;
          if (stride == 1) {
            detail::axpy(wrow[kk], xrow + static_cast<std::ptrdiff_t>(lo) + shift, orow + lo, hi - lo);
          } else {
            for (std::size_t t = lo; t < hi; ++t) {
              orow[t] += wrow[kk] * xrow[static_cast<std::ptrdiff_t>(t * stride) + shift];
            }
          }
        }
      }
    }
  }

  if (tape.wants(x, weight, bias)) {
    out.set_requires_grad(true);
    tape.record([x, weight, bias, out, batch, cin, cout, len, lout, k, stride, pad]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad().data();
      const T* xv = x.data();
      const T* wv = weight.data();
      T* gx = x.requires_grad() ? x.ensure_grad().data() : nullptr;
      T* gw = weight.requires_grad() ? weight.ensure_grad().data() : nullptr;
      T* gb = bias.requires_grad() ? bias.ensure_grad().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
          const T* grow = go + (b * cout + co) * lout;
          if (gb) gb[co] += detail::sum(grow, lout);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* xrow = xv + (b * cin + ci) * len;
            const T* wrow = wv + (co * cin + ci) * k;
            T* gxrow = gx ? gx + (b * cin + ci) * len : nullptr;
            T* gwrow = gw ? gw + (co * cin + ci) * k : nullptr;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
              const auto [lo, hi] = detail::valid_range(shift, stride, len, lout);
              if (lo >= hi) continue;
              if (stride == 1) {
                const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(lo) + shift;
                if (gwrow) gwrow[kk] += detail::dot(grow + lo, xrow + base, hi - lo);
                if (gxrow) detail::axpy(wrow[kk], grow + lo, gxrow + base, hi - lo);
              } else {
                T acc{0};
                for (std::size_t t = lo; t < hi; ++t) {
                  const auto idx = static_cast<std::ptrdiff_t>(t * stride) + shift;
                  acc += grow[t] * xrow[idx];
                  if (gxrow) gxrow[idx] += wrow[kk] * grow[t];
                }
                if (gwrow) gwrow[kk] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// Stride-1 convolution with "same" zero padding.
template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 3) throw ShapeError("conv1d: weight must be [C_out, C_in, K]");
  return conv1d(tape, x, weight, bias, ConvGeometry::same(weight.dim(2)));
}

/// Transposed convolution (scatter-accumulate). weight is [C_in, C_out, K].
/// The full output has (L-1)*stride + K samples; with trim_to_stride_multiple
/// it is cut to exactly stride*L, removing floor(excess/2) samples on the left
/// and the rest on the right.
namespace detail {
// Input positions t whose scatter target t*stride + kk - trim lies in [0, lout).
inline std::pair<std::size_t, std::size_t> scatter_range(std::size_t kk, std::size_t trim, std::size_t stride,
                                                         std::size_t len, std::size_t lout) {
  const std::size_t t0 = kk >= trim ? 0 : (trim - kk + stride - 1) / stride;
  const std::size_t reach = lout + trim;
  if (reach <= kk) return {0, 0};
  const std::size_t t1 = std::min(len, (reach - kk - 1) / stride + 1);
  return {std::min(t0, t1), t1};
}
}  // namespace detail

template <typename T>
Tensor<T> conv1d_transpose(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t stride = 2,
                           bool trim_to_stride_multiple = true) {
  const auto [batch, cin, len] = detail::seq_dims(x, "conv1d_transpose");
  if (weight.rank() != 3 || weight.dim(0) != cin) {
    throw ShapeError("conv1d_transpose: weight " + to_string(weight.shape()) +
                     " incompatible with input " + to_string(x.shape()));
  }
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  detail::require_shape(bias, {cout}, "conv1d_transpose", "bias");
  if (stride == 0) throw ShapeError("conv1d_transpose: stride must be positive");
  const std::size_t full = (len - 1) * stride + k;
  std::size_t lout = full, trim_left = 0;
  if (trim_to_stride_multiple) {
    if (full < stride * len) throw ShapeError("conv1d_transpose: kernel shorter than stride");
    lout = stride * len;
    trim_left = (full - lout) / 2;
  }

  Tensor<T> out(detail::seq_shape(x, batch, cout, lout));
  const T* xp = x.data();
  const T* wp = weight.data();
  T* op = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* orow = op + (b * cout + co) * lout;
      std::fill(orow, orow + lout, bias.data()[co]);
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xrow = xp + (b * cin + ci) * len;
      for (std::size_t co = 0; co < cout; ++co) {
        T* orow = op + (b * cout + co) * lout;
        const T* wrow = wp + (ci * cout + co) * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const auto [t0, t1] = detail::scatter_range(kk, trim_left, stride, len, lout);
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(trim_left);
          const T w = wrow[kk];
#pragma omp simd
          for (std::size_t t = t0; t < t1; ++t) orow[static_cast<std::ptrdiff_t>(t * stride) + off] += xrow[t] * w;
        }
      }
    }
  }

  if (tape.wants(x, weight, bias)) {
    out.set_requires_grad(true);
    tape.record([x, weight, bias, out, batch, cin, cout, len, lout, k, stride, trim_left]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad().data();
      const T* xv = x.data();
      const T* wv = weight.data();
      T* gx = x.requires_grad() ? x.ensure_grad().data() : nullptr;
      T* gw = weight.requires_grad() ? weight.ensure_grad().data() : nullptr;
      T* gb = bias.requires_grad() ? bias.ensure_grad().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        if (gb) {
          for (std::size_t co = 0; co < cout; ++co) gb[co] += detail::sum(go + (b * cout + co) * lout, lout);
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T* xrow = xv + (b * cin + ci) * len;
          T* gxrow = gx ? gx + (b * cin + ci) * len : nullptr;
          for (std::size_t co = 0; co < cout; ++co) {
            const T* grow = go + (b * cout + co) * lout;
            const T* wrow = wv + (ci * cout + co) * k;
            T* gwrow = gw ? gw + (ci * cout + co) * k : nullptr;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const auto [t0, t1] = detail::scatter_range(kk, trim_left, stride, len, lout);
              const T* g = grow + (static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(trim_left));
              if (gwrow) {
                T acc{0};
#pragma omp simd reduction(+ : acc)
                for (std::size_t t = t0; t < t1; ++t) acc += xrow[t] * g[t * stride];
                gwrow[kk] += acc;
              }
              if (gxrow) {
                const T w = wrow[kk];
#pragma omp simd
                for (std::size_t t = t0; t < t1; ++t) gxrow[t] += w * g[t * stride];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Window 2, stride 2 max pooling; a trailing odd sample is dropped.
/// Ties route the gradient to the first index.
template <typename T>
Tensor<T> maxpool1d(Tape<T>& tape, const Tensor<T>& x) {
  const auto [batch, ch, len] = detail::seq_dims(x, "maxpool1d");
  if (len < 2) throw ShapeError("maxpool1d: length must be at least 2, got " + std::to_string(len));
  const std::size_t lout = len / 2;
  Tensor<T> out(detail::seq_shape(x, batch, ch, lout));
  std::vector<std::uint8_t> pick(batch * ch * lout);
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t r = 0; r < batch * ch; ++r) {
    const T* xrow = xp + r * len;
    T* orow = op + r * lout;
    std::uint8_t* prow = pick.data() + r * lout;
    for (std::size_t t = 0; t < lout; ++t) {
      const T a = xrow[2 * t], b = xrow[2 * t + 1];
      const bool second = b > a;
      orow[t] = second ? b : a;
      prow[t] = second ? 1 : 0;
    }
  }
  if (tape.wants(x)) {
    out.set_requires_grad(true);
    tape.record([x, out, pick = std::move(pick), rows = batch * ch, len, lout]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad().data();
      T* gx = x.ensure_grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t t = 0; t < lout; ++t) {
          gx[r * len + 2 * t + pick[r * lout + t]] += go[r * lout + t];
        }
      }
    });
  }
  return out;
}

/// Align-corners linear interpolation of each channel to target_len samples:
/// output j samples the input at position j*(L-1)/(target_len-1).
template <typename T>
Tensor<T> linear_upsample(Tape<T>& tape, const Tensor<T>& x, std::size_t target_len) {
  const auto [batch, ch, len] = detail::seq_dims(x, "linear_upsample");
  if (len < 2) throw ShapeError("linear_upsample: length must be at least 2");
  if (target_len < len) throw ShapeError("linear_upsample: target_len must be >= input length");
  std::vector<std::size_t> left(target_len);
  std::vector<T> frac(target_len);
  for (std::size_t j = 0; j < target_len; ++j) {
    const double pos = static_cast<double>(j) * static_cast<double>(len - 1) /
                       static_cast<double>(target_len - 1);
    auto i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 > len - 2) i0 = len - 2;
    left[j] = i0;
    frac[j] = static_cast<T>(pos - static_cast<double>(i0));
  }
  Tensor<T> out(detail::seq_shape(x, batch, ch, target_len));
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t r = 0; r < batch * ch; ++r) {
    const T* xrow = xp + r * len;
    T* orow = op + r * target_len;
    for (std::size_t j = 0; j < target_len; ++j) {
      const T f = frac[j];
      orow[j] = (T{1} - f) * xrow[left[j]] + f * xrow[left[j] + 1];
    }
  }
  if (tape.wants(x)) {
    out.set_requires_grad(true);
    tape.record([x, out, left = std::move(left), frac = std::move(frac), rows = batch * ch, len,
                 target_len]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad().data();
      T* gx = x.ensure_grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* grow = go + r * target_len;
        T* gxrow = gx + r * len;
        for (std::size_t j = 0; j < target_len; ++j) {
          gxrow[left[j]] += (T{1} - frac[j]) * grow[j];
          gxrow[left[j] + 1] += frac[j] * grow[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// out = weight * x + bias, mapped over the leading batch axis of a [B, N] input.
template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2) throw ShapeError("dense: weight must be [M, N]");
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  std::size_t batch = 0;
  if (x.rank() == 1 && x.dim(0) == n) {
    batch = 1;
  } else if (x.rank() == 2 && x.dim(1) == n) {
    batch = x.dim(0);
  } else {
    throw ShapeError("dense: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  detail::require_shape(bias, {m}, "dense", "bias");
  Tensor<T> out(x.rank() == 1 ? Shape{m} : Shape{batch, m});
  const T* xp = x.data();
  const T* wp = weight.data();
  const T* bp = bias.data();
  T* op = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) op[b * m + i] = bp[i] + detail::dot(wp + i * n, xp + b * n, n);
  }
  if (tape.wants(x, weight, bias)) {
    out.set_requires_grad(true);
    tape.record([x, weight, bias, out, batch, m, n]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad().data();
      const T* xv = x.data();
      const T* wv = weight.data();
      T* gx = x.requires_grad() ? x.ensure_grad().data() : nullptr;
      T* gw = weight.requires_grad() ? weight.ensure_grad().data() : nullptr;
      T* gb = bias.requires_grad() ? bias.ensure_grad().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
          const T g = go[b * m + i];
          if (g == T{0}) continue;
          if (gb) gb[i] += g;
          if (gx) detail::axpy(g, wv + i * n, gx + b * n, n);
          if (gw) detail::axpy(g, xv + b * n, gw + i * n, n);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}), running_var(Shape{channels}, std::vector<T>(channels, T{1})) {}
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

namespace detail {

template <typename T>
Tensor<T> batchnorm_apply(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                          const Tensor<T>& beta, std::vector<double> mean, std::vector<double> var,
                          double eps, bool batch_stats) {
  const auto [batch, ch, len] = seq_dims(x, "batchnorm1d");
  const std::size_t n = batch * len;
  std::vector<T> inv_std(ch), shift(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(var[c] + eps));
    shift[c] = static_cast<T>(mean[c]);
  }
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  const T* xp = x.data();
  const T* g = gamma.data();
  const T* bt = beta.data();
  T* op = out.data();
  T* hp = xhat.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t off = (b * ch + c) * len;
      const T is = inv_std[c], mu = shift[c], gc = g[c], bc = bt[c];
      for (std::size_t t = 0; t < len; ++t) {
        const T h = (xp[off + t] - mu) * is;
        hp[off + t] = h;
        op[off + t] = gc * h + bc;
      }
    }
  }
  if (tape.wants(x, gamma, beta)) {
    out.set_requires_grad(true);
    tape.record([x, gamma, beta, out, xhat, inv_std = std::move(inv_std), batch, ch, len, n,
                 batch_stats]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad().data();
      const T* hp = xhat.data();
      const T* gv = gamma.data();
      T* gx = x.requires_grad() ? x.ensure_grad().data() : nullptr;
      T* gg = gamma.requires_grad() ? gamma.ensure_grad().data() : nullptr;
      T* gb = beta.requires_grad() ? beta.ensure_grad().data() : nullptr;
      for (std::size_t c = 0; c < ch; ++c) {
        double sum_g = 0.0, sum_gh = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * ch + c) * len;
          for (std::size_t t = 0; t < len; ++t) {
            sum_g += go[off + t];
            sum_gh += static_cast<double>(go[off + t]) * hp[off + t];
          }
        }
        if (gg) gg[c] += static_cast<T>(sum_gh);
        if (gb) gb[c] += static_cast<T>(sum_g);
        if (!gx) continue;
        const T scale = gv[c] * inv_std[c];
        if (batch_stats) {
          // dx = gamma*inv_std/n * (n*dy - sum(dy) - xhat*sum(dy*xhat))
          const T mean_g = static_cast<T>(sum_g / static_cast<double>(n));
          const T mean_gh = static_cast<T>(sum_gh / static_cast<double>(n));
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * ch + c) * len;
            for (std::size_t t = 0; t < len; ++t) {
              gx[off + t] += scale * (go[off + t] - mean_g - hp[off + t] * mean_gh);
            }
          }
        } else {
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * ch + c) * len;
            for (std::size_t t = 0; t < len; ++t) gx[off + t] += scale * go[off + t];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

/// Train mode: normalizes with the batch statistics over (B, L) per channel
/// and folds them into the running statistics (unbiased variance).
/// Eval mode: normalizes with the running statistics, state untouched.
template <typename T>
Tensor<T> batchnorm1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormState<T>& state, Mode mode,
                      BatchNormOptions opt = {}) {
  const auto [batch, ch, len] = detail::seq_dims(x, "batchnorm1d");
  detail::require_shape(gamma, {ch}, "batchnorm1d", "gamma");
  detail::require_shape(beta, {ch}, "batchnorm1d", "beta");
  detail::require_shape(state.running_mean, {ch}, "batchnorm1d", "running_mean");
  if (mode == Mode::eval) {
    const auto& cs = state;
    return batchnorm1d(tape, x, gamma, beta, cs, opt);
  }
  const std::size_t n = batch * len;
  if (n < 2) throw ShapeError("batchnorm1d: train mode needs at least 2 values per channel");
  std::vector<double> mean(ch, 0.0), var(ch, 0.0);
  const T* xp = x.data();
  for (std::size_t c = 0; c < ch; ++c) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = xp + (b * ch + c) * len;
      for (std::size_t t = 0; t < len; ++t) s += row[t];
    }
    mean[c] = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = xp + (b * ch + c) * len;
      for (std::size_t t = 0; t < len; ++t) {
        const double d = row[t] - mean[c];
        ss += d * d;
      }
    }
    var[c] = ss / static_cast<double>(n);
  }
  T* rm = state.running_mean.data();
  T* rv = state.running_var.data();
  const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
  for (std::size_t c = 0; c < ch; ++c) {
    rm[c] = static_cast<T>((1.0 - opt.momentum) * rm[c] + opt.momentum * mean[c]);
    rv[c] = static_cast<T>((1.0 - opt.momentum) * rv[c] + opt.momentum * var[c] * unbias);
  }
  return detail::batchnorm_apply(tape, x, gamma, beta, std::move(mean), std::move(var), opt.eps, true);
}

/// Eval-mode batch normalization; reads the running statistics only.
template <typename T>
Tensor<T> batchnorm1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, const BatchNormState<T>& state,
                      BatchNormOptions opt = {}) {
  const std::size_t ch = state.running_mean.size();
  std::vector<double> mean(ch), var(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    mean[c] = state.running_mean.values()[c];
    var[c] = state.running_var.values()[c];
  }
  return detail::batchnorm_apply(tape, x, gamma, beta, std::move(mean), std::move(var), opt.eps, false);
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace detail {

// Applies f elementwise; df(x, y) is the local derivative given input x and output y.
template <typename T, typename F, typename DF>
Tensor<T> unary(Tape<T>& tape, const Tensor<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
  if (tape.wants(x)) {
    out.set_requires_grad(true);
    tape.record([x, out, df]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gx = x.ensure_grad();
      auto xv = x.values();
      auto yv = out.values();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * df(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> leaky_relu(Tape<T>& tape, const Tensor<T>& x, T alpha) {
  return detail::unary(
      tape, x, [alpha](T v) { return v > T{0} ? v : alpha * v; },
      [alpha](T v, T) { return v > T{0} ? T{1} : alpha; });
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary(
      tape, x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

/// tanh with saturated results rounded toward zero: the exact value never
/// reaches +-1, so neither does the output, even where float rounding would.
template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
  const T edge = std::nextafter(T{1}, T{0});
  return detail::unary(
      tape, x, [edge](T v) { return std::clamp(std::tanh(v), -edge, edge); },
      [](T, T y) { return T{1} - y * y; });
}

/// Inverted dropout: in train mode each element is zeroed with probability p
/// and survivors are scaled by 1/(1-p). Eval mode returns the input itself.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double p, Mode mode, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = u(rng) < p ? T{0} : keep_scale;
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < mask.size(); ++i) ov[i] = xv[i] * mask[i];
  if (tape.wants(x)) {
    out.set_requires_grad(true);
    tape.record([x, out, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * mask[i];
    });
  }
  return out;
}

/// Elementwise product of equally shaped tensors.
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (tape.wants(a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.values()[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.values()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.values()) s += v;
  auto out = Tensor<T>::scalar(static_cast<T>(s));
  if (tape.wants(x)) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (auto& v : x.ensure_grad()) v += g;
    });
  }
  return out;
}

/// Same values under a new shape (copying; gradients flow back unchanged).
template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  if (tape.wants(x)) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// (1/N) * sum (y - yhat)^2 over all N elements.
template <typename T>
Tensor<T> mse_loss(Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& yhat) {
  if (y.shape() != yhat.shape()) {
    throw ShapeError("mse_loss: shapes " + to_string(y.shape()) + " and " + to_string(yhat.shape()) +
                     " differ");
  }
  const std::size_t n = y.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(y.values()[i]) - yhat.values()[i];
    s += d * d;
  }
  auto out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
  if (tape.wants(y, yhat)) {
    out.set_requires_grad(true);
    tape.record([y, yhat, out, n]() mutable {
      if (!out.has_grad()) return;
      const T scale = out.grad()[0] * T{2} / static_cast<T>(n);
      T* gy = y.requires_grad() ? y.ensure_grad().data() : nullptr;
      T* gh = yhat.requires_grad() ? yhat.ensure_grad().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = yhat.values()[i] - y.values()[i];
        if (gh) gh[i] += scale * d;
        if (gy) gy[i] -= scale * d;
      }
    });
  }
  return out;
}

/// Row-wise softmax of [K] or [B, K] logits (no gradient).
template <typename T>
std::vector<T> softmax_rows(std::span<const T> logits, std::size_t classes) {
  std::vector<T> probs(logits.size());
  for (std::size_t r = 0; r * classes < logits.size(); ++r) {
    const T* in = logits.data() + r * classes;
    T* out = probs.data() + r * classes;
    const T mx = *std::max_element(in, in + classes);
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) z += std::exp(static_cast<double>(in[k] - mx));
    for (std::size_t k = 0; k < classes; ++k) {
      out[k] = static_cast<T>(std::exp(static_cast<double>(in[k] - mx)) / z);
    }
  }
  return probs;
}

/// Mean negative log-likelihood of integer labels under softmax(logits).
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t classes = logits.shape().back();
  const std::size_t batch = logits.size() / classes;
  if (labels.size() != batch) throw ShapeError("cross_entropy: label count does not match batch");
  auto probs = softmax_rows<T>(logits.values(), classes);
  double nll = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw std::invalid_argument("cross_entropy: label out of range");
    }
    nll -= std::log(std::max(static_cast<double>(probs[b * classes + labels[b]]),
                             std::numeric_limits<double>::min()));
  }
  auto out = Tensor<T>::scalar(static_cast<T>(nll / static_cast<double>(batch)));
  if (tape.wants(logits)) {
    out.set_requires_grad(true);
    std::vector<int> lab(labels.begin(), labels.end());
    tape.record([logits, out, probs = std::move(probs), lab = std::move(lab), batch, classes]() mutable {
      if (!out.has_grad()) return;
      const T scale = out.grad()[0] / static_cast<T>(batch);
      auto g = logits.ensure_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < classes; ++k) {
          const T target = static_cast<std::size_t>(lab[b]) == k ? T{1} : T{0};
          g[b * classes + k] += scale * (probs[b * classes + k] - target);
        }
      }
    });
  }
  return out;
}

}  // namespace clarae
