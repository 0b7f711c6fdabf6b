#pragma once

// Differentiable operations over Tape<T>. Feature maps are NHWC; dense
// activations are [N, D]. Reductions accumulate in double.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "msv/error.hpp"
#include "msv/nn/tape.hpp"

namespace msv::nn {

namespace detail {

inline void ExpectRank(const Shape &s, int rank, const char *what) {
  if (static_cast<int>(s.size()) != rank)
    Fail(ErrorKind::kShapeMismatch, std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                                        ShapeString(s));
}

/// Same-padding geometry along one axis.
struct SamePad {
  int out = 0;
  int before = 0;
};

inline SamePad ComputeSamePad(int in, int kernel, int stride) {
  SamePad p;
  p.out = (in + stride - 1) / stride;
  const int total = std::max((p.out - 1) * stride + kernel - in, 0);
  p.before = total / 2;
  return p;
}

}  // namespace detail

template <typename T>
Var Add(Tape<T> &tape, Var a, Var b) {
  const Tensor<T> &va = tape.value(a), &vb = tape.value(b);
  if (va.shape() != vb.shape())
    Fail(ErrorKind::kShapeMismatch, "Add: " + ShapeString(va.shape()) + " vs " + ShapeString(vb.shape()));
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), rg, [&tape, a, b, y] {
    const Tensor<T> &gy = tape.grad(y);
    for (Var p : {a, b}) {
      if (!tape.requires_grad(p)) continue;
      Tensor<T> &gp = tape.grad(p);
      for (std::size_t i = 0; i < gy.size(); ++i) gp[i] += gy[i];
    }
  });
}

template <typename T>
Var Relu(Tape<T> &tape, Var x) {
  const Tensor<T> &vx = tape.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] > T(0) ? vx[i] : T(0);
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), tape.requires_grad(x), [&tape, x, y] {
    const Tensor<T> &gy = tape.grad(y);
    const Tensor<T> &vx = tape.value(x);
    Tensor<T> &gx = tape.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (vx[i] > T(0)) gx[i] += gy[i];
  });
}

template <typename T>
Var Tanh(Tape<T> &tape, Var x) {
  const Tensor<T> &vx = tape.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(vx[i]);
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), tape.requires_grad(x), [&tape, x, y] {
    const Tensor<T> &gy = tape.grad(y);
    const Tensor<T> &vy = tape.value(y);
    Tensor<T> &gx = tape.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (T(1) - vy[i] * vy[i]);
  });
}

template <typename T>
Var Reshape(Tape<T> &tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).Reshaped(std::move(shape));
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), tape.requires_grad(x), [&tape, x, y] {
    const Tensor<T> &gy = tape.grad(y);
    Tensor<T> &gx = tape.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

/// x [N, Din] * w [Din, Dout] (+ b [Dout]). Pass an invalid Var for no bias.
template <typename T>
Var Linear(Tape<T> &tape, Var x, Var w, Var b = Var{}) {
  const Tensor<T> &vx = tape.value(x), &vw = tape.value(w);
  detail::ExpectRank(vx.shape(), 2, "Linear input");
  detail::ExpectRank(vw.shape(), 2, "Linear weight");
  const int n = vx.dim(0), din = vx.dim(1), dout = vw.dim(1);
  if (vw.dim(0) != din)
    Fail(ErrorKind::kShapeMismatch, "Linear: input " + ShapeString(vx.shape()) + " vs weight " +
                                        ShapeString(vw.shape()));
  if (b.valid() && tape.value(b).shape() != Shape{dout})
    Fail(ErrorKind::kShapeMismatch, "Linear: bias shape " + ShapeString(tape.value(b).shape()));
  Tensor<T> out({n, dout});
  for (int i = 0; i < n; ++i) {
    T *row = out.data() + static_cast<std::size_t>(i) * dout;
    if (b.valid()) std::copy_n(tape.value(b).data(), dout, row);
    const T *xi = vx.data() + static_cast<std::size_t>(i) * din;
    for (int k = 0; k < din; ++k) {
      const T xv = xi[k];
      const T *wk = vw.data() + static_cast<std::size_t>(k) * dout;
      for (int j = 0; j < dout; ++j) row[j] += xv * wk[j];
    }
  }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), rg, [&tape, x, w, b, y, n, din, dout] {
    const Tensor<T> &gy = tape.grad(y);
    const Tensor<T> &vx = tape.value(x), &vw = tape.value(w);
    if (tape.requires_grad(x)) {
      Tensor<T> &gx = tape.grad(x);
      for (int i = 0; i < n; ++i) {
        const T *gi = gy.data() + static_cast<std::size_t>(i) * dout;
        T *gxi = gx.data() + static_cast<std::size_t>(i) * din;
        for (int k = 0; k < din; ++k) {
          const T *wk = vw.data() + static_cast<std::size_t>(k) * dout;
          T acc = 0;
          for (int j = 0; j < dout; ++j) acc += gi[j] * wk[j];
          gxi[k] += acc;
        }
      }
    }
    if (tape.requires_grad(w)) {
      Tensor<T> &gw = tape.grad(w);
      for (int i = 0; i < n; ++i) {
        const T *gi = gy.data() + static_cast<std::size_t>(i) * dout;
        const T *xi = vx.data() + static_cast<std::size_t>(i) * din;
        for (int k = 0; k < din; ++k) {
          T *gwk = gw.data() + static_cast<std::size_t>(k) * dout;
          const T xv = xi[k];
          for (int j = 0; j < dout; ++j) gwk[j] += xv * gi[j];
        }
      }
    }
    if (tape.requires_grad(b)) {
      Tensor<T> &gb = tape.grad(b);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < dout; ++j) gb[j] += gy[static_cast<std::size_t>(i) * dout + j];
    }
  });
}

/// Same-padded 2-D convolution. x [N, H, W, Cin], k [kh, kw, Cin, Cout];
/// output [N, ceil(H/sh), ceil(W/sw), Cout].
template <typename T>
Var Conv2d(Tape<T> &tape, Var x, Var k, int stride_h = 1, int stride_w = 1) {
  const Tensor<T> &vx = tape.value(x), &vk = tape.value(k);
  detail::ExpectRank(vx.shape(), 4, "Conv2d input");
  detail::ExpectRank(vk.shape(), 4, "Conv2d kernel");
  if (stride_h < 1 || stride_w < 1) Fail(ErrorKind::kInvalidArgument, "Conv2d: stride must be positive");
  const int n = vx.dim(0), h = vx.dim(1), w = vx.dim(2), cin = vx.dim(3);
  const int kh = vk.dim(0), kw = vk.dim(1), cout = vk.dim(3);
  if (vk.dim(2) != cin)
    Fail(ErrorKind::kShapeMismatch, "Conv2d: input " + ShapeString(vx.shape()) + " vs kernel " +
                                        ShapeString(vk.shape()));
  const detail::SamePad ph = detail::ComputeSamePad(h, kh, stride_h);
  const detail::SamePad pw = detail::ComputeSamePad(w, kw, stride_w);
  const int oh = ph.out, ow = pw.out;

  Tensor<T> out({n, oh, ow, cout});
  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T *dst = out.data() + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * cout;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride_h - ph.before + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride_w - pw.before + kx;
            if (ix < 0 || ix >= w) continue;
            const T *src = vx.data() + ((static_cast<std::size_t>(b) * h + iy) * w + ix) * cin;
            const T *ker = vk.data() + (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T xv = src[ci];
              const T *kr = ker + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) dst[co] += xv * kr[co];
            }
          }
        }
      }
    }
  }

  const bool rg = tape.requires_grad(x) || tape.requires_grad(k);
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), rg, [&tape, x, k, y, n, h, w, cin, kh, kw, cout, oh, ow, ph, pw, stride_h,
                                        stride_w] {
    const Tensor<T> &gy = tape.grad(y);
    const Tensor<T> &vx = tape.value(x), &vk = tape.value(k);
    const bool need_x = tape.requires_grad(x), need_k = tape.requires_grad(k);
    T *gx = need_x ? tape.grad(x).data() : nullptr;
    T *gk = need_k ? tape.grad(k).data() : nullptr;
    for (int b = 0; b < n; ++b) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const T *g = gy.data() + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * cout;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride_h - ph.before + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride_w - pw.before + kx;
              if (ix < 0 || ix >= w) continue;
              const std::size_t xoff = ((static_cast<std::size_t>(b) * h + iy) * w + ix) * cin;
              const std::size_t koff = (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
              for (int ci = 0; ci < cin; ++ci) {
                const T *kr = vk.data() + koff + static_cast<std::size_t>(ci) * cout;
                if (need_x) {
                  T acc = 0;
                  for (int co = 0; co < cout; ++co) acc += kr[co] * g[co];
                  gx[xoff + ci] += acc;
                }
                if (need_k) {
                  const T xv = vx[xoff + ci];
                  T *gkr = gk + koff + static_cast<std::size_t>(ci) * cout;
                  for (int co = 0; co < cout; ++co) gkr[co] += xv * g[co];
                }
              }
            }
          }
        }
      }
    }
  });
}

/// Running statistics owned by the model, updated in training mode.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

enum class Mode { kTrain, kEval };

/// Per-channel normalization over every axis but the last.
/// Training mode normalizes with batch statistics and, when `update` is
/// given, folds them into its running averages. Eval mode reads `stats`.
template <typename T>
Var BatchNorm(Tape<T> &tape, Var x, Var gamma, Var beta, const BatchNormStats<T> &stats, Mode mode,
              BatchNormStats<T> *update = nullptr, double eps = 1e-5, double momentum = 0.1) {
  const Tensor<T> &vx = tape.value(x);
  if (vx.rank() < 2) Fail(ErrorKind::kShapeMismatch, "BatchNorm: rank must be >= 2");
  const int c = vx.dim(-1);
  const std::size_t count = vx.size() / static_cast<std::size_t>(c);
  if (tape.value(gamma).shape() != Shape{c} || tape.value(beta).shape() != Shape{c} ||
      stats.running_mean.shape() != Shape{c} || stats.running_var.shape() != Shape{c})
    Fail(ErrorKind::kShapeMismatch, "BatchNorm: channel count " + std::to_string(c) + " mismatch");

  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (mode == Mode::kTrain) {
    std::vector<double> var(c, 0.0);
    for (std::size_t i = 0; i < count; ++i)
      for (int ch = 0; ch < c; ++ch) mean[ch] += vx[i * c + ch];
    for (int ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const double d = vx[i * c + ch] - mean[ch];
        var[ch] += d * d;
      }
    for (int ch = 0; ch < c; ++ch) {
      const double biased = var[ch] / static_cast<double>(count);
      inv_std[ch] = 1.0 / std::sqrt(biased + eps);
      const double unbiased = count > 1 ? var[ch] / static_cast<double>(count - 1) : biased;
      if (update != nullptr) {
        update->running_mean[ch] =
            static_cast<T>((1.0 - momentum) * update->running_mean[ch] + momentum * mean[ch]);
        update->running_var[ch] = static_cast<T>((1.0 - momentum) * update->running_var[ch] + momentum * unbiased);
      }
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(static_cast<double>(stats.running_var[ch]) + eps);
    }
  }

  const Tensor<T> &vg = tape.value(gamma), &vb = tape.value(beta);
  Tensor<T> out(vx.shape());
  Tensor<T> xhat(vx.shape());
  for (std::size_t i = 0; i < count; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t idx = i * c + ch;
      xhat[idx] = static_cast<T>((vx[idx] - mean[ch]) * inv_std[ch]);
      out[idx] = vg[ch] * xhat[idx] + vb[ch];
    }

  const bool rg = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), rg,
                   [&tape, x, gamma, beta, y, c, count, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                     const Tensor<T> &gy = tape.grad(y);
                     const Tensor<T> &vg = tape.value(gamma);
                     std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                     for (std::size_t i = 0; i < count; ++i)
                       for (int ch = 0; ch < c; ++ch) {
                         sum_g[ch] += gy[i * c + ch];
                         sum_gx[ch] += static_cast<double>(gy[i * c + ch]) * xhat[i * c + ch];
                       }
                     if (tape.requires_grad(gamma)) {
                       Tensor<T> &gg = tape.grad(gamma);
                       for (int ch = 0; ch < c; ++ch) gg[ch] += static_cast<T>(sum_gx[ch]);
                     }
                     if (tape.requires_grad(beta)) {
                       Tensor<T> &gb = tape.grad(beta);
                       for (int ch = 0; ch < c; ++ch) gb[ch] += static_cast<T>(sum_g[ch]);
                     }
                     if (!tape.requires_grad(x)) return;
                     Tensor<T> &gx = tape.grad(x);
                     const double m = static_cast<double>(count);
                     for (std::size_t i = 0; i < count; ++i)
                       for (int ch = 0; ch < c; ++ch) {
                         const std::size_t idx = i * c + ch;
                         const double scale = vg[ch] * inv_std[ch];
                         if (mode == Mode::kTrain)
                           gx[idx] += static_cast<T>(scale * (gy[idx] - sum_g[ch] / m - xhat[idx] * sum_gx[ch] / m));
                         else
                           gx[idx] += static_cast<T>(scale * gy[idx]);
                       }
                   });
}

/// [N, H, W, C] -> [N, W, H*C]: one feature vector per time step (W axis).
template <typename T>
Var ToSequence(Tape<T> &tape, Var x) {
  const Tensor<T> &vx = tape.value(x);
  detail::ExpectRank(vx.shape(), 4, "ToSequence");
  const int n = vx.dim(0), h = vx.dim(1), w = vx.dim(2), c = vx.dim(3);
  Tensor<T> out({n, w, h * c});
  for (int b = 0; b < n; ++b)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix)
        for (int ch = 0; ch < c; ++ch)
          out[((static_cast<std::size_t>(b) * w + ix) * h + iy) * c + ch] =
              vx[((static_cast<std::size_t>(b) * h + iy) * w + ix) * c + ch];
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), tape.requires_grad(x), [&tape, x, y, n, h, w, c] {
    const Tensor<T> &gy = tape.grad(y);
    Tensor<T> &gx = tape.grad(x);
    for (int b = 0; b < n; ++b)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix)
          for (int ch = 0; ch < c; ++ch)
            gx[((static_cast<std::size_t>(b) * h + iy) * w + ix) * c + ch] +=
                gy[((static_cast<std::size_t>(b) * w + ix) * h + iy) * c + ch];
  });
}

/// Row-wise softmax of a [N, T] matrix.
template <typename T>
Var SoftmaxRows(Tape<T> &tape, Var x) {
  const Tensor<T> &vx = tape.value(x);
  detail::ExpectRank(vx.shape(), 2, "SoftmaxRows");
  const int n = vx.dim(0), t = vx.dim(1);
  Tensor<T> out(vx.shape());
  for (int i = 0; i < n; ++i) {
    const T *row = vx.data() + static_cast<std::size_t>(i) * t;
    const double mx = *std::max_element(row, row + t);
    double z = 0.0;
    for (int j = 0; j < t; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < t; ++j) out[static_cast<std::size_t>(i) * t + j] = static_cast<T>(std::exp(row[j] - mx) / z);
  }
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), tape.requires_grad(x), [&tape, x, y, n, t] {
    const Tensor<T> &gy = tape.grad(y);
    const Tensor<T> &vy = tape.value(y);
    Tensor<T> &gx = tape.grad(x);
    for (int i = 0; i < n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * t;
      double dot = 0.0;
      for (int j = 0; j < t; ++j) dot += static_cast<double>(gy[off + j]) * vy[off + j];
      for (int j = 0; j < t; ++j) gx[off + j] += static_cast<T>(vy[off + j] * (gy[off + j] - dot));
    }
  });
}

inline constexpr double kStdFloor = 1e-9;

/// Weighted statistics pooling. h [N, T, D], alpha [N, T] (rows sum to 1)
/// -> [N, 2D] = concat(mu, sigma) with mu = sum_t alpha_t h_t and
/// sigma = sqrt(max(sum_t alpha_t h_t^2 - mu^2, kStdFloor)).
template <typename T>
Var AttentiveStats(Tape<T> &tape, Var h, Var alpha) {
  const Tensor<T> &vh = tape.value(h), &va = tape.value(alpha);
  detail::ExpectRank(vh.shape(), 3, "AttentiveStats input");
  const int n = vh.dim(0), t = vh.dim(1), d = vh.dim(2);
  if (va.shape() != Shape{n, t})
    Fail(ErrorKind::kShapeMismatch, "AttentiveStats: weights " + ShapeString(va.shape()) + " vs input " +
                                        ShapeString(vh.shape()));
  Tensor<T> out({n, 2 * d});
  std::vector<double> mu(static_cast<std::size_t>(n) * d), var(static_cast<std::size_t>(n) * d);
  for (int b = 0; b < n; ++b) {
    for (int k = 0; k < d; ++k) {
      double m1 = 0.0, m2 = 0.0;
      for (int s = 0; s < t; ++s) {
        const double a = va[static_cast<std::size_t>(b) * t + s];
        const double x = vh[(static_cast<std::size_t>(b) * t + s) * d + k];
        m1 += a * x;
        m2 += a * x * x;
      }
      const std::size_t idx = static_cast<std::size_t>(b) * d + k;
      mu[idx] = m1;
      var[idx] = m2 - m1 * m1;
      out[static_cast<std::size_t>(b) * 2 * d + k] = static_cast<T>(m1);
      out[static_cast<std::size_t>(b) * 2 * d + d + k] = static_cast<T>(std::sqrt(std::max(var[idx], kStdFloor)));
    }
  }
  const bool rg = tape.requires_grad(h) || tape.requires_grad(alpha);
  Var y{static_cast<int>(tape.size())};
  return tape.Push(std::move(out), rg, [&tape, h, alpha, y, n, t, d, mu = std::move(mu), var = std::move(var)] {
    const Tensor<T> &gy = tape.grad(y);
    const Tensor<T> &vh = tape.value(h), &va = tape.value(alpha);
    const bool need_h = tape.requires_grad(h), need_a = tape.requires_grad(alpha);
    for (int b = 0; b < n; ++b) {
      for (int k = 0; k < d; ++k) {
        const std::size_t idx = static_cast<std::size_t>(b) * d + k;
        const double g_mu = gy[static_cast<std::size_t>(b) * 2 * d + k];
        const double g_sd = gy[static_cast<std::size_t>(b) * 2 * d + d + k];
        // d sigma / d var vanishes where the floor is active.
        const double g_var = var[idx] > kStdFloor ? g_sd / (2.0 * std::sqrt(var[idx])) : 0.0;
        for (int s = 0; s < t; ++s) {
          const std::size_t hidx = (static_cast<std::size_t>(b) * t + s) * d + k;
          const std::size_t aidx = static_cast<std::size_t>(b) * t + s;
          const double x = vh[hidx];
          const double a = va[aidx];
          if (need_h) tape.grad(h)[hidx] += static_cast<T>(a * (g_mu + g_var * (2.0 * x - 2.0 * mu[idx])));
          if (need_a) tape.grad(alpha)[aidx] += static_cast<T>(g_mu * x + g_var * (x * x - 2.0 * mu[idx] * x));
        }
      }
    }
  });
}

/// Mean over the batch of -log softmax(logits)[label]. Returns a [1] tensor.
template <typename T>
Var SoftmaxCrossEntropy(Tape<T> &tape, Var logits, std::span<const int> labels) {
  const Tensor<T> &vl = tape.value(logits);
  detail::ExpectRank(vl.shape(), 2, "SoftmaxCrossEntropy");
  const int n = vl.dim(0), c = vl.dim(1);
  if (static_cast<int>(labels.size()) != n)
    Fail(ErrorKind::kShapeMismatch, "SoftmaxCrossEntropy: label count mismatch");
  for (int lab : labels)
    if (lab < 0 || lab >= c) Fail(ErrorKind::kLabelOutOfRange, "label " + std::to_string(lab));
  std::vector<double> prob(static_cast<std::size_t>(n) * c);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const T *row = vl.data() + static_cast<std::size_t>(i) * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < c; ++j) prob[static_cast<std::size_t>(i) * c + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[i]];
  }
  loss /= n;
  std::vector<int> labs(labels.begin(), labels.end());
  Var y{static_cast<int>(tape.size())};
  return tape.Push(Tensor<T>({1}, static_cast<T>(loss)), tape.requires_grad(logits),
                   [&tape, logits, y, n, c, prob = std::move(prob), labs = std::move(labs)] {
                     const double g = tape.grad(y)[0];
                     Tensor<T> &gl = tape.grad(logits);
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < c; ++j) {
                         const std::size_t idx = static_cast<std::size_t>(i) * c + j;
                         gl[idx] += static_cast<T>(g * (prob[idx] - (j == labs[i] ? 1.0 : 0.0)) / n);
                       }
                   });
}

inline constexpr double kMinEmbeddingNorm = 1e-12;

/// Angular prototypical loss. emb [N*M, D] grouped speaker-major (rows
/// k*M .. k*M+M-1 belong to speaker k). The first M-1 rows of each speaker
/// form its centroid, the last row is its query. omega and bias are [1].
template <typename T>
Var AngularPrototypical(Tape<T> &tape, Var emb, int n_speakers, int m, Var omega, Var bias) {
  const Tensor<T> &ve = tape.value(emb);
  detail::ExpectRank(ve.shape(), 2, "AngularPrototypical");
  if (m < 2) Fail(ErrorKind::kInvalidArgument, "AngularPrototypical: M must be >= 2");
  if (n_speakers < 1 || ve.dim(0) != n_speakers * m)
    Fail(ErrorKind::kShapeMismatch, "AngularPrototypical: expected " + std::to_string(n_speakers * m) + " rows");
  if (tape.value(omega).size() != 1 || tape.value(bias).size() != 1)
    Fail(ErrorKind::kShapeMismatch, "AngularPrototypical: omega and bias must be scalars");
  const int n = n_speakers, d = ve.dim(1);
  const double w = tape.value(omega)[0], b0 = tape.value(bias)[0];

  std::vector<double> centroid(static_cast<std::size_t>(n) * d, 0.0), query(static_cast<std::size_t>(n) * d);
  std::vector<double> cnorm(n), qnorm(n);
  for (int k = 0; k < n; ++k) {
    for (int r = 0; r < m - 1; ++r)
      for (int j = 0; j < d; ++j) centroid[static_cast<std::size_t>(k) * d + j] += ve[(static_cast<std::size_t>(k) * m + r) * d + j];
    double cs = 0.0, qs = 0.0;
    for (int j = 0; j < d; ++j) {
      double &cv = centroid[static_cast<std::size_t>(k) * d + j];
      cv /= (m - 1);
      const double qv = ve[(static_cast<std::size_t>(k) * m + m - 1) * d + j];
      query[static_cast<std::size_t>(k) * d + j] = qv;
      cs += cv * cv;
      qs += qv * qv;
    }
    cnorm[k] = std::sqrt(cs);
    qnorm[k] = std::sqrt(qs);
    if (cnorm[k] < kMinEmbeddingNorm || qnorm[k] < kMinEmbeddingNorm)
      Fail(ErrorKind::kDegenerateEmbedding, "near-zero embedding for speaker " + std::to_string(k));
  }
  std::vector<double> cosv(static_cast<std::size_t>(n) * n), prob(static_cast<std::size_t>(n) * n);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += query[static_cast<std::size_t>(i) * d + j] * centroid[static_cast<std::size_t>(k) * d + j];
      const double cs = dot / (qnorm[i] * cnorm[k]);
      cosv[static_cast<std::size_t>(i) * n + k] = cs;
      mx = std::max(mx, w * cs + b0);
    }
    double z = 0.0;
    for (int k = 0; k < n; ++k) z += std::exp(w * cosv[static_cast<std::size_t>(i) * n + k] + b0 - mx);
    const double lse = mx + std::log(z);
    for (int k = 0; k < n; ++k)
      prob[static_cast<std::size_t>(i) * n + k] = std::exp(w * cosv[static_cast<std::size_t>(i) * n + k] + b0 - lse);
    loss += lse - (w * cosv[static_cast<std::size_t>(i) * n + i] + b0);
  }
  loss /= n;

  const bool rg = tape.requires_grad(emb) || tape.requires_grad(omega) || tape.requires_grad(bias);
  Var y{static_cast<int>(tape.size())};
  return tape.Push(
      Tensor<T>({1}, static_cast<T>(loss)), rg,
      [&tape, emb, omega, bias, y, n, m, d, w, centroid = std::move(centroid), query = std::move(query),
       cnorm = std::move(cnorm), qnorm = std::move(qnorm), cosv = std::move(cosv), prob = std::move(prob)] {
        const double g = tape.grad(y)[0];
        // dL/dS_ik = (p_ik - [i == k]) / N
        std::vector<double> ds(static_cast<std::size_t>(n) * n);
        double g_w = 0.0, g_b = 0.0;
        for (int i = 0; i < n; ++i)
          for (int k = 0; k < n; ++k) {
            const std::size_t idx = static_cast<std::size_t>(i) * n + k;
            ds[idx] = g * (prob[idx] - (i == k ? 1.0 : 0.0)) / n;
            g_w += ds[idx] * cosv[idx];
            g_b += ds[idx];
          }
        if (tape.requires_grad(omega)) tape.grad(omega)[0] += static_cast<T>(g_w);
        if (tape.requires_grad(bias)) tape.grad(bias)[0] += static_cast<T>(g_b);
        if (!tape.requires_grad(emb)) return;
        std::vector<double> gq(static_cast<std::size_t>(n) * d, 0.0), gc(static_cast<std::size_t>(n) * d, 0.0);
        for (int i = 0; i < n; ++i)
          for (int k = 0; k < n; ++k) {
            const std::size_t idx = static_cast<std::size_t>(i) * n + k;
            const double dcos = w * ds[idx];
            if (dcos == 0.0) continue;
            const double inv = 1.0 / (qnorm[i] * cnorm[k]);
            const double cq = cosv[idx] / (qnorm[i] * qnorm[i]);
            const double cc = cosv[idx] / (cnorm[k] * cnorm[k]);
            for (int j = 0; j < d; ++j) {
              const double q = query[static_cast<std::size_t>(i) * d + j];
              const double c = centroid[static_cast<std::size_t>(k) * d + j];
              gq[static_cast<std::size_t>(i) * d + j] += dcos * (c * inv - cq * q);
              gc[static_cast<std::size_t>(k) * d + j] += dcos * (q * inv - cc * c);
            }
          }
        Tensor<T> &ge = tape.grad(emb);
        for (int k = 0; k < n; ++k)
          for (int j = 0; j < d; ++j) {
            for (int r = 0; r < m - 1; ++r)
              ge[(static_cast<std::size_t>(k) * m + r) * d + j] +=
                  static_cast<T>(gc[static_cast<std::size_t>(k) * d + j] / (m - 1));
            ge[(static_cast<std::size_t>(k) * m + m - 1) * d + j] += static_cast<T>(gq[static_cast<std::size_t>(k) * d + j]);
          }
      });
}

}  // namespace msv::nn
