#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace cbamnet {

enum class Padding { kSame, kValid };
enum class Mode { kTrain, kInfer };

namespace detail {

// col is (C_in*k*k, H_out*W_out), row index (c*k + ki)*k + kj.
template <typename S>
void im2col(const S* x, std::int64_t c_in, std::int64_t h, std::int64_t w,
            std::int64_t k, std::int64_t pad, std::int64_t stride,
            std::int64_t h_out, std::int64_t w_out, S* col) {
  for (std::int64_t c = 0; c < c_in; ++c) {
    const S* plane = x + c * h * w;
    for (std::int64_t ki = 0; ki < k; ++ki)
      for (std::int64_t kj = 0; kj < k; ++kj) {
        S* row = col + ((c * k + ki) * k + kj) * h_out * w_out;
        for (std::int64_t oy = 0; oy < h_out; ++oy) {
          const std::int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) {
            std::fill_n(row + oy * w_out, w_out, S(0));
            continue;
          }
          for (std::int64_t ox = 0; ox < w_out; ++ox) {
            const std::int64_t ix = ox * stride + kj - pad;
            row[oy * w_out + ox] =
                (ix >= 0 && ix < w) ? plane[iy * w + ix] : S(0);
          }
        }
      }
  }
}

// Scatter-accumulate of a column buffer back into an image plane.
template <typename S>
void col2im(const S* col, std::int64_t c_in, std::int64_t h, std::int64_t w,
            std::int64_t k, std::int64_t pad, std::int64_t stride,
            std::int64_t h_out, std::int64_t w_out, S* x) {
  for (std::int64_t c = 0; c < c_in; ++c) {
    S* plane = x + c * h * w;
    for (std::int64_t ki = 0; ki < k; ++ki)
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const S* row = col + ((c * k + ki) * k + kj) * h_out * w_out;
        for (std::int64_t oy = 0; oy < h_out; ++oy) {
          const std::int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < w_out; ++ox) {
            const std::int64_t ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += row[oy * w_out + ox];
          }
        }
      }
  }
}

template <typename S>
std::vector<S>& conv_scratch() {
  thread_local std::vector<S> buf;
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conv2D (cross-correlation)
// ---------------------------------------------------------------------------

template <typename S>
struct Conv2DT {
  TensorT<S> weight;                // (C_out, C_in, k, k)
  std::optional<TensorT<S>> bias;   // (1, C_out, 1, 1)
  int stride = 1;
  Padding padding = Padding::kSame;

  std::int64_t out_channels() const { return weight.shape().n; }
  std::int64_t in_channels() const { return weight.shape().c; }
  std::int64_t kernel() const { return weight.shape().h; }

  TensorT<S> forward(const TensorT<S>& x) const {
    const Shape& xs = x.shape();
    const std::int64_t k = kernel();
    if (xs.c != in_channels())
      throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                       " channels, layer expects " +
                       std::to_string(in_channels()));
    if (padding == Padding::kSame && k % 2 == 0)
      throw ValueError("conv2d: same padding requires an odd kernel");
    const std::int64_t pad = padding == Padding::kSame ? (k - 1) / 2 : 0;
    if (padding == Padding::kValid && (xs.h < k || xs.w < k))
      throw ShapeError("conv2d: input " + xs.str() +
                       " smaller than kernel under valid padding");
    const std::int64_t h_out = (xs.h + 2 * pad - k) / stride + 1;
    const std::int64_t w_out = (xs.w + 2 * pad - k) / stride + 1;
    const std::int64_t c_out = out_channels();
    const std::int64_t kk = xs.c * k * k;
    const std::int64_t hw = h_out * w_out;

    std::vector<std::shared_ptr<TensorDataT<S>>> ins{x.data(), weight.data()};
    if (bias) ins.push_back(bias->data());
    auto out = detail::make_result<S>(
        Shape{xs.n, c_out, h_out, w_out}, std::move(ins),
        [xd = x.data(), wd = weight.data(),
         bd = bias ? bias->data() : nullptr, pad, k, stride = this->stride,
         h_out, w_out](TensorDataT<S>& out) {
          const Shape& xs = xd->shape;
          const std::int64_t c_out = wd->shape.n;
          const std::int64_t kk = xs.c * k * k;
          const std::int64_t hw = h_out * w_out;
          auto& col = detail::conv_scratch<S>();
          col.resize(static_cast<size_t>(kk * hw));
          std::vector<S> colg;
          if (xd->requires_grad) {
            xd->ensure_grad();
            colg.resize(static_cast<size_t>(kk * hw));
          }
          if (wd->requires_grad) wd->ensure_grad();
          for (std::int64_t n = 0; n < xs.n; ++n) {
            const S* gy = out.grad.data() + n * c_out * hw;
            if (wd->requires_grad) {
              detail::im2col(xd->values.data() + n * xs.c * xs.h * xs.w, xs.c,
                             xs.h, xs.w, k, pad, stride, h_out, w_out,
                             col.data());
              // dW += dY (C_out,HW) x col^T (HW,KK)
              gemm(false, true, static_cast<int>(c_out), static_cast<int>(kk),
                   static_cast<int>(hw), S(1), gy, static_cast<int>(hw),
                   col.data(), static_cast<int>(hw), S(1), wd->grad.data(),
                   static_cast<int>(kk));
            }
            if (xd->requires_grad) {
              // dcol = W^T (KK,C_out) x dY (C_out,HW)
              gemm(true, false, static_cast<int>(kk), static_cast<int>(hw),
                   static_cast<int>(c_out), S(1), wd->values.data(),
                   static_cast<int>(kk), gy, static_cast<int>(hw), S(0),
                   colg.data(), static_cast<int>(hw));
              detail::col2im(colg.data(), xs.c, xs.h, xs.w, k, pad, stride,
                             h_out, w_out,
                             xd->grad.data() + n * xs.c * xs.h * xs.w);
            }
          }
          if (bd && bd->requires_grad) {
            bd->ensure_grad();
            for (std::int64_t n = 0; n < xs.n; ++n)
              for (std::int64_t c = 0; c < c_out; ++c) {
                S acc = 0;
                const S* gy = out.grad.data() + (n * c_out + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) acc += gy[i];
                bd->grad[c] += acc;
              }
          }
        });

    auto& col = detail::conv_scratch<S>();
    col.resize(static_cast<size_t>(kk * hw));
    for (std::int64_t n = 0; n < xs.n; ++n) {
      detail::im2col(x.values().data() + n * xs.c * xs.h * xs.w, xs.c, xs.h,
                     xs.w, k, pad, stride, h_out, w_out, col.data());
      gemm(false, false, static_cast<int>(c_out), static_cast<int>(hw),
           static_cast<int>(kk), S(1), weight.values().data(),
           static_cast<int>(kk), col.data(), static_cast<int>(hw), S(0),
           out.values().data() + n * c_out * hw, static_cast<int>(hw));
    }
    if (bias) {
      for (std::int64_t n = 0; n < xs.n; ++n)
        for (std::int64_t c = 0; c < c_out; ++c) {
          S b = bias->values()[c];
          S* o = out.values().data() + (n * c_out + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) o[i] += b;
        }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// BatchNorm2D
// ---------------------------------------------------------------------------

template <typename S>
struct BatchNorm2DT {
  TensorT<S> gamma, beta;              // (1, C, 1, 1), trainable
  TensorT<S> running_mean, running_var;  // (1, C, 1, 1), buffers
  S momentum = S(0.9);                 // new = momentum*old + (1-momentum)*batch
  S epsilon = S(1e-5);
  Mode mode = Mode::kTrain;
  bool stats_ready = false;

  static BatchNorm2DT make(std::int64_t channels) {
    BatchNorm2DT bn;
    bn.gamma = TensorT<S>::full({1, channels, 1, 1}, S(1), true);
    bn.beta = TensorT<S>::zeros({1, channels, 1, 1}, true);
    bn.running_mean = TensorT<S>::zeros({1, channels, 1, 1});
    bn.running_var = TensorT<S>::full({1, channels, 1, 1}, S(1));
    return bn;
  }

  std::int64_t channels() const { return gamma.shape().c; }

  TensorT<S> forward(const TensorT<S>& x) {
    const Shape& xs = x.shape();
    if (xs.c != channels())
      throw ShapeError("batchnorm: input has " + std::to_string(xs.c) +
                       " channels, layer expects " +
                       std::to_string(channels()));
    if (mode == Mode::kInfer && !stats_ready)
      throw ValueError(
          "batchnorm: inference requested before any statistics exist");
    const std::int64_t m = xs.n * xs.h * xs.w;  // per-channel sample count
    const std::int64_t hw = xs.h * xs.w;

    // Per-channel mean and inverse stddev used for this forward.
    std::vector<S> mean(xs.c), invstd(xs.c);
    if (mode == Mode::kTrain) {
      for (std::int64_t c = 0; c < xs.c; ++c) {
        S mu = 0;
        for (std::int64_t n = 0; n < xs.n; ++n) {
          const S* p = x.values().data() + (n * xs.c + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) mu += p[i];
        }
        mu /= static_cast<S>(m);
        S var = 0;
        for (std::int64_t n = 0; n < xs.n; ++n) {
          const S* p = x.values().data() + (n * xs.c + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            S d = p[i] - mu;
            var += d * d;
          }
        }
        var /= static_cast<S>(m);
        mean[c] = mu;
        invstd[c] = S(1) / std::sqrt(var + epsilon);
        running_mean.values()[c] =
            momentum * running_mean.values()[c] + (S(1) - momentum) * mu;
        running_var.values()[c] =
            momentum * running_var.values()[c] + (S(1) - momentum) * var;
      }
      stats_ready = true;
    } else {
      for (std::int64_t c = 0; c < xs.c; ++c) {
        mean[c] = running_mean.values()[c];
        invstd[c] = S(1) / std::sqrt(running_var.values()[c] + epsilon);
      }
    }

    auto xhat = std::make_shared<std::vector<S>>(x.values().size());
    const bool train = mode == Mode::kTrain;
    auto out = detail::make_result<S>(
        xs, {x.data(), gamma.data(), beta.data()},
        [xd = x.data(), gd = gamma.data(), bd = beta.data(), xhat,
         invstd = std::make_shared<std::vector<S>>(invstd),
         train](TensorDataT<S>& out) {
          const Shape& xs = xd->shape;
          const std::int64_t hw = xs.h * xs.w;
          const std::int64_t m = xs.n * hw;
          if (gd->requires_grad) gd->ensure_grad();
          if (bd->requires_grad) bd->ensure_grad();
          if (xd->requires_grad) xd->ensure_grad();
          for (std::int64_t c = 0; c < xs.c; ++c) {
            S sum_g = 0, sum_gx = 0;
            for (std::int64_t n = 0; n < xs.n; ++n) {
              const std::int64_t base = (n * xs.c + c) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                const S g = out.grad[base + i];
                sum_g += g;
                sum_gx += g * (*xhat)[base + i];
              }
            }
            if (gd->requires_grad) gd->grad[c] += sum_gx;
            if (bd->requires_grad) bd->grad[c] += sum_g;
            if (!xd->requires_grad) continue;
            const S ga = gd->values[c];
            const S is = (*invstd)[c];
            if (train) {
              const S inv_m = S(1) / static_cast<S>(m);
              for (std::int64_t n = 0; n < xs.n; ++n) {
                const std::int64_t base = (n * xs.c + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                  const S g = out.grad[base + i];
                  xd->grad[base + i] +=
                      ga * is *
                      (g - inv_m * sum_g - (*xhat)[base + i] * inv_m * sum_gx);
                }
              }
            } else {
              for (std::int64_t n = 0; n < xs.n; ++n) {
                const std::int64_t base = (n * xs.c + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i)
                  xd->grad[base + i] += out.grad[base + i] * ga * is;
              }
            }
          }
        });
    for (std::int64_t n = 0; n < xs.n; ++n)
      for (std::int64_t c = 0; c < xs.c; ++c) {
        const std::int64_t base = (n * xs.c + c) * hw;
        const S mu = mean[c], is = invstd[c];
        const S ga = gamma.values()[c], be = beta.values()[c];
        for (std::int64_t i = 0; i < hw; ++i) {
          const S xh = (x.values()[base + i] - mu) * is;
          (*xhat)[base + i] = xh;
          out.values()[base + i] = ga * xh + be;
        }
      }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// 2x2/stride-2 max pooling; gradient routes to the first (row-major) argmax.
template <typename S>
TensorT<S> maxpool2d(const TensorT<S>& x) {
  const Shape& xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    throw ShapeError("maxpool2d: spatial extents must be even, got " +
                     xs.str());
  const std::int64_t ho = xs.h / 2, wo = xs.w / 2;
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<size_t>(xs.n * xs.c * ho * wo));
  auto out = detail::make_result<S>(
      Shape{xs.n, xs.c, ho, wo}, {x.data()},
      [xd = x.data(), argmax](TensorDataT<S>& out) {
        if (!xd->requires_grad) return;
        xd->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i)
          xd->grad[(*argmax)[i]] += out.grad[i];
      });
  std::int64_t o = 0;
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t c = 0; c < xs.c; ++c) {
      const S* plane = x.values().data() + (n * xs.c + c) * xs.h * xs.w;
      const std::int64_t pbase = (n * xs.c + c) * xs.h * xs.w;
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox, ++o) {
          S best = -std::numeric_limits<S>::infinity();
          std::int64_t bi = 0;
          for (std::int64_t dy = 0; dy < 2; ++dy)
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const std::int64_t idx = (2 * oy + dy) * xs.w + (2 * ox + dx);
              if (plane[idx] > best) {
                best = plane[idx];
                bi = idx;
              }
            }
          out.values()[o] = best;
          (*argmax)[o] = pbase + bi;
        }
    }
  return out;
}

/// Per-channel spatial mean: (N,C,H,W) -> (N,C,1,1).
template <typename S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
  const Shape& xs = x.shape();
  if (xs.h * xs.w < 1) throw ShapeError("global_avg_pool: empty spatial extent");
  const std::int64_t hw = xs.h * xs.w;
  auto out = detail::make_result<S>(
      Shape{xs.n, xs.c, 1, 1}, {x.data()}, [xd = x.data()](TensorDataT<S>& out) {
        if (!xd->requires_grad) return;
        xd->ensure_grad();
        const Shape& xs = xd->shape;
        const std::int64_t hw = xs.h * xs.w;
        const S inv = S(1) / static_cast<S>(hw);
        for (std::int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
          const S g = out.grad[nc] * inv;
          for (std::int64_t i = 0; i < hw; ++i) xd->grad[nc * hw + i] += g;
        }
      });
  const S inv = S(1) / static_cast<S>(hw);
  for (std::int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
    S acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += x.values()[nc * hw + i];
    out.values()[nc] = acc * inv;
  }
  return out;
}

/// Per-channel spatial max: (N,C,H,W) -> (N,C,1,1); argmax-routed gradient.
template <typename S>
TensorT<S> global_max_pool(const TensorT<S>& x) {
  const Shape& xs = x.shape();
  if (xs.h * xs.w < 1) throw ShapeError("global_max_pool: empty spatial extent");
  const std::int64_t hw = xs.h * xs.w;
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<size_t>(xs.n * xs.c));
  auto out = detail::make_result<S>(
      Shape{xs.n, xs.c, 1, 1}, {x.data()},
      [xd = x.data(), argmax](TensorDataT<S>& out) {
        if (!xd->requires_grad) return;
        xd->ensure_grad();
        const std::int64_t hw = xd->shape.h * xd->shape.w;
        for (size_t nc = 0; nc < out.grad.size(); ++nc)
          xd->grad[nc * hw + (*argmax)[nc]] += out.grad[nc];
      });
  for (std::int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const S* p = x.values().data() + nc * hw;
    std::int64_t bi = 0;
    for (std::int64_t i = 1; i < hw; ++i)
      if (p[i] > p[bi]) bi = i;
    out.values()[nc] = p[bi];
    (*argmax)[nc] = bi;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

template <typename S>
struct DenseT {
  TensorT<S> weight;  // (out, in, 1, 1)
  TensorT<S> bias;    // (1, out, 1, 1)

  std::int64_t in_features() const { return weight.shape().c; }
  std::int64_t out_features() const { return weight.shape().n; }

  /// x viewed (N, in) -> x W^T + b viewed (N, out).
  TensorT<S> forward(const TensorT<S>& x) const {
    const std::int64_t fan_in = x.shape().c * x.shape().h * x.shape().w;
    if (fan_in != in_features())
      throw ShapeError("dense: fan-in " + std::to_string(fan_in) +
                       " does not match layer input " +
                       std::to_string(in_features()));
    return add(matmul(x, weight, /*transpose_b=*/true), bias);
  }
};

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout. The mask is a deterministic function of (seed, counter).
template <typename S>
struct DropoutT {
  S rate = S(0.5);
  Mode mode = Mode::kTrain;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  static DropoutT make(S rate, std::uint64_t seed) {
    if (!(rate >= S(0) && rate < S(1)))
      throw ValueError("dropout: rate must lie in [0,1)");
    DropoutT d;
    d.rate = rate;
    d.seed = seed;
    return d;
  }

  TensorT<S> forward(const TensorT<S>& x) {
    if (mode == Mode::kInfer || rate == S(0)) return x;
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * ++counter);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const S scale_up = S(1) / (S(1) - rate);
    auto mask = std::make_shared<std::vector<S>>(x.values().size());
    for (auto& v : *mask) v = uni(rng) < static_cast<double>(rate) ? S(0) : scale_up;
    auto out = detail::make_result<S>(
        x.shape(), {x.data()}, [xd = x.data(), mask](TensorDataT<S>& out) {
          if (!xd->requires_grad) return;
          xd->ensure_grad();
          for (size_t i = 0; i < out.grad.size(); ++i)
            xd->grad[i] += out.grad[i] * (*mask)[i];
        });
    for (size_t i = 0; i < out.values().size(); ++i)
      out.values()[i] = x.values()[i] * (*mask)[i];
    return out;
  }
};

// ---------------------------------------------------------------------------
// Softmax and categorical cross-entropy
// ---------------------------------------------------------------------------

/// Row-wise softmax over logits viewed (N, K), computed with max subtraction.
template <typename S>
TensorT<S> softmax(const TensorT<S>& logits) {
  const std::int64_t n = logits.shape().n;
  const std::int64_t k = logits.numel() / std::max<std::int64_t>(n, 1);
  if (k < 1) throw ShapeError("softmax: needs at least one class");
  for (S v : logits.values())
    if (!std::isfinite(v)) throw ValueError("softmax: non-finite logit");
  auto out = detail::make_result<S>(
      logits.shape(), {logits.data()},
      [ld = logits.data(), n, k](TensorDataT<S>& out) {
        if (!ld->requires_grad) return;
        ld->ensure_grad();
        for (std::int64_t r = 0; r < n; ++r) {
          const S* y = out.values.data() + r * k;
          const S* g = out.grad.data() + r * k;
          S dot = 0;
          for (std::int64_t j = 0; j < k; ++j) dot += g[j] * y[j];
          for (std::int64_t j = 0; j < k; ++j)
            ld->grad[r * k + j] += y[j] * (g[j] - dot);
        }
      });
  for (std::int64_t r = 0; r < n; ++r) {
    const S* in = logits.values().data() + r * k;
    S* y = out.values().data() + r * k;
    S mx = in[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, in[j]);
    S z = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      y[j] = std::exp(in[j] - mx);
      z += y[j];
    }
    for (std::int64_t j = 0; j < k; ++j) y[j] /= z;
  }
  return out;
}

/// Mean over the batch of -sum_k y_k log p_k, log clamped at 1e-12.
template <typename S>
TensorT<S> cross_entropy_loss(const TensorT<S>& probs,
                              const TensorT<S>& labels) {
  if (!(probs.shape() == labels.shape()))
    throw ShapeError("cross_entropy: probs " + probs.shape().str() +
                     " vs labels " + labels.shape().str());
  const std::int64_t n = probs.shape().n;
  const std::int64_t k = probs.numel() / std::max<std::int64_t>(n, 1);
  for (std::int64_t r = 0; r < n; ++r) {
    S rowsum = 0;
    int ones = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      const S y = labels.values()[r * k + j];
      if (y != S(0) && y != S(1))
        throw ValueError("cross_entropy: labels must be one-hot");
      ones += y == S(1);
      rowsum += probs.values()[r * k + j];
    }
    if (ones != 1) throw ValueError("cross_entropy: labels must be one-hot");
    if (std::abs(rowsum - S(1)) > S(1e-3))
      throw ValueError("cross_entropy: probability row does not sum to 1");
  }
  constexpr double kFloor = 1e-12;
  auto out = detail::make_result<S>(
      Shape{1, 1, 1, 1}, {probs.data(), labels.data()},
      [pd = probs.data(), ld = labels.data(), n, k](TensorDataT<S>& out) {
        if (!pd->requires_grad) return;
        pd->ensure_grad();
        const S g = out.grad[0] / static_cast<S>(n);
        for (std::int64_t i = 0; i < n * k; ++i) {
          if (ld->values[i] == S(0)) continue;
          const S p = pd->values[i];
          if (p > S(kFloor)) pd->grad[i] -= g / p;
        }
      });
  double acc = 0;
  for (std::int64_t i = 0; i < n * k; ++i)
    if (labels.values()[i] == S(1))
      acc -= std::log(std::max(static_cast<double>(probs.values()[i]), kFloor));
  out.values()[0] = static_cast<S>(acc / static_cast<double>(n));
  return out;
}

using Conv2D = Conv2DT<float>;
using BatchNorm2D = BatchNorm2DT<float>;
using Dense = DenseT<float>;
using Dropout = DropoutT<float>;

}  // namespace cbamnet
