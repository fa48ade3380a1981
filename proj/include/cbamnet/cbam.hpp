#pragma once

#include <utility>

#include "cbamnet/layers.hpp"
#include "cbamnet/tensor.hpp"

namespace cbamnet {

/// Channel attention: per-channel gates from global average- and max-pooled
/// descriptors through a shared bottleneck MLP and a sigmoid.
template <typename S>
struct ChannelAttentionT {
  TensorT<S> w1;  // (C/r, C, 1, 1)
  TensorT<S> b1;  // (1, C/r, 1, 1)
  TensorT<S> w2;  // (C, C/r, 1, 1)
  TensorT<S> b2;  // (1, C, 1, 1)
  int reduction = 8;
  bool use_bias = true;

  template <typename Rng>
  static ChannelAttentionT make(std::int64_t channels, int reduction,
                                Rng& rng, bool use_bias = true) {
    if (reduction <= 0 || channels % reduction != 0)
      throw ValueError("channel attention: C=" + std::to_string(channels) +
                       " not divisible by r=" + std::to_string(reduction));
    const std::int64_t hidden = channels / reduction;
    ChannelAttentionT ca;
    ca.reduction = reduction;
    ca.use_bias = use_bias;
    ca.w1 = TensorT<S>::randn({hidden, channels, 1, 1}, rng,
                              std::sqrt(S(2) / static_cast<S>(channels)));
    ca.w2 = TensorT<S>::randn({channels, hidden, 1, 1}, rng,
                              std::sqrt(S(2) / static_cast<S>(hidden)));
    ca.b1 = TensorT<S>::zeros({1, hidden, 1, 1}, use_bias);
    ca.b2 = TensorT<S>::zeros({1, channels, 1, 1}, use_bias);
    ca.w1.set_requires_grad(true);
    ca.w2.set_requires_grad(true);
    return ca;
  }

  std::int64_t channels() const { return w2.shape().n; }

  // The same weights serve both pooled branches.
  TensorT<S> mlp(const TensorT<S>& v) const {
    auto h = matmul(v, w1, /*transpose_b=*/true);
    if (use_bias) h = add(h, b1);
    h = relu(h);
    auto z = matmul(h, w2, /*transpose_b=*/true);
    if (use_bias) z = add(z, b2);
    return z;
  }

  /// Returns {M_c (N,C,1,1), F' = M_c (.) F}.
  std::pair<TensorT<S>, TensorT<S>> forward(const TensorT<S>& f) const {
    if (f.shape().c != channels())
      throw ShapeError("channel attention: input has " +
                       std::to_string(f.shape().c) + " channels, expected " +
                       std::to_string(channels()));
    // matmul already yields the (N,C,1,1) gate layout.
    auto gate = sigmoid(add(mlp(global_avg_pool(f)), mlp(global_max_pool(f))));
    return {gate, mul(f, gate)};
  }
};

/// Spatial attention: a per-location gate from a 7x7 convolution over the
/// channel-wise average and max maps.
template <typename S>
struct SpatialAttentionT {
  Conv2DT<S> conv;  // weight (1, 2, 7, 7) + bias, same padding

  template <typename Rng>
  static SpatialAttentionT make(Rng& rng) {
    SpatialAttentionT sa;
    sa.conv.weight = TensorT<S>::randn({1, 2, 7, 7}, rng,
                                       std::sqrt(S(2) / S(2 * 7 * 7)));
    sa.conv.weight.set_requires_grad(true);
    sa.conv.bias = TensorT<S>::zeros({1, 1, 1, 1}, true);
    sa.conv.padding = Padding::kSame;
    return sa;
  }

  /// Returns {M_s (N,1,H,W), F'' = M_s (.) F'}.
  std::pair<TensorT<S>, TensorT<S>> forward(const TensorT<S>& f_prime) const {
    auto pooled = concat_channels(channel_mean(f_prime), channel_max(f_prime));
    auto gate = sigmoid(conv.forward(pooled));
    return {gate, mul(f_prime, gate)};
  }
};

/// Channel attention followed by spatial attention.
template <typename S>
struct CBAMBlockT {
  ChannelAttentionT<S> channel;
  SpatialAttentionT<S> spatial;

  template <typename Rng>
  static CBAMBlockT make(std::int64_t channels, int reduction, Rng& rng,
                         bool mlp_bias = true) {
    CBAMBlockT b;
    b.channel = ChannelAttentionT<S>::make(channels, reduction, rng, mlp_bias);
    b.spatial = SpatialAttentionT<S>::make(rng);
    return b;
  }

  TensorT<S> forward(const TensorT<S>& f) const {
    auto [mc, f_prime] = channel.forward(f);
    auto [ms, f_dprime] = spatial.forward(f_prime);
    return f_dprime;
  }
};

using ChannelAttention = ChannelAttentionT<float>;
using SpatialAttention = SpatialAttentionT<float>;
using CBAMBlock = CBAMBlockT<float>;

}  // namespace cbamnet
