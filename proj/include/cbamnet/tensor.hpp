#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cbamnet/common.hpp"
#include "cbamnet/gemm.hpp"

namespace cbamnet {

/// Rank-4 extents (N, C, H, W).
struct Shape {
  std::int64_t n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

namespace detail {

inline bool grad_enabled_flag(int delta = 0) {
  thread_local int depth = 0;
  depth += delta;
  return depth == 0;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// RAII scope that disables graph construction.
struct NoGradGuard {
  NoGradGuard() { detail::grad_enabled_flag(+1); }
  ~NoGradGuard() { detail::grad_enabled_flag(-1); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
struct TensorDataT;

/// Record of the producing operation, kept on the output tensor.
template <typename S>
struct TensorNodeT {
  std::vector<std::shared_ptr<TensorDataT<S>>> inputs;
  // Reads out.grad and accumulates into the inputs' grads. `out` is the
  // tensor owning this node.
  std::function<void(TensorDataT<S>&)> backprop;
};

template <typename S>
struct TensorDataT {
  Shape shape;
  std::vector<S> values;
  bool requires_grad = false;
  std::vector<S> grad;  // empty until backward touches this tensor
  std::shared_ptr<TensorNodeT<S>> node;

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), S(0));
  }
};

/// Value handle to a rank-4 tensor participating in a reverse-mode graph.
/// Copies share storage; completed tensors are treated as immutable.
template <typename S>
class TensorT {
 public:
  using Data = TensorDataT<S>;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Data> d) : data_(std::move(d)) {}

  static TensorT zeros(Shape s, bool requires_grad = false) {
    return full(s, S(0), requires_grad);
  }

  static TensorT full(Shape s, S value, bool requires_grad = false) {
    auto d = std::make_shared<Data>();
    d->shape = s;
    d->values.assign(static_cast<size_t>(s.numel()), value);
    d->requires_grad = requires_grad;
    return TensorT(std::move(d));
  }

  static TensorT from_values(Shape s, std::vector<S> v,
                             bool requires_grad = false) {
    if (static_cast<std::int64_t>(v.size()) != s.numel())
      throw ShapeError("from_values: " + std::to_string(v.size()) +
                       " values for shape " + s.str());
    auto d = std::make_shared<Data>();
    d->shape = s;
    d->values = std::move(v);
    d->requires_grad = requires_grad;
    return TensorT(std::move(d));
  }

  template <typename Rng>
  static TensorT randn(Shape s, Rng& rng, S stddev = S(1)) {
    std::normal_distribution<double> dist(0.0, 1.0);
    auto t = zeros(s);
    for (auto& v : t.data_->values) v = static_cast<S>(dist(rng)) * stddev;
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::int64_t numel() const { return data_->shape.numel(); }

  std::vector<S>& values() { return data_->values; }
  const std::vector<S>& values() const { return data_->values; }

  std::vector<S>& grad() { return data_->grad; }
  const std::vector<S>& grad() const { return data_->grad; }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool b) { data_->requires_grad = b; }

  void zero_grad() {
    if (!data_->grad.empty())
      std::fill(data_->grad.begin(), data_->grad.end(), S(0));
  }

  S& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_->values[index(n, c, h, w)];
  }
  S at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_->values[index(n, c, h, w)];
  }

  std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h,
                     std::int64_t w) const {
    const Shape& s = data_->shape;
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }

  std::shared_ptr<Data> data() const { return data_; }

  /// Detached deep copy (no graph, no grad).
  TensorT clone_detached() const {
    auto d = std::make_shared<Data>();
    d->shape = data_->shape;
    d->values = data_->values;
    return TensorT(std::move(d));
  }

 private:
  std::shared_ptr<Data> data_;
};

using Tensor = TensorT<float>;

// ---------------------------------------------------------------------------
// Graph plumbing
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
TensorT<S> make_result(Shape shape,
                       std::vector<std::shared_ptr<TensorDataT<S>>> inputs,
                       std::function<void(TensorDataT<S>&)> backprop) {
  auto out = TensorT<S>::zeros(shape);
  bool track = grad_enabled();
  if (track) {
    bool any = false;
    for (const auto& in : inputs) any = any || in->requires_grad;
    track = any;
  }
  if (track) {
    out.data()->requires_grad = true;
    auto node = std::make_shared<TensorNodeT<S>>();
    node->inputs = std::move(inputs);
    node->backprop = std::move(backprop);
    out.data()->node = std::move(node);
  }
  return out;
}

// Per-axis input strides for broadcasting `b` over `a` (0 on singleton axes).
template <typename S>
std::array<std::int64_t, 4> broadcast_strides(const Shape& a, const Shape& b,
                                              const char* op) {
  auto ok = [](std::int64_t ax, std::int64_t bx) { return bx == ax || bx == 1; };
  if (!ok(a.n, b.n) || !ok(a.c, b.c) || !ok(a.h, b.h) || !ok(a.w, b.w))
    throw ShapeError(std::string(op) + ": shape " + b.str() +
                     " is not broadcastable over " + a.str());
  std::array<std::int64_t, 4> st{b.c * b.h * b.w, b.h * b.w, b.w, 1};
  if (b.n == 1) st[0] = 0;
  if (b.c == 1) st[1] = 0;
  if (b.h == 1) st[2] = 0;
  if (b.w == 1) st[3] = 0;
  return st;
}

// Applies fn(out_index, b_index) over every coordinate of `a`.
template <typename Fn>
void for_each_broadcast(const Shape& a, const std::array<std::int64_t, 4>& bst,
                        Fn&& fn) {
  std::int64_t i = 0;
  for (std::int64_t n = 0; n < a.n; ++n)
    for (std::int64_t c = 0; c < a.c; ++c)
      for (std::int64_t h = 0; h < a.h; ++h) {
        std::int64_t base = n * bst[0] + c * bst[1] + h * bst[2];
        for (std::int64_t w = 0; w < a.w; ++w, ++i)
          fn(i, base + w * bst[3]);
      }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  auto bst = detail::broadcast_strides<S>(a.shape(), b.shape(), "add");
  auto out = detail::make_result<S>(
      a.shape(), {a.data(), b.data()},
      [a = a.data(), b = b.data(), bst](TensorDataT<S>& out) {
        if (a->requires_grad) {
          a->ensure_grad();
          for (size_t i = 0; i < out.grad.size(); ++i)
            a->grad[i] += out.grad[i];
        }
        if (b->requires_grad) {
          b->ensure_grad();
          detail::for_each_broadcast(a->shape, bst,
                                     [&](std::int64_t i, std::int64_t j) {
                                       b->grad[j] += out.grad[i];
                                     });
        }
      });
  detail::for_each_broadcast(a.shape(), bst,
                             [&](std::int64_t i, std::int64_t j) {
                               out.values()[i] = a.values()[i] + b.values()[j];
                             });
  return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  auto bst = detail::broadcast_strides<S>(a.shape(), b.shape(), "sub");
  auto out = detail::make_result<S>(
      a.shape(), {a.data(), b.data()},
      [a = a.data(), b = b.data(), bst](TensorDataT<S>& out) {
        if (a->requires_grad) {
          a->ensure_grad();
          for (size_t i = 0; i < out.grad.size(); ++i)
            a->grad[i] += out.grad[i];
        }
        if (b->requires_grad) {
          b->ensure_grad();
          detail::for_each_broadcast(a->shape, bst,
                                     [&](std::int64_t i, std::int64_t j) {
                                       b->grad[j] -= out.grad[i];
                                     });
        }
      });
  detail::for_each_broadcast(a.shape(), bst,
                             [&](std::int64_t i, std::int64_t j) {
                               out.values()[i] = a.values()[i] - b.values()[j];
                             });
  return out;
}

/// Elementwise product; `b` may broadcast over `a` along singleton axes.
/// Covers both the (C,1,1) channel gate and the (1,H,W) spatial gate.
template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  auto bst = detail::broadcast_strides<S>(a.shape(), b.shape(), "mul");
  auto out = detail::make_result<S>(
      a.shape(), {a.data(), b.data()},
      [a = a.data(), b = b.data(), bst](TensorDataT<S>& out) {
        if (a->requires_grad) {
          a->ensure_grad();
          detail::for_each_broadcast(
              a->shape, bst, [&](std::int64_t i, std::int64_t j) {
                a->grad[i] += out.grad[i] * b->values[j];
              });
        }
        if (b->requires_grad) {
          b->ensure_grad();
          detail::for_each_broadcast(
              a->shape, bst, [&](std::int64_t i, std::int64_t j) {
                b->grad[j] += out.grad[i] * a->values[i];
              });
        }
      });
  detail::for_each_broadcast(a.shape(), bst,
                             [&](std::int64_t i, std::int64_t j) {
                               out.values()[i] = a.values()[i] * b.values()[j];
                             });
  return out;
}

template <typename S>
TensorT<S> broadcast_mul(const TensorT<S>& a, const TensorT<S>& b) {
  return mul(a, b);
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
  auto out = detail::make_result<S>(
      a.shape(), {a.data()}, [a = a.data(), factor](TensorDataT<S>& out) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i)
          a->grad[i] += factor * out.grad[i];
      });
  for (size_t i = 0; i < out.values().size(); ++i)
    out.values()[i] = factor * a.values()[i];
  return out;
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  auto out = detail::make_result<S>(
      a.shape(), {a.data()}, [a = a.data()](TensorDataT<S>& out) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i) {
          S y = out.values[i];
          a->grad[i] += out.grad[i] * y * (S(1) - y);
        }
      });
  for (size_t i = 0; i < out.values().size(); ++i) {
    S x = a.values()[i];
    out.values()[i] = S(1) / (S(1) + std::exp(-x));
  }
  return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  auto out = detail::make_result<S>(
      a.shape(), {a.data()}, [a = a.data()](TensorDataT<S>& out) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i)
          if (a->values[i] > S(0)) a->grad[i] += out.grad[i];
      });
  for (size_t i = 0; i < out.values().size(); ++i)
    out.values()[i] = std::max(a.values()[i], S(0));
  return out;
}

// ---------------------------------------------------------------------------
// Matrix multiply on 2-D views
// ---------------------------------------------------------------------------

// A tensor is viewed as a (rows, cols) matrix with rows = N and
// cols = C*H*W.
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b,
                  bool transpose_b = false) {
  const std::int64_t m = a.shape().n;
  const std::int64_t k = a.shape().c * a.shape().h * a.shape().w;
  const std::int64_t b_rows = b.shape().n;
  const std::int64_t b_cols = b.shape().c * b.shape().h * b.shape().w;
  const std::int64_t bk = transpose_b ? b_cols : b_rows;
  const std::int64_t p = transpose_b ? b_rows : b_cols;
  if (bk != k)
    throw ShapeError("matmul: inner extents disagree, " + a.shape().str() +
                     " vs " + b.shape().str());
  auto out = detail::make_result<S>(
      Shape{m, p, 1, 1}, {a.data(), b.data()},
      [a = a.data(), b = b.data(), m, k, p,
       transpose_b](TensorDataT<S>& out) {
        const S* g = out.grad.data();
        if (a->requires_grad) {
          a->ensure_grad();
          // dA = G * B^T  (or G * B when B was used transposed)
          gemm(false, !transpose_b, static_cast<int>(m), static_cast<int>(k),
               static_cast<int>(p), S(1), g, static_cast<int>(p),
               b->values.data(), static_cast<int>(transpose_b ? k : p), S(1),
               a->grad.data(), static_cast<int>(k));
        }
        if (b->requires_grad) {
          b->ensure_grad();
          if (!transpose_b) {
            // dB = A^T * G
            gemm(true, false, static_cast<int>(k), static_cast<int>(p),
                 static_cast<int>(m), S(1), a->values.data(),
                 static_cast<int>(k), g, static_cast<int>(p), S(1),
                 b->grad.data(), static_cast<int>(p));
          } else {
            // dB = G^T * A
            gemm(true, false, static_cast<int>(p), static_cast<int>(k),
                 static_cast<int>(m), S(1), g, static_cast<int>(p),
                 a->values.data(), static_cast<int>(k), S(1), b->grad.data(),
                 static_cast<int>(k));
          }
        }
      });
  gemm(false, transpose_b, static_cast<int>(m), static_cast<int>(p),
       static_cast<int>(k), S(1), a.values().data(), static_cast<int>(k),
       b.values().data(), static_cast<int>(transpose_b ? k : p), S(0),
       out.values().data(), static_cast<int>(p));
  return out;
}

// ---------------------------------------------------------------------------
// Shape / reduction operations
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape s) {
  if (s.numel() != a.numel())
    throw ShapeError("reshape: " + a.shape().str() + " -> " + s.str());
  auto out = detail::make_result<S>(
      s, {a.data()}, [a = a.data()](TensorDataT<S>& out) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i)
          a->grad[i] += out.grad[i];
      });
  out.values() = a.values();
  return out;
}

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  auto out = detail::make_result<S>(
      Shape{1, 1, 1, 1}, {a.data()}, [a = a.data()](TensorDataT<S>& out) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (auto& g : a->grad) g += out.grad[0];
      });
  // Accumulate in double so scalar losses lose as little as possible.
  double acc = 0;
  for (S v : a.values()) acc += static_cast<double>(v);
  out.values()[0] = static_cast<S>(acc);
  return out;
}

template <typename S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
  const std::int64_t hw = sa.h * sa.w;
  auto out = detail::make_result<S>(
      so, {a.data(), b.data()},
      [a = a.data(), b = b.data(), hw](TensorDataT<S>& out) {
        const Shape& sa = a->shape;
        const Shape& sb = b->shape;
        for (std::int64_t n = 0; n < sa.n; ++n) {
          std::int64_t src = n * (sa.c + sb.c) * hw;
          if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < sa.c * hw; ++i)
              a->grad[n * sa.c * hw + i] += out.grad[src + i];
          }
          if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < sb.c * hw; ++i)
              b->grad[n * sb.c * hw + i] += out.grad[src + sa.c * hw + i];
          }
        }
      });
  for (std::int64_t n = 0; n < sa.n; ++n) {
    std::int64_t dst = n * so.c * hw;
    std::copy_n(a.values().begin() + n * sa.c * hw, sa.c * hw,
                out.values().begin() + dst);
    std::copy_n(b.values().begin() + n * sb.c * hw, sb.c * hw,
                out.values().begin() + dst + sa.c * hw);
  }
  return out;
}

/// Mean across the channel axis: (N,C,H,W) -> (N,1,H,W).
template <typename S>
TensorT<S> channel_mean(const TensorT<S>& a) {
  const Shape& s = a.shape();
  const std::int64_t hw = s.h * s.w;
  auto out = detail::make_result<S>(
      Shape{s.n, 1, s.h, s.w}, {a.data()}, [a = a.data()](TensorDataT<S>& out) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const Shape& s = a->shape;
        const std::int64_t hw = s.h * s.w;
        const S inv = S(1) / static_cast<S>(s.c);
        for (std::int64_t n = 0; n < s.n; ++n)
          for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t i = 0; i < hw; ++i)
              a->grad[(n * s.c + c) * hw + i] += inv * out.grad[n * hw + i];
      });
  const S inv = S(1) / static_cast<S>(s.c);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < hw; ++i) {
      S acc = 0;
      for (std::int64_t c = 0; c < s.c; ++c)
        acc += a.values()[(n * s.c + c) * hw + i];
      out.values()[n * hw + i] = acc * inv;
    }
  return out;
}

/// Max across the channel axis; gradient routes to the first argmax.
template <typename S>
TensorT<S> channel_max(const TensorT<S>& a) {
  const Shape& s = a.shape();
  const std::int64_t hw = s.h * s.w;
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<size_t>(s.n * hw));
  auto out = detail::make_result<S>(
      Shape{s.n, 1, s.h, s.w}, {a.data()},
      [a = a.data(), argmax](TensorDataT<S>& out) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const Shape& s = a->shape;
        const std::int64_t hw = s.h * s.w;
        for (std::int64_t n = 0; n < s.n; ++n)
          for (std::int64_t i = 0; i < hw; ++i) {
            std::int64_t c = (*argmax)[n * hw + i];
            a->grad[(n * s.c + c) * hw + i] += out.grad[n * hw + i];
          }
      });
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < hw; ++i) {
      S best = a.values()[n * s.c * hw + i];
      std::int32_t bc = 0;
      for (std::int64_t c = 1; c < s.c; ++c) {
        S v = a.values()[(n * s.c + c) * hw + i];
        if (v > best) {
          best = v;
          bc = static_cast<std::int32_t>(c);
        }
      }
      out.values()[n * hw + i] = best;
      (*argmax)[n * hw + i] = bc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Populates .grad on every tensor
/// reachable in the graph; gradients accumulate additively across fan-out.
template <typename S>
void backward(const TensorT<S>& loss) {
  if (loss.shape().numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " +
                     loss.shape().str());
  // Iterative post-order DFS gives a topological order.
  std::vector<TensorDataT<S>*> topo;
  std::unordered_set<TensorDataT<S>*> visited;
  std::vector<std::pair<TensorDataT<S>*, size_t>> stack;
  stack.emplace_back(loss.data().get(), 0);
  visited.insert(loss.data().get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      TensorDataT<S>* in = t->node->inputs[next++].get();
      if (visited.insert(in).second) stack.emplace_back(in, 0);
    } else {
      topo.push_back(t);
      stack.pop_back();
    }
  }
  loss.data()->ensure_grad();
  loss.data()->grad[0] = S(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorDataT<S>* t = *it;
    if (!t->node) continue;
    t->ensure_grad();
    t->node->backprop(*t);
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Max relative error between the analytic gradient of `f` at `x` and a
/// central finite difference. Returns +inf if non-finite values appear.
template <typename S, typename F>
S finite_difference_check(F&& f, TensorT<S> x, S epsilon) {
  if (!(epsilon > S(0))) throw ValueError("finite_difference_check: epsilon must be positive");
  x.set_requires_grad(true);
  x.zero_grad();
  TensorT<S> y = f(x);
  backward(y);
  std::vector<S> analytic(x.numel(), S(0));
  if (!x.grad().empty()) analytic = x.grad();

  const S floor = S(1e-8);
  S worst = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const S orig = x.values()[i];
    S plus, minus;
    {
      NoGradGuard ng;
      x.values()[i] = orig + epsilon;
      plus = f(x).values()[0];
      x.values()[i] = orig - epsilon;
      minus = f(x).values()[0];
      x.values()[i] = orig;
    }
    const S numeric = (plus - minus) / (S(2) * epsilon);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i]))
      return std::numeric_limits<S>::infinity();
    const S denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace cbamnet
