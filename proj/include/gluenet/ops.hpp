#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gluenet/error.hpp"
#include "gluenet/tensor.hpp"

// Differentiable primitives. Every op takes the tape first; when the tape is
// enabled and any input requires grad, the output requires grad and the op's
// backward rule is recorded.

namespace gluenet::ops {

namespace detail {

template <typename T>
void check_finite(const Tape<T>& tape, const Tensor<T>& out, const char* op) {
  if (!tape.check_finite()) return;
  for (T v : out.data()) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::kNumeric, std::string("non-finite output from ") + op);
    }
  }
}

template <typename T, typename... In>
bool tracks(const Tape<T>& tape, const In&... in) {
  return tape.enabled() && (in.requires_grad() || ...);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
              b.shape().str());
}

template <typename T>
void accumulate(Tensor<T>& dst, std::size_t i, T g) {
  dst.mutable_grad()[i] += g;
}

// Token axis is the second-to-last axis of a rank-2 [L,C] or rank-3 [B,L,C]
// tensor; "outer" counts the leading batch, "inner" the channel extent.
struct TokenLayout {
  std::size_t outer, tokens, inner;
};

template <typename T>
TokenLayout token_layout(const Tensor<T>& x, const char* op) {
  require(x.rank() >= 2, ErrorKind::kDimension,
          std::string(op) + ": needs rank >= 2, got " + x.shape().str());
  const auto& e = x.shape().extents();
  std::size_t outer = x.rank() == 3 ? e[0] : 1;
  return {outer, e[e.size() - 2], e.back()};
}

template <typename T>
Shape with_tokens(const Tensor<T>& x, std::size_t tokens) {
  auto e = x.shape().extents();
  e[e.size() - 2] = tokens;
  return Shape(e);
}

template <typename T>
T gelu_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::kDimension,
          "matmul: operands must be rank 2");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorKind::kDimension,
          "matmul: inner extents differ " + a.shape().str() + " x " +
              b.shape().str());
  std::vector<T> out(m * n, T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Tensor<T> y(Shape{m, n}, std::move(out), detail::tracks(tape, a, b));
  detail::check_finite(tape, y, "matmul");
  if (y.requires_grad()) {
    tape.record([a, b, y, m, k, n]() mutable {
      auto gy = y.grad();
      if (a.requires_grad()) {
        // dA = dY * B^T
        auto ga = a.mutable_grad();
        auto pb = b.data();
        std::vector<T> bt(n * k);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = pb[p * n + j];
        for (std::size_t i = 0; i < m; ++i) {
          T* grow = ga.data() + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const T g = gy[i * n + j];
            const T* brow = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) grow[p] += g * brow[p];
          }
        }
      }
      if (b.requires_grad()) {
        // dB = A^T * dY
        auto gb = b.mutable_grad();
        auto pa = a.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * gy[i * n + j];
          }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor<T> y(a.shape(), std::move(out), detail::tracks(tape, a, b));
  detail::check_finite(tape, y, "add");
  if (y.requires_grad()) {
    tape.record([a, b, y]() mutable {
      auto gy = y.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < gy.size(); ++i) a.mutable_grad()[i] += gy[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < gy.size(); ++i) b.mutable_grad()[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor<T> y(a.shape(), std::move(out), detail::tracks(tape, a, b));
  detail::check_finite(tape, y, "sub");
  if (y.requires_grad()) {
    tape.record([a, b, y]() mutable {
      auto gy = y.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < gy.size(); ++i) a.mutable_grad()[i] += gy[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < gy.size(); ++i) b.mutable_grad()[i] -= gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor<T> y(a.shape(), std::move(out), detail::tracks(tape, a, b));
  detail::check_finite(tape, y, "mul");
  if (y.requires_grad()) {
    tape.record([a, b, y]() mutable {
      auto gy = y.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < gy.size(); ++i) a.mutable_grad()[i] += gy[i] * b[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < gy.size(); ++i) b.mutable_grad()[i] += gy[i] * a[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T s) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  Tensor<T> y(x.shape(), std::move(out), detail::tracks(tape, x));
  detail::check_finite(tape, y, "scale");
  if (y.requires_grad()) {
    tape.record([x, y, s]() mutable {
      auto gy = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * s;
    });
  }
  return y;
}

/// x[..., C] + bias[C], broadcasting the bias over every leading index.
template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  require(bias.rank() == 1 && bias.numel() == x.shape().back(),
          ErrorKind::kDimension,
          "add_bias: bias " + bias.shape().str() + " vs input " + x.shape().str());
  const std::size_t c = bias.numel();
  const std::size_t rows = x.numel() / c;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[r * c + j] + bias[j];
  Tensor<T> y(x.shape(), std::move(out), detail::tracks(tape, x, bias));
  detail::check_finite(tape, y, "add_bias");
  if (y.requires_grad()) {
    tape.record([x, bias, y, rows, c]() mutable {
      auto gy = y.grad();
      if (x.requires_grad())
        for (std::size_t i = 0; i < gy.size(); ++i) x.mutable_grad()[i] += gy[i];
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gb[j] += gy[r * c + j];
      }
    });
  }
  return y;
}

/// Swaps the last two axes (rank 2 or 3).
template <typename T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x) {
  auto lay = detail::token_layout(x, "transpose");
  const std::size_t r = lay.tokens, c = lay.inner;
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < lay.outer; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out[b * r * c + j * r + i] = x[b * r * c + i * c + j];
  auto e = x.shape().extents();
  std::swap(e[e.size() - 1], e[e.size() - 2]);
  Tensor<T> y(Shape(e), std::move(out), detail::tracks(tape, x));
  if (y.requires_grad()) {
    tape.record([x, y, lay]() mutable {
      auto gy = y.grad();
      auto gx = x.mutable_grad();
      const std::size_t r = lay.tokens, c = lay.inner;
      for (std::size_t b = 0; b < lay.outer; ++b)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            gx[b * r * c + i * c + j] += gy[b * r * c + j * r + i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  require(shape.numel() == x.numel(), ErrorKind::kDimension,
          "reshape: " + x.shape().str() + " -> " + shape.str());
  Tensor<T> y(std::move(shape), x.values(), detail::tracks(tape, x));
  if (y.requires_grad()) {
    tape.record([x, y]() mutable {
      auto gy = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> y = Tensor<T>::scalar(acc, detail::tracks(tape, x));
  detail::check_finite(tape, y, "sum");
  if (y.requires_grad()) {
    tape.record([x, y]() mutable {
      const T g = y.grad()[0];
      for (T& gx : x.mutable_grad()) gx += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  const T n = static_cast<T>(x.numel());
  Tensor<T> y = Tensor<T>::scalar(acc / n, detail::tracks(tape, x));
  detail::check_finite(tape, y, "mean");
  if (y.requires_grad()) {
    tape.record([x, y, n]() mutable {
      const T g = y.grad()[0] / n;
      for (T& gx : x.mutable_grad()) gx += g;
    });
  }
  return y;
}

/// Mean over one axis; the axis is removed (a rank-1 input yields shape {1}).
template <typename T>
Tensor<T> mean_axis(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), ErrorKind::kDimension, "mean_axis: axis out of range");
  const auto& e = x.shape().extents();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= e[i];
  for (std::size_t i = axis + 1; i < e.size(); ++i) inner *= e[i];
  const std::size_t n = e[axis];
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += x[(o * n + a) * inner + i];
  const T inv = T(1) / static_cast<T>(n);
  for (T& v : out) v *= inv;
  std::vector<std::size_t> ne;
  for (std::size_t i = 0; i < e.size(); ++i)
    if (i != axis) ne.push_back(e[i]);
  if (ne.empty()) ne.push_back(1);
  Tensor<T> y(Shape(ne), std::move(out), detail::tracks(tape, x));
  detail::check_finite(tape, y, "mean_axis");
  if (y.requires_grad()) {
    tape.record([x, y, outer, inner, n, inv]() mutable {
      auto gy = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t i = 0; i < inner; ++i)
            gx[(o * n + a) * inner + i] += gy[o * inner + i] * inv;
    });
  }
  return y;
}

/// Concatenation along the token axis (second-to-last).
template <typename T>
Tensor<T> concat_tokens(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  auto la = detail::token_layout(a, "concat_tokens");
  auto lb = detail::token_layout(b, "concat_tokens");
  require(a.rank() == b.rank() && la.outer == lb.outer && la.inner == lb.inner,
          ErrorKind::kDimension,
          "concat_tokens: " + a.shape().str() + " vs " + b.shape().str());
  const std::size_t c = la.inner, ta = la.tokens, tb = lb.tokens;
  std::vector<T> out;
  out.reserve(a.numel() + b.numel());
  for (std::size_t o = 0; o < la.outer; ++o) {
    auto pa = a.data().subspan(o * ta * c, ta * c);
    auto pb = b.data().subspan(o * tb * c, tb * c);
    out.insert(out.end(), pa.begin(), pa.end());
    out.insert(out.end(), pb.begin(), pb.end());
  }
  Tensor<T> y(detail::with_tokens(a, ta + tb), std::move(out),
              detail::tracks(tape, a, b));
  if (y.requires_grad()) {
    tape.record([a, b, y, outer = la.outer, c, ta, tb]() mutable {
      auto gy = y.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * (ta + tb) * c;
        if (a.requires_grad())
          for (std::size_t i = 0; i < ta * c; ++i)
            a.mutable_grad()[o * ta * c + i] += gy[base + i];
        if (b.requires_grad())
          for (std::size_t i = 0; i < tb * c; ++i)
            b.mutable_grad()[o * tb * c + i] += gy[base + ta * c + i];
      }
    });
  }
  return y;
}

/// Tokens [begin, end) along the token axis.
template <typename T>
Tensor<T> slice_tokens(Tape<T>& tape, const Tensor<T>& x, std::size_t begin,
                       std::size_t end) {
  auto lay = detail::token_layout(x, "slice_tokens");
  require(begin < end && end <= lay.tokens, ErrorKind::kDimension,
          "slice_tokens: range [" + std::to_string(begin) + "," +
              std::to_string(end) + ") outside " + x.shape().str());
  const std::size_t c = lay.inner, t = lay.tokens, n = end - begin;
  std::vector<T> out;
  out.reserve(lay.outer * n * c);
  for (std::size_t o = 0; o < lay.outer; ++o) {
    auto p = x.data().subspan((o * t + begin) * c, n * c);
    out.insert(out.end(), p.begin(), p.end());
  }
  Tensor<T> y(detail::with_tokens(x, n), std::move(out), detail::tracks(tape, x));
  if (y.requires_grad()) {
    tape.record([x, y, outer = lay.outer, c, t, n, begin]() mutable {
      auto gy = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n * c; ++i)
          gx[(o * t + begin) * c + i] += gy[o * n * c + i];
    });
  }
  return y;
}

/// Normalizes each row over the last axis, then applies gamma and beta.
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  require(eps > T(0), ErrorKind::kContract, "layer_norm: eps must be positive");
  const std::size_t c = x.shape().back();
  require(gamma.numel() == c && beta.numel() == c, ErrorKind::kDimension,
          "layer_norm: gamma/beta width does not match input " + x.shape().str());
  const std::size_t rows = x.numel() / c;
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data().data() + r * c;
    T mu = T(0);
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = h * gamma[j] + beta[j];
    }
  }
  Tensor<T> y(x.shape(), std::move(out), detail::tracks(tape, x, gamma, beta));
  detail::check_finite(tape, y, "layer_norm");
  if (y.requires_grad()) {
    tape.record([x, gamma, beta, y, xhat = std::move(xhat),
                 inv_std = std::move(inv_std), rows, c]() mutable {
      auto gy = y.grad();
      const T inv_c = T(1) / static_cast<T>(c);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* h = xhat.data() + r * c;
        const T* g = gy.data() + r * c;
        if (gamma.requires_grad())
          for (std::size_t j = 0; j < c; ++j) gamma.mutable_grad()[j] += g[j] * h[j];
        if (beta.requires_grad())
          for (std::size_t j = 0; j < c; ++j) beta.mutable_grad()[j] += g[j];
        if (x.requires_grad()) {
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t j = 0; j < c; ++j) {
            const T dh = g[j] * gamma[j];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
          }
          mean_dh *= inv_c;
          mean_dh_h *= inv_c;
          auto gx = x.mutable_grad();
          for (std::size_t j = 0; j < c; ++j) {
            const T dh = g[j] * gamma[j];
            gx[r * c + j] += inv_std[r] * (dh - mean_dh - h[j] * mean_dh_h);
          }
        }
      }
    });
  }
  return y;
}

/// Exact GELU, x * Phi(x) with the erf form of the normal CDF.
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * detail::gelu_cdf(x[i]);
  Tensor<T> y(x.shape(), std::move(out), detail::tracks(tape, x));
  detail::check_finite(tape, y, "gelu");
  if (y.requires_grad()) {
    tape.record([x, y]() mutable {
      auto gy = y.grad();
      auto gx = x.mutable_grad();
      const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const T v = x[i];
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gx[i] += gy[i] * (detail::gelu_cdf(v) + v * pdf);
      }
    });
  }
  return y;
}

/// log(1 + e^x), evaluated without overflow.
template <typename T>
Tensor<T> softplus(Tape<T>& tape, const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(x[i], T(0)) + std::log1p(std::exp(-std::abs(x[i])));
  Tensor<T> y(x.shape(), std::move(out), detail::tracks(tape, x));
  detail::check_finite(tape, y, "softplus");
  if (y.requires_grad()) {
    tape.record([x, y]() mutable {
      auto gy = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i)
        gx[i] += gy[i] / (T(1) + std::exp(-x[i]));
    });
  }
  return y;
}

template <typename T>
Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& x, T lo, T hi) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  Tensor<T> y(x.shape(), std::move(out), detail::tracks(tape, x));
  if (y.requires_grad()) {
    tape.record([x, y, lo, hi]() mutable {
      auto gy = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (x[i] >= lo && x[i] <= hi) gx[i] += gy[i];
    });
  }
  return y;
}

}  // namespace gluenet::ops
