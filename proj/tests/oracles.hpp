#pragma once

// Independent straight-line reference implementations in long double. None
// of these call into the library's ops; they read parameter values by name
// and evaluate the formulas directly.

#include <cmath>
#include <string>
#include <vector>

#include "gluenet/autograd.hpp"
#include "gluenet/model.hpp"

namespace oracle {

using Vec = std::vector<long double>;

// Row-major [rows x cols] matrix.
struct Mat {
  std::size_t rows = 0, cols = 0;
  Vec v;
  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0L) {}
  long double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  long double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

template <typename T>
Mat from_tensor(const gluenet::Tensor<T>& t, std::size_t rows, std::size_t cols) {
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) m.v[i] = static_cast<long double>(t[i]);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      long double acc = 0;
      for (std::size_t p = 0; p < a.cols; ++p) acc += a.at(i, p) * b.at(p, j);
      out.at(i, j) = acc;
    }
  return out;
}

inline long double gelu(long double x) {
  return x * 0.5L * (1.0L + std::erf(x / std::sqrt(2.0L)));
}

inline void layer_norm_rows(Mat& x, const Vec& gamma, const Vec& beta, long double eps = 1e-5L) {
  for (std::size_t r = 0; r < x.rows; ++r) {
    long double mean = 0, var = 0;
    for (std::size_t c = 0; c < x.cols; ++c) mean += x.at(r, c);
    mean /= x.cols;
    for (std::size_t c = 0; c < x.cols; ++c) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
    var /= x.cols;
    const long double inv = 1.0L / std::sqrt(var + eps);
    for (std::size_t c = 0; c < x.cols; ++c)
      x.at(r, c) = (x.at(r, c) - mean) * inv * gamma[c] + beta[c];
  }
}

template <typename T>
Vec vec(const gluenet::ParameterStore<T>& p, const std::string& name) {
  const auto& t = p.at(name);
  return Vec(t.data().begin(), t.data().end());
}

template <typename T>
Mat mat(const gluenet::ParameterStore<T>& p, const std::string& name) {
  const auto& t = p.at(name);
  return from_tensor(t, t.dim(0), t.dim(1));
}

// Linear-LN-GELU, Linear-LN-GELU, Linear-LN on each row of x.
template <typename T>
Mat mlp(const gluenet::ParameterStore<T>& p, const std::string& prefix, bool layer_norm, Mat x) {
  for (int layer = 1; layer <= 3; ++layer) {
    const std::string n = std::to_string(layer);
    x = matmul(x, mat(p, prefix + ".w" + n));
    const Vec b = vec(p, prefix + ".b" + n);
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c) x.at(r, c) += b[c];
    if (layer_norm)
      layer_norm_rows(x, vec(p, prefix + ".ln" + n + ".gamma"), vec(p, prefix + ".ln" + n + ".beta"));
    if (layer < 3)
      for (auto& e : x.v) e = gelu(e);
  }
  return x;
}

inline Mat transpose(const Mat& x) {
  Mat t(x.cols, x.rows);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) t.at(c, r) = x.at(r, c);
  return t;
}

// One mixer block on a single [L, C] sequence.
template <typename T>
Mat mixer_block(const gluenet::ParameterStore<T>& p, const gluenet::MixerBlockSpec& s, const Mat& x) {
  // Token MLP sees each channel column as a row of length L.
  Mat u = transpose(mlp(p, s.prefix + ".token_mlp", s.layer_norm, transpose(x)));
  if (s.residual)
    for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] += x.v[i];
  Mat y = mlp(p, s.prefix + ".channel_mlp", s.layer_norm, u);
  if (s.residual)
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += u.v[i];
  return y;
}

template <typename T>
Mat translator(const gluenet::GlueNet<T>& net, Mat x) {
  for (const auto& b : net.blocks()) x = mixer_block(net.params(), b, x);
  return x;
}

template <typename T>
long double discriminator(const gluenet::Discriminator<T>& d, const Mat& x) {
  const auto& p = d.params();
  Mat h = mixer_block(p, gluenet::Discriminator<T>::block_spec(d.config()), x);
  Mat pooled(1, h.cols);
  for (std::size_t c = 0; c < h.cols; ++c) {
    for (std::size_t r = 0; r < h.rows; ++r) pooled.at(0, c) += h.at(r, c);
    pooled.at(0, c) /= h.rows;
  }
  Mat z = matmul(pooled, mat(p, "head.w1"));
  const Vec b1 = vec(p, "head.b1");
  for (std::size_t c = 0; c < z.cols; ++c) z.at(0, c) = gelu(z.at(0, c) + b1[c]);
  Mat o = matmul(z, mat(p, "head.w2"));
  return o.at(0, 0) + vec(p, "head.b2")[0];
}

inline long double softplus(long double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace oracle
