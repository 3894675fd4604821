#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gluenet/data.hpp"
#include "gluenet/error.hpp"
#include "gluenet/tensor.hpp"

namespace gluenet {

/// Prefix length for top-K fusion. Needs 1 <= k and 2k < L.
struct FusionParams {
  std::size_t k = 6;

  void validate(std::size_t tokens) const {
    require(k >= 1, ErrorKind::kFusionWindow, "fusion k must be >= 1");
    require(2 * k < tokens, ErrorKind::kFusionWindow,
            "fusion window 2k=" + std::to_string(2 * k) + " must be < L=" + std::to_string(tokens));
  }
};

struct GuidanceParams {
  double s = 7.5;
};

/// Merges two L x C sequences: [a[0..k) | b[0..k) | (a[i]+b[i])/2 for
/// i in [k, L-k)]. Output length is L.
template <typename T>
Tensor<T> topk_fuse(const Tensor<T>& a, const Tensor<T>& b, const FusionParams& p) {
  require(a.rank() == 2 && a.shape() == b.shape(), ErrorKind::kDimension,
          "topk_fuse: expected equal [L,C] inputs, got " + a.shape().str() + " and " +
              b.shape().str());
  const std::size_t l = a.dim(0), c = a.dim(1), k = p.k;
  p.validate(l);
  std::vector<T> out;
  out.reserve(l * c);
  auto row = [c](const Tensor<T>& t, std::size_t i) { return t.data().subspan(i * c, c); };
  for (std::size_t i = 0; i < k; ++i) {
    auto r = row(a, i);
    out.insert(out.end(), r.begin(), r.end());
  }
  for (std::size_t i = 0; i < k; ++i) {
    auto r = row(b, i);
    out.insert(out.end(), r.begin(), r.end());
  }
  for (std::size_t i = k; i < l - k; ++i) {
    auto ra = row(a, i), rb = row(b, i);
    for (std::size_t j = 0; j < c; ++j) out.push_back((ra[j] + rb[j]) / T(2));
  }
  return Tensor<T>(Shape{l, c}, std::move(out));
}

/// Record-wise fusion of two equally shaped stores. Ids follow `a`.
inline EmbeddingStore topk_fuse(const EmbeddingStore& a, const EmbeddingStore& b,
                                const FusionParams& p) {
  require(a.count == b.count && a.tokens == b.tokens && a.dim == b.dim, ErrorKind::kDimension,
          "fuse: stores differ in shape or count");
  p.validate(a.tokens);
  EmbeddingStore out{a.count, a.tokens, a.dim, {}, a.ids};
  out.records.reserve(a.records.size());
  for (std::size_t r = 0; r < a.count; ++r) {
    auto ra = a.record(r), rb = b.record(r);
    Tensor<float> ta(Shape{a.tokens, a.dim}, {ra.begin(), ra.end()});
    Tensor<float> tb(Shape{b.tokens, b.dim}, {rb.begin(), rb.end()});
    const auto fused = topk_fuse(ta, tb, p);
    out.records.insert(out.records.end(), fused.data().begin(), fused.data().end());
  }
  return out;
}

/// L x L matrix, row-major: entry (i, j) is the mean over records of the
/// Euclidean distance between tokens i and j.
inline std::vector<double> dissimilarity_map(std::span<const float> records, std::size_t count,
                                             std::size_t tokens, std::size_t dim) {
  require(count > 0, ErrorKind::kEmptyBatch, "dissimilarity_map: empty batch");
  require(records.size() == count * tokens * dim, ErrorKind::kDimension,
          "dissimilarity_map: buffer does not match count x L x C");
  std::vector<double> map(tokens * tokens, 0.0);
  for (std::size_t r = 0; r < count; ++r) {
    const float* rec = records.data() + r * tokens * dim;
    for (std::size_t i = 0; i < tokens; ++i)
      for (std::size_t j = i + 1; j < tokens; ++j) {
        double ss = 0;
        for (std::size_t c = 0; c < dim; ++c) {
          const double d = static_cast<double>(rec[i * dim + c]) - rec[j * dim + c];
          ss += d * d;
        }
        const double dist = std::sqrt(ss);
        map[i * tokens + j] += dist;
        map[j * tokens + i] += dist;
      }
  }
  for (auto& v : map) v /= static_cast<double>(count);
  return map;
}

inline std::vector<double> dissimilarity_map(const EmbeddingStore& store) {
  return dissimilarity_map(store.records, store.count, store.tokens, store.dim);
}

/// eps_uncond + s * (eps_cond - eps_uncond), evaluated as
/// (1 - s) * eps_uncond + s * eps_cond so both endpoints are exact.
template <typename T>
Tensor<T> guidance_combine(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond,
                           const GuidanceParams& g) {
  require(eps_uncond.shape() == eps_cond.shape(), ErrorKind::kDimension,
          "guidance_combine: shape mismatch " + eps_uncond.shape().str() + " vs " +
              eps_cond.shape().str());
  require(std::isfinite(g.s) && g.s >= 0, ErrorKind::kConfig,
          "guidance weight must be finite and nonnegative");
  const T s = static_cast<T>(g.s);
  const T r = static_cast<T>(1.0 - g.s);
  std::vector<T> out(eps_uncond.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = r * eps_uncond[i] + s * eps_cond[i];
  return Tensor<T>(eps_uncond.shape(), std::move(out));
}

}  // namespace gluenet
