#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gluenet/data.hpp"
#include "gluenet/error.hpp"

namespace gluenet {

struct ProjectionGroup {
  std::string label;
  const EmbeddingStore* store = nullptr;
};

struct ProjectionResult {
  std::vector<std::array<double, 2>> points;
  std::vector<std::string> labels;
  /// Variance captured by each axis, nonincreasing.
  std::array<double, 2> explained_variance{};
  double total_variance = 0;
  /// Unit principal directions in the flattened (or pooled) feature space.
  std::array<std::vector<double>, 2> components;
};

inline constexpr double kPcaTolerance = 1e-7;
inline constexpr int kPcaMaxIterations = 1000;

namespace detail {

// Rows of the centered data matrix, one per record.
struct DataMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> x;

  // out = X^T X v / rows
  std::vector<double> cov_times(const std::vector<double>& v) const {
    std::vector<double> out(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = x.data() + r * cols;
      double dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += row[c] * v[c];
      for (std::size_t c = 0; c < cols; ++c) out[c] += dot * row[c];
    }
    for (auto& o : out) o /= static_cast<double>(rows);
    return out;
  }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void project_out(std::vector<double>& v, const std::vector<double>& u) {
  const double d = dot(v, u);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * u[i];
}

inline bool normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (!(n > 0)) return false;
  for (auto& e : v) e /= n;
  return true;
}

// Leading eigenvector of the covariance restricted to the complement of
// `previous`; returns (vector, eigenvalue).
inline std::pair<std::vector<double>, double> power_iterate(
    const DataMatrix& m, const std::vector<std::vector<double>>& previous, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(m.cols);
  for (auto& e : v) e = normal(rng);
  for (const auto& p : previous) project_out(v, p);
  if (!normalize(v)) return {std::vector<double>(m.cols, 0.0), 0.0};
  double lambda = 0;
  for (int it = 0; it < kPcaMaxIterations; ++it) {
    std::vector<double> w = m.cov_times(v);
    for (const auto& p : previous) project_out(w, p);
    lambda = dot(w, v);
    if (!normalize(w)) return {v, 0.0};
    double diff = 0;
    for (std::size_t i = 0; i < w.size(); ++i) diff += (w[i] - v[i]) * (w[i] - v[i]);
    v = std::move(w);
    if (std::sqrt(diff) < kPcaTolerance) break;
  }
  lambda = dot(m.cov_times(v), v);
  return {v, lambda};
}

inline void fix_sign(std::vector<double>& v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  if (!v.empty() && v[arg] < 0)
    for (auto& e : v) e = -e;
}

}  // namespace detail

/// Joint 2-D PCA of all records in `groups`. Records are flattened to L*C
/// vectors, or mean-pooled over tokens when the groups' token counts differ.
inline ProjectionResult pca_project(std::span<const ProjectionGroup> groups) {
  bool pool = false;
  std::size_t total = 0;
  for (const auto& g : groups) {
    require(g.store != nullptr, ErrorKind::kContract, "pca_project: null store for " + g.label);
    if (g.store->tokens != groups.front().store->tokens) pool = true;
    total += g.store->count;
  }
  require(total >= 3, ErrorKind::kEmptyBatch,
          "pca_project: need at least 3 records, got " + std::to_string(total));

  detail::DataMatrix m;
  m.rows = total;
  for (const auto& g : groups) {
    const std::size_t width = pool ? g.store->dim : g.store->record_size();
    if (m.cols == 0) m.cols = width;
    require(width == m.cols, ErrorKind::kDimension,
            "pca_project: group '" + g.label + "' has feature width " + std::to_string(width) +
                ", expected " + std::to_string(m.cols));
  }
  m.x.reserve(m.rows * m.cols);
  ProjectionResult res;
  for (const auto& g : groups) {
    const auto& s = *g.store;
    for (std::size_t r = 0; r < s.count; ++r) {
      auto rec = s.record(r);
      if (pool) {
        for (std::size_t c = 0; c < s.dim; ++c) {
          double acc = 0;
          for (std::size_t t = 0; t < s.tokens; ++t) acc += rec[t * s.dim + c];
          m.x.push_back(acc / static_cast<double>(s.tokens));
        }
      } else {
        m.x.insert(m.x.end(), rec.begin(), rec.end());
      }
      res.labels.push_back(g.label);
    }
  }

  std::vector<double> mean(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) mean[c] += m.x[r * m.cols + c];
  for (auto& v : mean) v /= static_cast<double>(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) m.x[r * m.cols + c] -= mean[c];

  for (double v : m.x) res.total_variance += v * v;
  res.total_variance /= static_cast<double>(m.rows);
  require(res.total_variance > 0, ErrorKind::kNumeric, "pca_project: data has zero variance");

  std::vector<std::vector<double>> found;
  for (int k = 0; k < 2; ++k) {
    auto [v, lambda] = detail::power_iterate(m, found, 0x5eed0000ULL + k);
    detail::fix_sign(v);
    res.explained_variance[k] = std::max(lambda, 0.0);
    found.push_back(v);
    res.components[k] = std::move(v);
  }

  res.points.resize(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.x.data() + r * m.cols;
    for (int k = 0; k < 2; ++k) {
      double s = 0;
      for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * res.components[k][c];
      res.points[r][k] = s;
    }
  }
  return res;
}

/// Mean 2-D distance between matched pairs (i-th point of `a` with i-th point
/// of `b`) divided by the mean distance over all unmatched pairs.
inline double separation_ratio(const ProjectionResult& res, const std::string& a,
                               const std::string& b) {
  std::vector<std::array<double, 2>> pa, pb;
  for (std::size_t i = 0; i < res.points.size(); ++i) {
    if (res.labels[i] == a) pa.push_back(res.points[i]);
    else if (res.labels[i] == b) pb.push_back(res.points[i]);
  }
  require(pa.size() == pb.size() && pa.size() >= 2, ErrorKind::kCountMismatch,
          "separation_ratio: groups '" + a + "' and '" + b + "' need equal counts >= 2");
  auto dist = [](const std::array<double, 2>& p, const std::array<double, 2>& q) {
    return std::hypot(p[0] - q[0], p[1] - q[1]);
  };
  double matched = 0, unmatched = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pb.size(); ++j) {
      if (i == j) matched += dist(pa[i], pb[j]);
      else unmatched += dist(pa[i], pb[j]);
    }
  }
  const double n = static_cast<double>(pa.size());
  matched /= n;
  unmatched /= n * (n - 1);
  require(unmatched > 0, ErrorKind::kNumeric, "separation_ratio: unmatched distance is zero");
  return matched / unmatched;
}

namespace detail {

inline std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot create " + path);
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed: " + path);
}

}  // namespace detail

inline std::string projection_csv(const ProjectionResult& res) {
  std::string s = "x,y,label\n";
  for (std::size_t i = 0; i < res.points.size(); ++i)
    s += detail::fmt9(res.points[i][0]) + "," + detail::fmt9(res.points[i][1]) + "," +
         res.labels[i] + "\n";
  return s;
}

inline void export_projection_csv(const ProjectionResult& res, const std::string& path) {
  detail::write_text(path, projection_csv(res));
}

/// Header "t0,...,t{L-1}" followed by L rows of L values.
inline std::string dissimilarity_csv(std::span<const double> map, std::size_t tokens) {
  require(map.size() == tokens * tokens, ErrorKind::kDimension,
          "dissimilarity map is not L x L for L=" + std::to_string(tokens));
  std::string s;
  for (std::size_t j = 0; j < tokens; ++j) s += (j ? ",t" : "t") + std::to_string(j);
  s += '\n';
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t j = 0; j < tokens; ++j) {
      if (j) s += ',';
      s += detail::fmt9(map[i * tokens + j]);
    }
    s += '\n';
  }
  return s;
}

inline void export_dissimilarity_csv(std::span<const double> map, std::size_t tokens,
                                     const std::string& path) {
  detail::write_text(path, dissimilarity_csv(map, tokens));
}

}  // namespace gluenet
