#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gluenet/diagnostics.hpp"
#include "gluenet/fusion.hpp"
#include "helpers.hpp"

using namespace gluenet;
using namespace testing_helpers;

namespace {

EmbeddingStore gaussian_store(std::size_t count, std::size_t tokens, std::size_t dim, std::uint64_t seed,
                              double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  EmbeddingStore s{count, tokens, dim, std::vector<float>(count * tokens * dim), std::nullopt};
  for (auto& v : s.records) v = static_cast<float>(scale * n(rng));
  return s;
}

ProjectionResult project(std::initializer_list<ProjectionGroup> groups) {
  std::vector<ProjectionGroup> v(groups);
  return pca_project(v);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Pca, PlanarDataIsCapturedExactly) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  const std::size_t dim = 30, count = 40;
  std::vector<double> u(dim), w(dim), offset(dim);
  for (auto& e : u) e = n(rng);
  for (auto& e : w) e = n(rng);
  for (auto& e : offset) e = n(rng);
  EmbeddingStore s{count, 3, 10, {}, std::nullopt};
  for (std::size_t r = 0; r < count; ++r) {
    const double a = 3 * n(rng), b = n(rng);
    for (std::size_t i = 0; i < dim; ++i) s.records.push_back(static_cast<float>(offset[i] + a * u[i] + b * w[i]));
  }
  auto res = project({{"plane", &s}});
  const double captured = res.explained_variance[0] + res.explained_variance[1];
  EXPECT_LT(std::abs(res.total_variance - captured), 1e-5 * res.total_variance);

  // Reconstruction from the 2-D coordinates recovers every centered record.
  std::vector<double> mean(dim, 0.0);
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t i = 0; i < dim; ++i) mean[i] += s.records[r * dim + i] / double(count);
  double err = 0;
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t i = 0; i < dim; ++i) {
      const double rec = res.points[r][0] * res.components[0][i] + res.points[r][1] * res.components[1][i];
      const double d = (s.records[r * dim + i] - mean[i]) - rec;
      err += d * d;
    }
  EXPECT_LT(err / count, 1e-5 * res.total_variance);
}

TEST(Pca, IsotropicCloudHasBalancedVariances) {
  auto s = gaussian_store(800, 2, 2, 2);
  auto res = project({{"cloud", &s}});
  const double a = res.explained_variance[0], b = res.explained_variance[1];
  EXPECT_GE(a, b);
  EXPECT_LT((a - b) / a, 0.2);
}

TEST(Pca, DuplicatingPointsKeepsProjectionUpToSign) {
  auto s = gaussian_store(25, 2, 3, 3);
  s.records[0] *= 5;  // break ties between the leading directions
  auto twice = s;
  twice.count *= 2;
  twice.records.insert(twice.records.end(), s.records.begin(), s.records.end());
  auto a = project({{"s", &s}});
  auto b = project({{"s", &twice}});
  ASSERT_EQ(b.points.size(), 50u);
  for (int k = 0; k < 2; ++k) {
    const double sign = (a.points[0][k] * b.points[0][k] >= 0) ? 1.0 : -1.0;
    for (std::size_t r = 0; r < 25; ++r) {
      EXPECT_NEAR(a.points[r][k], sign * b.points[r][k], 1e-6);
      EXPECT_NEAR(a.points[r][k], sign * b.points[25 + r][k], 1e-6);
    }
  }
}

TEST(Pca, GlobalTranslationDoesNotMoveCoordinates) {
  auto s = gaussian_store(30, 2, 4, 4);
  auto t = gaussian_store(30, 2, 4, 5);
  auto a = project({{"s", &s}, {"t", &t}});
  auto s2 = s, t2 = t;
  for (std::size_t i = 0; i < s2.records.size(); ++i) {
    const float shift = 3.0f + 0.25f * static_cast<float>(i % 8);
    s2.records[i] += shift;
    t2.records[i] += shift;
  }
  auto b = project({{"s", &s2}, {"t", &t2}});
  for (std::size_t r = 0; r < a.points.size(); ++r)
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(a.points[r][k], b.points[r][k], 1e-5) << r;
}

TEST(Pca, ComponentsAreOrthonormalAndVariancesOrdered) {
  for (std::uint64_t seed : {6u, 7u, 8u}) {
    auto s = gaussian_store(60, 3, 5, seed);
    for (std::size_t r = 0; r < 60; ++r) s.records[r * 15] *= 4;
    auto res = project({{"s", &s}});
    const auto& c = res.components;
    double n0 = 0, n1 = 0, d = 0;
    for (std::size_t i = 0; i < c[0].size(); ++i) {
      n0 += c[0][i] * c[0][i];
      n1 += c[1][i] * c[1][i];
      d += c[0][i] * c[1][i];
    }
    EXPECT_NEAR(n0, 1.0, 1e-6);
    EXPECT_NEAR(n1, 1.0, 1e-6);
    EXPECT_NEAR(d, 0.0, 1e-6);
    EXPECT_GE(res.explained_variance[0], res.explained_variance[1]);
    EXPECT_LE(res.explained_variance[0] + res.explained_variance[1], res.total_variance * (1 + 1e-9));
  }
}

TEST(Pca, LabelsFollowGroups) {
  auto a = gaussian_store(3, 2, 2, 9);
  auto b = gaussian_store(4, 2, 2, 10);
  auto res = project({{"source", &a}, {"target", &b}});
  ASSERT_EQ(res.labels.size(), 7u);
  EXPECT_EQ(res.labels[2], "source");
  EXPECT_EQ(res.labels[3], "target");
}

TEST(Pca, PoolsOverTokensWhenLengthsDiffer) {
  auto a = gaussian_store(10, 3, 4, 11);
  auto b = gaussian_store(12, 5, 4, 12);
  auto pooled = [](const EmbeddingStore& s) {
    EmbeddingStore p{s.count, 1, s.dim, {}, std::nullopt};
    for (std::size_t r = 0; r < s.count; ++r)
      for (std::size_t c = 0; c < s.dim; ++c) {
        double acc = 0;
        for (std::size_t t = 0; t < s.tokens; ++t) acc += s.record(r)[t * s.dim + c];
        p.records.push_back(static_cast<float>(acc / s.tokens));
      }
    return p;
  };
  auto pa = pooled(a), pb = pooled(b);
  auto x = project({{"a", &a}, {"b", &b}});
  auto y = project({{"a", &pa}, {"b", &pb}});
  ASSERT_EQ(x.points.size(), 22u);
  for (int k = 0; k < 2; ++k) {
    const double sign = (x.points[0][k] * y.points[0][k] >= 0) ? 1.0 : -1.0;
    for (std::size_t r = 0; r < 22; ++r) EXPECT_NEAR(x.points[r][k], sign * y.points[r][k], 1e-5);
  }
}

TEST(Pca, Errors) {
  auto two = gaussian_store(2, 2, 2, 13);
  expect_error(ErrorKind::kEmptyBatch, [&] { project({{"s", &two}}); });
  auto a = gaussian_store(5, 2, 3, 14);
  auto b = gaussian_store(5, 2, 4, 15);
  expect_error(ErrorKind::kDimension, [&] { project({{"a", &a}, {"b", &b}}); });
  EmbeddingStore flat{6, 2, 2, std::vector<float>(24, 1.5f), std::nullopt};
  expect_error(ErrorKind::kNumeric, [&] { project({{"flat", &flat}}); });
}

TEST(Separation, MatchedCopiesGiveZeroAndShuffledGiveAboutOne) {
  auto a = gaussian_store(200, 2, 3, 16);
  auto res = project({{"translated", &a}, {"target", &a}});
  EXPECT_NEAR(separation_ratio(res, "translated", "target"), 0.0, 1e-9);
  auto b = gaussian_store(200, 2, 3, 17);
  auto res2 = project({{"translated", &a}, {"target", &b}});
  EXPECT_NEAR(separation_ratio(res2, "translated", "target"), 1.0, 0.1);
  expect_error(ErrorKind::kCountMismatch, [&] { separation_ratio(res2, "translated", "missing"); });
}

TEST(Csv, SinglePointProjection) {
  ProjectionResult r;
  r.points = {{1.25, -0.5}};
  r.labels = {"source"};
  const auto path = (std::filesystem::temp_directory_path() / "gluenet_test_proj.csv").string();
  export_projection_csv(r, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto l = lines(ss.str());
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0], "x,y,label");
  EXPECT_EQ(l[1], "1.25,-0.5,source");
  std::filesystem::remove(path);
}

TEST(Csv, ProjectionRoundTripsToNineDigits) {
  auto s = gaussian_store(20, 2, 3, 18, 1e3);
  auto res = project({{"s", &s}});
  const auto l = lines(projection_csv(res));
  ASSERT_EQ(l.size(), 21u);
  for (std::size_t i = 1; i < l.size(); ++i) {
    double x, y;
    char label[16];
    ASSERT_EQ(std::sscanf(l[i].c_str(), "%lf,%lf,%15s", &x, &y, label), 3);
    EXPECT_NEAR(x, res.points[i - 1][0], 1e-6 * std::abs(res.points[i - 1][0]));
    EXPECT_NEAR(y, res.points[i - 1][1], 1e-6 * std::abs(res.points[i - 1][1]));
    EXPECT_STREQ(label, "s");
  }
}

TEST(Csv, DissimilarityHasLRowsOfLColumns) {
  auto s = gaussian_store(4, 3, 5, 19);
  const auto map = dissimilarity_map(s);
  const auto l = lines(dissimilarity_csv(map, 3));
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0], "t0,t1,t2");
  for (std::size_t i = 1; i < 4; ++i) {
    std::istringstream row(l[i]);
    std::vector<double> cells;
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(std::stod(cell));
    ASSERT_EQ(cells.size(), 3u);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(cells[j], map[(i - 1) * 3 + j], 1e-6 * std::max(1.0, map[(i - 1) * 3 + j]));
  }
  expect_error(ErrorKind::kDimension, [&] { dissimilarity_csv(map, 4); });
}

TEST(Csv, UnwritablePathIsIoError) {
  ProjectionResult r;
  expect_error(ErrorKind::kIo, [&] { export_projection_csv(r, "/nonexistent/dir/p.csv"); });
  std::vector<double> map(1, 0.0);
  expect_error(ErrorKind::kIo, [&] { export_dissimilarity_csv(map, 1, "/nonexistent/dir/d.csv"); });
}
