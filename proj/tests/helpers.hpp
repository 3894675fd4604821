#pragma once

#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "gluenet/autograd.hpp"
#include "gluenet/error.hpp"
#include "gluenet/tensor.hpp"

namespace testing_helpers {

template <typename T>
gluenet::Tensor<T> random_tensor(gluenet::Shape s, std::mt19937_64& rng, bool grad = false) {
  std::normal_distribution<double> n;
  std::vector<T> v(s.numel());
  for (auto& e : v) e = static_cast<T>(n(rng));
  return gluenet::Tensor<T>(s, std::move(v), grad);
}

template <typename F>
void expect_error(gluenet::ErrorKind kind, F&& f) {
  try {
    f();
    FAIL() << "expected " << gluenet::to_string(kind);
  } catch (const gluenet::Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

/// Zeroes every weight, bias and LN shift under `prefix`; LN scales stay 1.
template <typename T>
void zero_weights(gluenet::ParameterStore<T>& p, const std::string& prefix = "") {
  for (auto& [name, t] : p) {
    if (!name.starts_with(prefix)) continue;
    if (name.ends_with(".gamma")) continue;
    for (auto& v : t.mutable_data()) v = T(0);
  }
}

/// Perturbs every parameter so biases and LN affine terms are nonzero.
template <typename T>
void scramble(gluenet::ParameterStore<T>& p, std::mt19937_64& rng, double spread = 0.5) {
  std::uniform_real_distribution<double> u(-spread, spread);
  for (auto& [_, t] : p)
    for (auto& v : t.mutable_data()) v = static_cast<T>(v + u(rng));
}

}  // namespace testing_helpers
