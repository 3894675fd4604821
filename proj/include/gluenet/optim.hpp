#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "gluenet/autograd.hpp"
#include "gluenet/error.hpp"

namespace gluenet {

struct AdamWHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First/second moment buffers per parameter name, plus the step counter.
template <typename T>
struct AdamWState {
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
  std::uint64_t t = 0;
};

/// A parameter store and the name prefix its moments are filed under, so one
/// optimizer state can cover several stores (encoder and decoder together).
template <typename T>
struct ParamGroup {
  std::string prefix;
  ParameterStore<T>* params;
};

/// One AdamW update with decoupled weight decay over every group:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
/// Gradients are cleared afterwards.
template <typename T>
void adamw_step(std::initializer_list<ParamGroup<T>> groups, AdamWState<T>& state,
                const AdamWHyper& hp) {
  const double b1t = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t + 1));
  const double b2t = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t + 1));
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  const T lr = static_cast<T>(hp.lr), eps = static_cast<T>(hp.eps);
  const T decay = static_cast<T>(hp.lr * hp.weight_decay);
  const T c1 = static_cast<T>(1.0 / b1t), c2 = static_cast<T>(1.0 / b2t);
  for (const auto& group : groups) {
    for (auto& [name, p] : *group.params) {
      require(p.requires_grad(), ErrorKind::kContract,
              "adamw_step: parameter " + name + " has no gradient buffer");
      const std::string key = group.prefix + name;
      auto& m = state.m[key];
      auto& v = state.v[key];
      if (m.empty()) {
        m.assign(p.numel(), T(0));
        v.assign(p.numel(), T(0));
      }
      require(m.size() == p.numel() && v.size() == p.numel(), ErrorKind::kContract,
              "adamw_step: moment buffer size mismatch for " + key);
      auto theta = p.mutable_data();
      auto g = p.mutable_grad();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mhat = m[i] * c1;
        const T vhat = v[i] * c2;
        const T old = theta[i];
        theta[i] = old - lr * mhat / (std::sqrt(vhat) + eps) - decay * old;
        g[i] = T(0);
      }
    }
  }
  ++state.t;
}

template <typename T>
void adamw_step(ParameterStore<T>& params, AdamWState<T>& state, const AdamWHyper& hp) {
  adamw_step<T>({ParamGroup<T>{"", &params}}, state, hp);
}

}  // namespace gluenet
