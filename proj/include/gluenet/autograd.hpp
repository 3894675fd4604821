#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gluenet/error.hpp"
#include "gluenet/tensor.hpp"

namespace gluenet {

/// Named learnable tensors. Iteration is lexicographic by name.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    require(!params_.contains(name), ErrorKind::kContract,
            "duplicate parameter name " + name);
    t.set_requires_grad(true);
    return params_.emplace(name, std::move(t)).first->second;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::kContract, "unknown parameter " + name);
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::kContract, "unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.contains(name); }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  /// Deep copy; the clone shares no storage with this store.
  ParameterStore clone() const {
    ParameterStore out;
    for (const auto& [name, t] : params_) out.add(name, t.clone());
    return out;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, t] : params_) out.add(name, t.template cast<U>());
    return out;
  }

 private:
  Map params_;
};

template <typename T>
void backward(Tensor<T>& loss, Tape<T>& tape) {
  tape.backward(loss);
}

/// Central-difference estimate of d f / d theta for every element of every
/// parameter in the store. Parameters are perturbed in place and restored.
template <typename T>
std::map<std::string, std::vector<T>> finite_diff_grad(
    const std::function<T(const ParameterStore<T>&)>& f,
    ParameterStore<T>& store, T h = T(1e-4)) {
  require(h > T(0), ErrorKind::kContract, "finite_diff_grad: h must be positive");
  std::map<std::string, std::vector<T>> grads;
  for (auto& [name, t] : store) {
    auto values = t.mutable_data();
    std::vector<T> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + h;
      const T up = f(store);
      values[i] = saved - h;
      const T down = f(store);
      values[i] = saved;
      g[i] = (up - down) / (T(2) * h);
    }
    grads.emplace(name, std::move(g));
  }
  return grads;
}

}  // namespace gluenet
