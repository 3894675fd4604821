#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gluenet/error.hpp"

namespace gluenet {

/// Extents of a dense row-major tensor, rank 1 to 3.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents) : extents_(extents) {
    validate();
  }
  explicit Shape(std::vector<std::size_t> extents) : extents_(std::move(extents)) {
    validate();
  }

  std::size_t rank() const { return extents_.size(); }
  std::size_t operator[](std::size_t axis) const { return extents_.at(axis); }
  std::size_t back() const { return extents_.back(); }
  const std::vector<std::size_t>& extents() const { return extents_; }

  std::size_t numel() const {
    return std::accumulate(extents_.begin(), extents_.end(), std::size_t{1},
                           std::multiplies<>());
  }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < extents_.size(); ++i) {
      if (i) os << 'x';
      os << extents_[i];
    }
    os << ']';
    return os.str();
  }

 private:
  void validate() const {
    require(!extents_.empty() && extents_.size() <= 3, ErrorKind::kDimension,
            "tensor rank must be 1..3");
  }

  std::vector<std::size_t> extents_;
};

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized iff requires_grad
  bool requires_grad = false;
};

}  // namespace detail

/// Shared handle to a dense tensor. Copies alias the same storage; use
/// clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<detail::TensorStorage<T>>()) {
    require(values.size() == shape.numel(), ErrorKind::kDimension,
            "element count " + std::to_string(values.size()) +
                " does not match shape " + shape.str());
    s_->shape = std::move(shape);
    s_->value = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> v(shape.numel(), T(0));
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor filled(Shape shape, T value) {
    std::vector<T> v(shape.numel(), value);
    return Tensor(std::move(shape), std::move(v));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t numel() const { return s_->value.size(); }
  std::size_t rank() const { return s_->shape.rank(); }
  std::size_t dim(std::size_t axis) const { return s_->shape[axis]; }

  std::span<const T> data() const { return s_->value; }
  std::span<T> mutable_data() const { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }

  T item() const {
    require(numel() == 1, ErrorKind::kContract, "item() on non-scalar tensor");
    return s_->value[0];
  }
  T operator[](std::size_t i) const { return s_->value[i]; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (on) {
      s_->grad.assign(s_->value.size(), T(0));
    } else {
      s_->grad.clear();
      s_->grad.shrink_to_fit();
    }
  }

  std::span<const T> grad() const { return s_->grad; }
  std::span<T> mutable_grad() const { return s_->grad; }
  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), T(0)); }

  Tensor clone() const {
    return Tensor(s_->shape, s_->value, s_->requires_grad);
  }

  /// Same values, no gradient tracking.
  Tensor detach() const { return Tensor(s_->shape, s_->value, false); }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(s_->value.begin(), s_->value.end());
    return Tensor<U>(s_->shape, std::move(v), s_->requires_grad);
  }

 private:
  std::shared_ptr<detail::TensorStorage<T>> s_;
};

/// Define-by-run record of primitive applications. Each entry is the local
/// backward rule of one op; entries are appended in execution order so the
/// list is topologically sorted by construction.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// A disabled tape records nothing; ops on it behave as pure functions.
  static Tape disabled() {
    Tape t;
    t.enabled_ = false;
    return t;
  }

  bool enabled() const { return enabled_; }

  bool check_finite() const { return check_finite_; }
  void set_check_finite(bool on) { check_finite_ = on; }

  std::size_t size() const { return nodes_.size(); }

  void record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule once, newest
  /// first. The tape is empty afterwards.
  void backward(Tensor<T>& loss) {
    require(loss.numel() == 1, ErrorKind::kContract,
            "backward requires a scalar loss, got shape " + loss.shape().str());
    require(loss.requires_grad(), ErrorKind::kContract,
            "loss is not connected to any parameter on the tape");
    loss.mutable_grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool enabled_ = true;
  bool check_finite_ = false;
};

}  // namespace gluenet
