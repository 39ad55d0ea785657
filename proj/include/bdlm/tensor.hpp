#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdlm {

// Dense row-major array with an optional same-shape gradient buffer.
// Value-semantic handle over shared storage so tape closures can capture
// tensors cheaply and gradients accumulate into the original buffers.
template <typename T>
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<Impl>()) {}

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(count(t.impl_->shape), T(0));
    return t;
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl_->data) v = value;
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor from_data(std::vector<int> shape, std::vector<T> data) {
    if (count(shape) != data.size()) {
      throw std::invalid_argument("Tensor: shape does not match data length");
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  const std::vector<int>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return impl_->data.size(); }

  int rows() const { return ndim() == 2 ? dim(0) : throw_not_2d(); }
  int cols() const { return ndim() == 2 ? dim(1) : throw_not_2d(); }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& vec() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T& at(int i) { return impl_->data.at(static_cast<std::size_t>(i)); }
  T at(int i) const { return impl_->data.at(static_cast<std::size_t>(i)); }
  T& at(int i, int j) {
    return impl_->data.at(static_cast<std::size_t>(i) * static_cast<std::size_t>(dim(1)) +
                          static_cast<std::size_t>(j));
  }
  T at(int i, int j) const {
    return impl_->data.at(static_cast<std::size_t>(i) * static_cast<std::size_t>(dim(1)) +
                          static_cast<std::size_t>(j));
  }

  bool has_grad() const { return !impl_->grad.empty(); }

  // Lazily allocated, zero-initialized, same shape as data.
  std::vector<T>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  const std::vector<T>& grad() const {
    if (impl_->grad.empty()) {
      throw std::runtime_error("Tensor: gradient has not been allocated");
    }
    return impl_->grad;
  }

  void zero_grad() {
    for (auto& g : impl_->grad) g = T(0);
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;
  };

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  int throw_not_2d() const { throw std::runtime_error("Tensor: expected 2-D tensor"); }

  std::shared_ptr<Impl> impl_;
};

// Ordered record of executed operations. Replaying it backward visits each
// recorded op exactly once, in reverse execution order. Gradients of op
// outputs are reset at the start of every backward pass; leaf tensors
// (parameters, inputs) accumulate across passes until zero_grad.
template <typename T>
class Tape {
 public:
  void record(Tensor<T> output, std::function<void()> backward_fn) {
    ops_.push_back(Op{std::move(output), std::move(backward_fn)});
  }

  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  void backward(Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar tensor");
    }
    for (auto& op : ops_) op.output.zero_grad();
    loss.grad()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (it->backward_fn) it->backward_fn();
    }
  }

 private:
  struct Op {
    Tensor<T> output;
    std::function<void()> backward_fn;
  };
  std::vector<Op> ops_;
};

}  // namespace bdlm
