#pragma once

// Dense float32 tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap value handle over shared storage. Operations never
// mutate their inputs; the only in-place writes are gradient accumulation
// during backward() and explicit parameter updates between steps. The tape
// is a thread-local list of backward closures appended in forward order,
// which is by construction a topological order of the computation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mint/core/error.hpp"
#include "mint/core/rng.hpp"

namespace mint {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {
struct TensorNode {
  Shape shape;
  std::shared_ptr<std::vector<float>> data;  // shared so reshape can alias
  bool requires_grad = false;
  std::shared_ptr<std::vector<float>> grad;  // allocated lazily, same length as data
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false) {
    auto n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size()))
      throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->data = std::make_shared<std::vector<float>>(std::move(values));
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0f, requires_grad);
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 1.0f, requires_grad);
  }

  static Tensor filled(Shape shape, float value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value),
                  requires_grad);
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return Tensor(Shape{1}, {value}, requires_grad);
  }

  /// Gaussian init, mean 0 / given std, drawn from the counter-based rng.
  static Tensor randn(Shape shape, Rng& rng, float std = 1.0f, bool requires_grad = false) {
    auto n = shape_numel(shape);
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.normal(0.0f, std);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data->size()); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<const float> data() const { return {node_->data->data(), node_->data->size()}; }
  std::span<float> mutable_data() { return {node_->data->data(), node_->data->size()}; }

  bool has_grad() const { return node_ && node_->grad != nullptr; }

  std::span<const float> grad() const {
    if (!node_->grad) throw ContractError("tensor has no gradient (backward not run?)");
    return {node_->grad->data(), node_->grad->size()};
  }

  /// Gradient buffer, allocated (zero-filled) on first use.
  std::span<float> grad_buffer() {
    if (!node_->grad)
      node_->grad = std::make_shared<std::vector<float>>(node_->data->size(), 0.0f);
    return {node_->grad->data(), node_->grad->size()};
  }

  void zero_grad() {
    if (node_ && node_->grad) std::fill(node_->grad->begin(), node_->grad->end(), 0.0f);
  }

  float item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return (*node_->data)[0];
  }

  float at(int i) const { return (*node_->data)[static_cast<std::size_t>(i)]; }
  float at(int i, int j) const {
    return (*node_->data)[static_cast<std::size_t>(i) * static_cast<std::size_t>(dim(1)) +
                          static_cast<std::size_t>(j)];
  }

  bool all_finite() const {
    for (float x : *node_->data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  /// Deep copy with its own storage; grad is not copied.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(node_->shape, *node_->data, requires_grad);
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: storage-sharing view with a new shape (used by reshape).
  static Tensor alias(const Tensor& src, Shape shape, bool requires_grad) {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->data = src.node_->data;
    t.node_->requires_grad = requires_grad;
    return t;
  }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Thread-local record of backward closures in forward (= topological) order.
class GradTape {
 public:
  static GradTape& active() {
    thread_local GradTape tape;
    return tape;
  }

  bool recording() const { return enabled_; }
  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  void record(std::function<void()> backward_fn) {
    if (enabled_) ops_.push_back(std::move(backward_fn));
  }

  void reset() {
    ops_.clear();
    consumed_ = false;
  }

  /// Runs all recorded closures in reverse order. Single-shot: a second call
  /// without reset() is a contract error.
  void run_backward() {
    if (consumed_) throw ContractError("backward called twice without tape reset");
    if (ops_.empty()) throw ContractError("backward on an empty tape");
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  /// RAII guard that suspends recording (evaluation / analysis paths).
  struct NoGrad {
    NoGrad() : prev_(GradTape::active().enabled_) { GradTape::active().enabled_ = false; }
    ~NoGrad() { GradTape::active().enabled_ = prev_; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

   private:
    bool prev_;
  };

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
  bool enabled_ = true;
};

/// Seeds d(loss)/d(loss) = 1 and propagates through the active tape.
inline void backward(Tensor loss) {
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw ContractError("backward on a tensor that does not require grad");
  loss.grad_buffer()[0] += 1.0f;
  GradTape::active().run_backward();
}

inline bool grad_enabled_for(const Tensor& a) {
  return GradTape::active().recording() && a.requires_grad();
}

inline bool grad_enabled_for(const Tensor& a, const Tensor& b) {
  return GradTape::active().recording() && (a.requires_grad() || b.requires_grad());
}

}  // namespace mint
