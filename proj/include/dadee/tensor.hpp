#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dadee {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major array. Copies are shallow handles onto the same node, so a
// parameter held by a model and by an optimizer is one object; use clone()
// for an independent copy.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor vector(std::vector<T> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Direct write access for initializers, optimizers and checkpoint loading.
  std::span<T> mutable_data() { return node_->data; }

  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  // Same values, fresh node, never recorded.
  Tensor detach() const;
  // Deep copy that keeps requires_grad.
  Tensor clone() const;

  const void* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// Ordered record of differentiable operations. Only operations executed while
// a tape is active (see TapeGuard) and touching a requires_grad input are
// recorded; everything else runs in inference mode.
template <std::floating_point T>
class GradTape {
 public:
  // Accumulate the input gradients given the output gradient. Entries of
  // `input_grads` are null for inputs that do not require a gradient.
  using BackwardFn = std::function<void(std::span<const T> out_grad,
                                        std::span<std::vector<T>*> input_grads)>;

  struct Entry {
    std::string op;
    std::shared_ptr<detail::Node<T>> output;
    std::vector<std::shared_ptr<detail::Node<T>>> inputs;
    BackwardFn backward;
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  static GradTape* active();

 private:
  template <std::floating_point U>
  friend class TapeGuard;
  template <std::floating_point U>
  friend class NoGradGuard;
  static GradTape*& active_slot();

  std::vector<Entry> entries_;
};

// Makes `tape` the recording target for the current thread until destroyed.
template <std::floating_point T>
class TapeGuard {
 public:
  explicit TapeGuard(GradTape<T>& tape) : previous_(GradTape<T>::active_slot()) {
    GradTape<T>::active_slot() = &tape;
  }
  ~TapeGuard() { GradTape<T>::active_slot() = previous_; }
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  GradTape<T>* previous_;
};

// Suspends recording for the current thread (inference mode).
template <std::floating_point T>
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradTape<T>::active_slot()) { GradTape<T>::active_slot() = nullptr; }
  ~NoGradGuard() { GradTape<T>::active_slot() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  GradTape<T>* previous_;
};

// Gradients keyed by tensor identity.
template <std::floating_point T>
class Gradients {
 public:
  // Zeros when `t` was unreachable from the loss.
  std::vector<T> of(const Tensor<T>& t) const;
  bool contains(const Tensor<T>& t) const { return grads_.contains(t.id()); }

  std::unordered_map<const void*, std::vector<T>>& raw() { return grads_; }

 private:
  std::unordered_map<const void*, std::vector<T>> grads_;
};

// Replays the tape in reverse recording order starting from d(loss)/d(loss)=1.
template <std::floating_point T>
Gradients<T> backward(const GradTape<T>& tape, const Tensor<T>& loss);

// Rejects NaN/Inf; `op` names the operation in the error message.
template <std::floating_point T>
void check_finite(std::span<const T> values, const char* op);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace dadee
