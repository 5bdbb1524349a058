#include "dadee/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dadee/errors.hpp"

namespace dadee {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in shape " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(numel(shape)) + " values but " +
                     std::to_string(data.size()) + " were given");
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <std::floating_point T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::vector(std::vector<T> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

template <std::floating_point T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->data, node_->requires_grad);
}

template <std::floating_point T>
GradTape<T>*& GradTape<T>::active_slot() {
  thread_local GradTape<T>* slot = nullptr;
  return slot;
}

template <std::floating_point T>
GradTape<T>* GradTape<T>::active() {
  return active_slot();
}

template <std::floating_point T>
std::vector<T> Gradients<T>::of(const Tensor<T>& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return std::vector<T>(t.size(), T(0));
  return it->second;
}

template <std::floating_point T>
Gradients<T> backward(const GradTape<T>& tape, const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (tape.empty()) throw ValidationError("backward: tape is empty");

  Gradients<T> result;
  auto& grads = result.raw();
  grads[loss.id()] = std::vector<T>{T(1)};

  const auto& entries = tape.entries();
  std::vector<std::vector<T>*> slots;
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    auto found = grads.find(it->output.get());
    if (found == grads.end()) continue;
    const std::vector<T> out_grad = std::move(found->second);
    grads.erase(found);

    // unordered_map keeps element addresses stable across insertions.
    slots.assign(it->inputs.size(), nullptr);
    for (std::size_t k = 0; k < it->inputs.size(); ++k) {
      const auto& in = it->inputs[k];
      if (!in->requires_grad) continue;
      auto& g = grads[in.get()];
      if (g.empty()) g.assign(in->data.size(), T(0));
      slots[k] = &g;
    }
    it->backward(out_grad, slots);
  }
  return result;
}

template <std::floating_point T>
void check_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": produced a non-finite value");
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template class Gradients<float>;
template class Gradients<double>;
template Gradients<float> backward(const GradTape<float>&, const Tensor<float>&);
template Gradients<double> backward(const GradTape<double>&, const Tensor<double>&);
template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);

}  // namespace dadee
