#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dadee/tensor.hpp"

namespace dadee {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <std::floating_point T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;
};

template <std::floating_point T>
AdamState<T> make_adam_state(std::span<const Tensor<T>> params, AdamConfig config);

// Bias-corrected Adam update, in place on `params`.
template <std::floating_point T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads,
               AdamState<T>& state);

// Owns the parameter list and its state; pulls gradients by identity.
template <std::floating_point T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig config);

  void step(const Gradients<T>& grads);

  const AdamState<T>& state() const { return state_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamState<T> state_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace dadee
