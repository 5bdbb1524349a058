#include "dadee/optim.hpp"

#include <cmath>

#include "dadee/errors.hpp"

namespace dadee {

template <std::floating_point T>
AdamState<T> make_adam_state(std::span<const Tensor<T>> params, AdamConfig config) {
  if (!(config.lr > 0.0)) throw ValidationError("adam: lr must be positive");
  AdamState<T> state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.size(), T(0));
    state.second_moment.emplace_back(p.size(), T(0));
  }
  return state;
}

template <std::floating_point T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads,
               AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(state.first_moment.size()) + " moment slots");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].size() || state.first_moment[k].size() != params[k].size()) {
      throw ShapeError("adam_step: parameter " + std::to_string(k) + " of shape " +
                       shape_str(params[k].shape()) + " got a gradient of " +
                       std::to_string(grads[k].size()) + " values");
    }
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_data();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = c.lr * (mi / correction1) / (std::sqrt(vi / correction2) + c.eps);
      w[i] = static_cast<T>(w[i] - update);
    }
    check_finite<T>(w, "adam_step");
  }
}

template <std::floating_point T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig config)
    : params_(std::move(params)), state_(make_adam_state<T>(params_, config)) {}

template <std::floating_point T>
void Adam<T>::step(const Gradients<T>& grads) {
  std::vector<std::vector<T>> flat;
  flat.reserve(params_.size());
  for (const auto& p : params_) flat.push_back(grads.of(p));
  adam_step<T>(params_, flat, state_);
}

template AdamState<float> make_adam_state(std::span<const Tensor<float>>, AdamConfig);
template AdamState<double> make_adam_state(std::span<const Tensor<double>>, AdamConfig);
template void adam_step(std::span<Tensor<float>>, std::span<const std::vector<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>>, std::span<const std::vector<double>>,
                        AdamState<double>&);
template class Adam<float>;
template class Adam<double>;

}  // namespace dadee
