#pragma once

#include <span>
#include <vector>

#include "dadee/tensor.hpp"

namespace dadee {

// Lower clamp applied to every probability before a log.
inline constexpr double kProbFloor = 1e-7;

// Mean over the batch of -log p[label]. `probs` is [C] (one sample) or [B, C];
// rows must sum to 1 within 1e-5.
template <std::floating_point T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels);

// Same quantity from unnormalized logits through log-softmax.
template <std::floating_point T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const std::size_t> labels);

// Batch mean of sum_c p log(p / q), p the reference distribution. Both clamped
// below at kProbFloor; zero terms of p contribute nothing.
template <std::floating_point T>
Tensor<T> kl_divergence(const Tensor<T>& p, const Tensor<T>& q);

double kl_divergence(std::span<const double> p, std::span<const double> q);
double cross_entropy(std::span<const double> probs, std::size_t label);

}  // namespace dadee
