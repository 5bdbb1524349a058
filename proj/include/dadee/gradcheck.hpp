#pragma once

#include <functional>
#include <span>
#include <string>

#include "dadee/tensor.hpp"

namespace dadee {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<param index>[<element>]: analytic vs numeric"
};

// Compares reverse-mode gradients of `loss` against central differences,
// element by element over every tensor in `params`. `loss` must rebuild the
// graph from the current parameter values on each call. The relative error of
// an element is |a - n| / max(|a|, |n|, floor).
GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss,
                                std::span<Tensor<double>> params, double step = 1e-4,
                                double floor = 1e-6);

}  // namespace dadee
