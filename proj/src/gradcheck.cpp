#include "dadee/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dadee {

GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss,
                                std::span<Tensor<double>> params, double step, double floor) {
  Gradients<double> grads;
  {
    GradTape<double> tape;
    TapeGuard<double> guard(tape);
    const Tensor<double> value = loss();
    grads = backward(tape, value);
  }

  GradCheckResult result;
  NoGradGuard<double> no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::vector<double> analytic = grads.of(params[k]);
    auto w = params[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + step;
      const double plus = loss().item();
      w[i] = saved - step;
      const double minus = loss().item();
      w[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        std::ostringstream os;
        os << k << '[' << i << "]: " << analytic[i] << " vs " << numeric;
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace dadee
