#include "dadee/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dadee/errors.hpp"
#include "dadee/ops.hpp"

namespace dadee {
namespace {

// [C] -> [1, C]; [B, C] unchanged.
template <std::floating_point T>
Tensor<T> as_rows(const Tensor<T>& t, const char* op) {
  if (t.rank() == 1) return reshape(t, Shape{1, t.size()});
  if (t.rank() == 2) return t;
  throw ShapeError(std::string(op) + ": expected [C] or [B, C], got " + shape_str(t.shape()));
}

template <std::floating_point T>
void require_distributions(const Tensor<T>& rows, const char* op) {
  const std::size_t cols = rows.dim(1);
  auto v = rows.data();
  for (std::size_t r = 0; r < rows.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (v[r * cols + c] < T(0)) throw ValidationError(std::string(op) + ": negative probability");
      total += v[r * cols + c];
    }
    if (std::abs(total - 1.0) > 1e-5) {
      throw ValidationError(std::string(op) + ": row " + std::to_string(r) + " sums to " +
                            std::to_string(total) + ", not 1");
    }
  }
}

void require_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes,
                    const char* op) {
  if (labels.size() != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw ValidationError(std::string(op) + ": label " + std::to_string(y) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels) {
  const Tensor<T> rows = as_rows(probs, "cross_entropy");
  require_labels(labels, rows.dim(0), rows.dim(1), "cross_entropy");
  require_distributions(rows, "cross_entropy");
  const Tensor<T> picked = pick(rows, labels);
  return scale(mean(log(clamp(picked, T(kProbFloor), T(1)))), T(-1));
}

template <std::floating_point T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  const Tensor<T> rows = as_rows(logits, "cross_entropy_with_logits");
  require_labels(labels, rows.dim(0), rows.dim(1), "cross_entropy_with_logits");
  return scale(mean(pick(log_softmax(rows), labels)), T(-1));
}

template <std::floating_point T>
Tensor<T> kl_divergence(const Tensor<T>& p, const Tensor<T>& q) {
  if (p.shape() != q.shape()) {
    throw ShapeError("kl_divergence: incompatible shapes " + shape_str(p.shape()) + " and " +
                     shape_str(q.shape()));
  }
  const Tensor<T> pr = as_rows(p, "kl_divergence");
  const Tensor<T> qr = as_rows(q, "kl_divergence");
  require_distributions(pr, "kl_divergence");
  require_distributions(qr, "kl_divergence");
  const T floor = T(kProbFloor);
  const Tensor<T> log_ratio = sub(log(clamp(pr, floor, T(1))), log(clamp(qr, floor, T(1))));
  return scale(sum(mul(pr, log_ratio)), T(1) / static_cast<T>(pr.dim(0)));
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw ShapeError("kl_divergence: lengths " + std::to_string(p.size()) + " and " +
                     std::to_string(q.size()) + " differ");
  }
  return kl_divergence(Tensor<double>::vector({p.begin(), p.end()}),
                       Tensor<double>::vector({q.begin(), q.end()}))
      .item();
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
  const std::size_t labels[] = {label};
  return cross_entropy(Tensor<double>::vector({probs.begin(), probs.end()}), labels).item();
}

template Tensor<float> cross_entropy(const Tensor<float>&, std::span<const std::size_t>);
template Tensor<double> cross_entropy(const Tensor<double>&, std::span<const std::size_t>);
template Tensor<float> cross_entropy_with_logits(const Tensor<float>&, std::span<const std::size_t>);
template Tensor<double> cross_entropy_with_logits(const Tensor<double>&, std::span<const std::size_t>);
template Tensor<float> kl_divergence(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> kl_divergence(const Tensor<double>&, const Tensor<double>&);

}  // namespace dadee
