#include "dadee/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>

#include "dadee/errors.hpp"

namespace dadee {
namespace {

template <std::floating_point T>
using BackwardFn = typename GradTape<T>::BackwardFn;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(s));
  }
}

// Builds the output tensor and records it when any input is differentiable and
// a tape is listening. `fn` is only invoked if recorded.
template <std::floating_point T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> data,
                 std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> fn) {
  check_finite<T>(data, op);
  Tensor<T> out(std::move(shape), std::move(data));
  GradTape<T>* tape = GradTape<T>::active();
  if (tape == nullptr) return out;
  bool any = false;
  for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  typename GradTape<T>::Entry entry;
  entry.op = op;
  entry.output = out.node();
  for (const Tensor<T>* in : inputs) entry.inputs.push_back(in->node());
  entry.backward = std::move(fn);
  tape->record(std::move(entry));
  return out;
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* g, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_mismatch(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat source index of every output element for an operand broadcast to `out`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    const std::size_t offset = rank - in.size();
    if (i < offset) continue;
    const std::size_t d = in[i - offset];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> coord(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += coord[i] * stride[i];
    index[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++coord[i] < out[i]) break;
      coord[i] = 0;
    }
  }
  return index;
}

enum class BinaryKind { kAdd, kSub, kMul };

template <std::floating_point T>
Tensor<T> binary(const char* op, BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  // Identity maps are left empty.
  std::vector<std::size_t> ia, ib;
  if (a.shape() != out_shape) ia = broadcast_index(a.shape(), out_shape);
  if (b.shape() != out_shape) ib = broadcast_index(b.shape(), out_shape);

  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[ia.empty() ? i : ia[i]];
    const T y = bv[ib.empty() ? i : ib[i]];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
    }
  }
  return finish<T>(op, out_shape, std::move(out), {&a, &b},
                   [kind, a, b, ia = std::move(ia), ib = std::move(ib), n](
                       std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto av = a.data();
                     auto bv = b.data();
                     if (gin[0]) {
                       auto& ga = *gin[0];
                       for (std::size_t i = 0; i < n; ++i) {
                         const std::size_t src = ia.empty() ? i : ia[i];
                         const T dy = kind == BinaryKind::kMul ? bv[ib.empty() ? i : ib[i]] : T(1);
                         ga[src] += g[i] * dy;
                       }
                     }
                     if (gin[1]) {
                       auto& gb = *gin[1];
                       for (std::size_t i = 0; i < n; ++i) {
                         const std::size_t src = ib.empty() ? i : ib[i];
                         T dy = T(1);
                         if (kind == BinaryKind::kSub) dy = T(-1);
                         if (kind == BinaryKind::kMul) dy = av[ia.empty() ? i : ia[i]];
                         gb[src] += g[i] * dy;
                       }
                     }
                   });
}

// Elementwise unary op given value and derivative functors of the input.
template <std::floating_point T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D df) {
  auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return finish<T>(op, a.shape(), std::move(out), {&a},
                   [a, df](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto av = a.data();
                     auto& ga = *gin[0];
                     for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i] * df(av[i]);
                   });
}

void check_segments(const char* op, const Segments& seg, std::size_t rows) {
  if (seg.size() < 2 || seg.front() != 0 || seg.back() != rows) {
    throw ShapeError(std::string(op) + ": segments do not cover " + std::to_string(rows) + " rows");
  }
  for (std::size_t b = 1; b < seg.size(); ++b) {
    if (seg[b] <= seg[b - 1]) throw ShapeError(std::string(op) + ": empty or unordered segment");
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_mismatch("matmul", a.shape(), b.shape());
  std::vector<T> out(m * n, T(0));
  gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  return finish<T>("matmul", Shape{m, n}, std::move(out), {&a, &b},
                   [a, b, m, k, n](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     if (gin[0]) gemm_nt(m, n, k, g.data(), b.data().data(), gin[0]->data());
                     if (gin[1]) gemm_tn(m, k, n, a.data().data(), g.data(), gin[1]->data());
                   });
}

template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a.shape(), 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto av = a.data();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return finish<T>("transpose", Shape{n, m}, std::move(out), {&a},
                   [m, n](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto& ga = *gin[0];
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                   });
}

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) shape_mismatch("reshape", a.shape(), shape);
  std::vector<T> out(a.data().begin(), a.data().end());
  return finish<T>("reshape", std::move(shape), std::move(out), {&a},
                   [](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto& ga = *gin[0];
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   });
}

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("add", BinaryKind::kAdd, a, b);
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("sub", BinaryKind::kSub, a, b);
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("mul", BinaryKind::kMul, a, b);
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>("scale", a, [factor](T x) { return x * factor; }, [factor](T) { return factor; });
}

template <std::floating_point T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary<T>("add_scalar", a, [value](T x) { return x + value; }, [](T) { return T(1); });
}

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <std::floating_point T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return unary<T>(
      "leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x) { return x > T(0) ? T(1) : slope; });
}

template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return unary<T>(
      "gelu", a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
      [](T x) {
        const T t = std::tanh(c * (x + k * x * x * x));
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
      });
}

template <std::floating_point T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T x) {
        const T t = std::tanh(x);
        return T(1) - t * t;
      });
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto f = [](T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  };
  return unary<T>("sigmoid", a, f, [f](T x) {
    const T s = f(x);
    return s * (T(1) - s);
  });
}

template <std::floating_point T>
Tensor<T> log(const Tensor<T>& a) {
  for (T x : a.data()) {
    if (!(x > T(0))) throw NumericError("log: non-positive input");
  }
  return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}

template <std::floating_point T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& a) {
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  auto av = a.data();
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * cols;
    T* y = out.data() + r * cols;
    const T mx = *std::max_element(x, x + cols);
    T z = T(0);
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  std::vector<T> probs = out;
  return finish<T>("softmax", a.shape(), std::move(out), {&a},
                   [probs = std::move(probs), rows, cols](std::span<const T> g,
                                                          std::span<std::vector<T>*> gin) {
                     auto& ga = *gin[0];
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* p = probs.data() + r * cols;
                       const T* gr = g.data() + r * cols;
                       T dot = T(0);
                       for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * p[c];
                       for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += p[c] * (gr[c] - dot);
                     }
                   });
}

template <std::floating_point T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  auto av = a.data();
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * cols;
    T* y = out.data() + r * cols;
    const T mx = *std::max_element(x, x + cols);
    T z = T(0);
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lz;
  }
  std::vector<T> logp = out;
  return finish<T>("log_softmax", a.shape(), std::move(out), {&a},
                   [logp = std::move(logp), rows, cols](std::span<const T> g,
                                                        std::span<std::vector<T>*> gin) {
                     auto& ga = *gin[0];
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* gr = g.data() + r * cols;
                       T total = T(0);
                       for (std::size_t c = 0; c < cols; ++c) total += gr[c];
                       for (std::size_t c = 0; c < cols; ++c)
                         ga[r * cols + c] += gr[c] - std::exp(logp[r * cols + c]) * total;
                     }
                   });
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T x : a.data()) total += x;
  const std::size_t n = a.size();
  return finish<T>("sum", Shape{1}, std::vector<T>{total}, {&a},
                   [n](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto& ga = *gin[0];
                     for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                   });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& a) {
  T total = T(0);
  for (T x : a.data()) total += x;
  const std::size_t n = a.size();
  return finish<T>("mean", Shape{1}, std::vector<T>{total / static_cast<T>(n)}, {&a},
                   [n](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto& ga = *gin[0];
                     const T share = g[0] / static_cast<T>(n);
                     for (std::size_t i = 0; i < n; ++i) ga[i] += share;
                   });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) {
    throw ShapeError("mean: axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  auto av = a.data();
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * len + l) * inner + i];
  for (T& x : out) x /= static_cast<T>(len);
  return finish<T>("mean", std::move(out_shape), std::move(out), {&a},
                   [outer, inner, len](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto& ga = *gin[0];
                     for (std::size_t o = 0; o < outer; ++o)
                       for (std::size_t l = 0; l < len; ++l)
                         for (std::size_t i = 0; i < inner; ++i)
                           ga[(o * len + l) * inner + i] += g[o * inner + i] / static_cast<T>(len);
                   });
}

template <std::floating_point T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const TokenId> ids) {
  require_rank("embedding", table.shape(), 2);
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  auto tv = table.data();
  std::vector<T> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw ValidationError("embedding: id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                            std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
  }
  std::vector<TokenId> rows(ids.begin(), ids.end());
  return finish<T>("embedding", Shape{ids.size(), d}, std::move(out), {&table},
                   [rows = std::move(rows), d](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto& gt = *gin[0];
                     for (std::size_t r = 0; r < rows.size(); ++r) {
                       T* dst = gt.data() + static_cast<std::size_t>(rows[r]) * d;
                       for (std::size_t j = 0; j < d; ++j) dst[j] += g[r * d + j];
                     }
                   });
}

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_rank("layer_norm", x.shape(), 2);
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (gamma.shape() != Shape{d}) shape_mismatch("layer_norm", x.shape(), gamma.shape());
  if (beta.shape() != Shape{d}) shape_mismatch("layer_norm", x.shape(), beta.shape());
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<T> out(m * d), xhat(m * d), inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv;
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  return finish<T>(
      "layer_norm", Shape{m, d}, std::move(out), {&x, &gamma, &beta},
      [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), m, d](
          std::span<const T> g, std::span<std::vector<T>*> gin) {
        auto gv = gamma.data();
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < m; ++r) {
          const T* gr = g.data() + r * d;
          const T* xh = xhat.data() + r * d;
          if (gin[1]) {
            for (std::size_t j = 0; j < d; ++j) (*gin[1])[j] += gr[j] * xh[j];
          }
          if (gin[2]) {
            for (std::size_t j = 0; j < d; ++j) (*gin[2])[j] += gr[j];
          }
          if (gin[0]) {
            T s1 = T(0), s2 = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = gr[j] * gv[j];
              s1 += dxhat[j];
              s2 += dxhat[j] * xh[j];
            }
            const T k = inv_std[r] / static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              (*gin[0])[r * d + j] += k * (static_cast<T>(d) * dxhat[j] - s1 - xh[j] * s2);
            }
          }
        }
      });
}

template <std::floating_point T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank("concat", p.shape(), 2);
  const std::size_t other = axis == 0 ? 1 : 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(other) != parts[0].dim(other)) shape_mismatch("concat", parts[0].shape(), p.shape());
    total += p.dim(axis);
  }
  Shape out_shape = parts[0].shape();
  out_shape[axis] = total;
  const std::size_t rows = out_shape[0], cols = out_shape[1];
  std::vector<T> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    auto pv = p.data();
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t r = 0; r < pr; ++r)
      for (std::size_t c = 0; c < pc; ++c) {
        const std::size_t orow = axis == 0 ? off + r : r;
        const std::size_t ocol = axis == 0 ? c : off + c;
        out[orow * cols + ocol] = pv[r * pc + c];
      }
    off += p.dim(axis);
  }

  // finish() takes a fixed initializer list, so record concat by hand.
  check_finite<T>(out, "concat");
  Tensor<T> result(std::move(out_shape), std::move(out));
  GradTape<T>* tape = GradTape<T>::active();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (tape == nullptr || !any) return result;
  result.set_requires_grad(true);
  typename GradTape<T>::Entry entry;
  entry.op = "concat";
  entry.output = result.node();
  std::vector<Shape> shapes;
  for (const auto& p : parts) {
    entry.inputs.push_back(p.node());
    shapes.push_back(p.shape());
  }
  entry.backward = [shapes = std::move(shapes), offsets = std::move(offsets), axis, cols](
                       std::span<const T> g, std::span<std::vector<T>*> gin) {
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      if (!gin[k]) continue;
      const std::size_t pr = shapes[k][0], pc = shapes[k][1];
      for (std::size_t r = 0; r < pr; ++r)
        for (std::size_t c = 0; c < pc; ++c) {
          const std::size_t orow = axis == 0 ? offsets[k] + r : r;
          const std::size_t ocol = axis == 0 ? c : offsets[k] + c;
          (*gin[k])[r * pc + c] += g[orow * cols + ocol];
        }
    }
  };
  tape->record(std::move(entry));
  return result;
}

template <std::floating_point T>
Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> index) {
  require_rank("pick", a.shape(), 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (index.size() != rows) shape_mismatch("pick", a.shape(), Shape{index.size()});
  auto av = a.data();
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) {
      throw ValidationError("pick: index " + std::to_string(index[r]) + " out of range for " +
                            std::to_string(cols) + " columns");
    }
    out[r] = av[r * cols + index[r]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return finish<T>("pick", Shape{rows}, std::move(out), {&a},
                   [idx = std::move(idx), cols](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     for (std::size_t r = 0; r < idx.size(); ++r) (*gin[0])[r * cols + idx[r]] += g[r];
                   });
}

template <std::floating_point T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_rank("slice_rows", a.shape(), 2);
  if (begin >= end || end > a.dim(0)) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_str(a.shape()));
  }
  const std::size_t cols = a.dim(1);
  auto av = a.data();
  std::vector<T> out(av.begin() + begin * cols, av.begin() + end * cols);
  return finish<T>("slice_rows", Shape{end - begin, cols}, std::move(out), {&a},
                   [begin, cols](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[begin * cols + i] += g[i];
                   });
}

template <std::floating_point T>
Tensor<T> segment_mean(const Tensor<T>& x, const Segments& segments) {
  require_rank("segment_mean", x.shape(), 2);
  check_segments("segment_mean", segments, x.dim(0));
  const std::size_t d = x.dim(1), batch = segments.size() - 1;
  auto xv = x.data();
  std::vector<T> out(batch * d, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const T len = static_cast<T>(segments[b + 1] - segments[b]);
    for (std::size_t r = segments[b]; r < segments[b + 1]; ++r)
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += xv[r * d + j];
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] /= len;
  }
  return finish<T>("segment_mean", Shape{batch, d}, std::move(out), {&x},
                   [segments, d, batch](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto& gx = *gin[0];
                     for (std::size_t b = 0; b < batch; ++b) {
                       const T len = static_cast<T>(segments[b + 1] - segments[b]);
                       for (std::size_t r = segments[b]; r < segments[b + 1]; ++r)
                         for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[b * d + j] / len;
                     }
                   });
}

template <std::floating_point T>
Tensor<T> segment_first(const Tensor<T>& x, const Segments& segments) {
  require_rank("segment_first", x.shape(), 2);
  check_segments("segment_first", segments, x.dim(0));
  const std::size_t d = x.dim(1), batch = segments.size() - 1;
  auto xv = x.data();
  std::vector<T> out(batch * d);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(xv.data() + segments[b] * d, d, out.data() + b * d);
  return finish<T>("segment_first", Shape{batch, d}, std::move(out), {&x},
                   [segments, d, batch](std::span<const T> g, std::span<std::vector<T>*> gin) {
                     auto& gx = *gin[0];
                     for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t j = 0; j < d; ++j) gx[segments[b] * d + j] += g[b * d + j];
                   });
}

template <std::floating_point T>
Tensor<T> segment_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const Segments& segments, std::size_t heads) {
  require_rank("segment_attention", q.shape(), 2);
  if (k.shape() != q.shape()) shape_mismatch("segment_attention", q.shape(), k.shape());
  if (v.shape() != q.shape()) shape_mismatch("segment_attention", q.shape(), v.shape());
  const std::size_t n = q.dim(0), d = q.dim(1);
  check_segments("segment_attention", segments, n);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("segment_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  auto qv = q.data(), kv = k.data(), vv = v.data();

  // Attention weights for every (segment, head), stored back to back.
  std::vector<T> probs;
  std::vector<T> out(n * d, T(0));
  for (std::size_t b = 0; b + 1 < segments.size(); ++b) {
    const std::size_t s0 = segments[b], len = segments[b + 1] - s0;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      const std::size_t base = probs.size();
      probs.resize(base + len * len);
      T* p = probs.data() + base;
      for (std::size_t i = 0; i < len; ++i) {
        const T* qi = qv.data() + (s0 + i) * d + c0;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          const T* kj = kv.data() + (s0 + j) * d + c0;
          T dot = T(0);
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          p[i * len + j] = dot * inv_sqrt;
          mx = std::max(mx, p[i * len + j]);
        }
        T z = T(0);
        for (std::size_t j = 0; j < len; ++j) z += (p[i * len + j] = std::exp(p[i * len + j] - mx));
        for (std::size_t j = 0; j < len; ++j) p[i * len + j] /= z;
        T* oi = out.data() + (s0 + i) * d + c0;
        for (std::size_t j = 0; j < len; ++j) {
          const T* vj = vv.data() + (s0 + j) * d + c0;
          const T w = p[i * len + j];
          for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }

  return finish<T>(
      "segment_attention", Shape{n, d}, std::move(out), {&q, &k, &v},
      [q, k, v, segments, heads, dh, d, inv_sqrt, probs = std::move(probs)](
          std::span<const T> g, std::span<std::vector<T>*> gin) {
        auto qv = q.data(), kv = k.data(), vv = v.data();
        std::size_t base = 0;
        std::vector<T> dp, ds;
        for (std::size_t b = 0; b + 1 < segments.size(); ++b) {
          const std::size_t s0 = segments[b], len = segments[b + 1] - s0;
          dp.resize(len * len);
          ds.resize(len * len);
          for (std::size_t h = 0; h < heads; ++h, base += len * len) {
            const std::size_t c0 = h * dh;
            const T* p = probs.data() + base;
            // dP = dO V^T ; dV = P^T dO
            for (std::size_t i = 0; i < len; ++i) {
              const T* gi = g.data() + (s0 + i) * d + c0;
              for (std::size_t j = 0; j < len; ++j) {
                const T* vj = vv.data() + (s0 + j) * d + c0;
                T dot = T(0);
                for (std::size_t c = 0; c < dh; ++c) dot += gi[c] * vj[c];
                dp[i * len + j] = dot;
                if (gin[2]) {
                  T* gvj = gin[2]->data() + (s0 + j) * d + c0;
                  const T w = p[i * len + j];
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += w * gi[c];
                }
              }
            }
            // Softmax backward, folded with the 1/sqrt(dh) scale.
            for (std::size_t i = 0; i < len; ++i) {
              T dot = T(0);
              for (std::size_t j = 0; j < len; ++j) dot += dp[i * len + j] * p[i * len + j];
              for (std::size_t j = 0; j < len; ++j)
                ds[i * len + j] = p[i * len + j] * (dp[i * len + j] - dot) * inv_sqrt;
            }
            for (std::size_t i = 0; i < len; ++i)
              for (std::size_t j = 0; j < len; ++j) {
                const T s = ds[i * len + j];
                if (gin[0]) {
                  T* gqi = gin[0]->data() + (s0 + i) * d + c0;
                  const T* kj = kv.data() + (s0 + j) * d + c0;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += s * kj[c];
                }
                if (gin[1]) {
                  T* gkj = gin[1]->data() + (s0 + j) * d + c0;
                  const T* qi = qv.data() + (s0 + i) * d + c0;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += s * qi[c];
                }
              }
          }
        }
      });
}

#define DADEE_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> transpose(const Tensor<T>&);                                               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                           \
  template Tensor<T> gelu(const Tensor<T>&);                                                    \
  template Tensor<T> tanh(const Tensor<T>&);                                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> log(const Tensor<T>&);                                                     \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                             \
  template Tensor<T> softmax(const Tensor<T>&);                                                 \
  template Tensor<T> log_softmax(const Tensor<T>&);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const TokenId>);                     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                           \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> pick(const Tensor<T>&, std::span<const std::size_t>);                      \
  template Tensor<T> segment_mean(const Tensor<T>&, const Segments&);                           \
  template Tensor<T> segment_first(const Tensor<T>&, const Segments&);                          \
  template Tensor<T> segment_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                       const Segments&, std::size_t);

DADEE_INSTANTIATE_OPS(float)
DADEE_INSTANTIATE_OPS(double)

#undef DADEE_INSTANTIATE_OPS

}  // namespace dadee
