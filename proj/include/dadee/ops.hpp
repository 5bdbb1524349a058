#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dadee/tensor.hpp"

// Differentiable primitives. Every function validates shapes (ShapeError names
// the operation and both shapes), rejects non-finite results (NumericError),
// and records itself on the active tape when an input requires a gradient.
namespace dadee {

using TokenId = std::int32_t;

// Offsets of packed variable-length sequences: segment b spans rows
// [offsets[b], offsets[b+1]). offsets.front() == 0, strictly increasing.
using Segments = std::vector<std::size_t>;

template <std::floating_point T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> transpose(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Elementwise with numpy-style broadcasting.
template <std::floating_point T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <std::floating_point T> Tensor<T> add_scalar(const Tensor<T>& a, T value);

template <std::floating_point T> Tensor<T> relu(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
// tanh approximation of GELU.
template <std::floating_point T> Tensor<T> gelu(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> tanh(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> sigmoid(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> log(const Tensor<T>& a);
// Gradient passes only where lo <= a <= hi.
template <std::floating_point T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// Over the last axis.
template <std::floating_point T> Tensor<T> softmax(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> log_softmax(const Tensor<T>& a);

template <std::floating_point T> Tensor<T> sum(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> mean(const Tensor<T>& a);
// Removes `axis`.
template <std::floating_point T> Tensor<T> mean(const Tensor<T>& a, std::size_t axis);

// Rows of `table` ([V, d]) selected by `ids` -> [n, d].
template <std::floating_point T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const TokenId> ids);

// Row-wise normalization of [m, d] with affine gamma/beta of shape [d].
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Concatenation of 2-D tensors along axis 0 (rows) or 1 (columns).
template <std::floating_point T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);

// Rows [begin, end) of a 2-D tensor.
template <std::floating_point T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);

// out[b] = a[b, index[b]] for a of shape [B, C].
template <std::floating_point T>
Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> index);

// Per-segment mean / first row of packed [N, d] -> [B, d].
template <std::floating_point T>
Tensor<T> segment_mean(const Tensor<T>& x, const Segments& segments);
template <std::floating_point T>
Tensor<T> segment_first(const Tensor<T>& x, const Segments& segments);

// Scaled dot-product self-attention restricted to each segment, with the
// d columns split into `heads` equal groups. q, k, v: [N, d] -> [N, d].
template <std::floating_point T>
Tensor<T> segment_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const Segments& segments, std::size_t heads);

}  // namespace dadee
