#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tripcast/core/tensor.hpp"

namespace tripcast {

// Differentiable primitives. All reductions and normalizations act on the
// last axis unless stated otherwise. Shape violations raise ShapeError naming
// the op and the offending shapes.

/// a[..., k] x b[k, n] -> [..., n]; leading axes of `a` are flattened.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise ops. Shapes must match, or one operand's shape must be a
/// trailing suffix of the other's (it is then broadcast over leading axes).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);

/// Natural logarithm; inputs must be positive.
template <typename T>
Tensor<T> log(const Tensor<T>& a);

/// Erf-based GELU. Single precision uses a rational erf accurate to a few ulp.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

template <typename T>
Tensor<T> softmax(const Tensor<T>& a);

/// (x - mean) / sqrt(var + eps) * gamma + beta over the last axis, with the
/// population variance. gamma and beta have shape [last].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

/// Channels-last 1-D convolution: x[B, L, Cin], weight[K, Cin, Cout],
/// bias[Cout]; zero padding `pad` on both ends. Output [B, L + 2 pad - K + 1, Cout].
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t pad = 0);

/// Rows of table[N, d] selected by `ids`; output shape is `index_shape` + [d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids,
                    const Shape& index_shape);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Inserts a new axis of extent n at `axis` by repetition.
template <typename T>
Tensor<T> expand(const Tensor<T>& a, std::size_t axis, std::size_t n);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// Masked multi-head scaled dot-product attention.
///
/// q[B, Lq, D]; k, v[Bk, Lk, D] with Bk equal to B or 1 (broadcast over the
/// batch). key_mask has Bk * Lk entries, 0 marking a key that no query may
/// attend to. D is split into `heads` contiguous groups of D / heads columns.
/// A query whose keys are all masked receives a zero context vector.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::span<const std::uint8_t> key_mask, std::size_t heads);

/// Number of attention query rows (per head) that found no unmasked key on
/// this thread since the last reset.
std::size_t empty_attention_rows() noexcept;
void reset_empty_attention_rows() noexcept;

}  // namespace tripcast
