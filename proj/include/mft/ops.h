/**
 * @file ops.h
 * @brief Differentiable operator kernels over f32 tensors.
 *
 * Every op records a tape node when an input requires grad and grad recording
 * is enabled. Kernels are single-threaded with a fixed reduction order, so
 * results are bit-reproducible run to run.
 */
#pragma once

#include <optional>

#include "mft/rng.h"
#include "mft/tensor.h"

namespace mft {

/// a [..., m, k] x b [k, n] (shared) or b [..., k, n] (same leading batch).
Tensor matmul(const Tensor& a, const Tensor& b);

/// x [..., in] . weight[out, in]^T + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias = nullptr);

// Elementwise with broadcasting: extents are aligned from the trailing axis and
// must be equal or 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor softmax(const Tensor& x, int64_t axis = -1);

/// Normalizes over the last axis of extent d; gamma and beta are [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// tanh approximation.
Tensor gelu(const Tensor& x);

/// table [V, d] gathered by ids of any shape; result is ids.shape + [d].
Tensor embedding(const Tensor& table, const IdTensor& ids);

/// Mean NLL over positions whose target != ignore_index. logits [..., V].
Tensor cross_entropy(const Tensor& logits, const IdTensor& targets, int32_t ignore_index = -100);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, float p, Rng& rng);

/**
 * Multi-head scaled dot-product attention with a causal mask.
 *
 * q is [B, Tq, D], k and v are [B, Tk, D] with Tk >= Tq; query i sits at
 * absolute position (Tk - Tq + i) and only sees keys at positions <= that.
 * D must be divisible by n_heads; scores are scaled by 1/sqrt(D / n_heads).
 */
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t n_heads);

/// Row-wise log-softmax of a [N, V] float span (no autodiff), written to out.
void log_softmax_rows(std::span<const float> logits, int64_t rows, int64_t cols, std::span<float> out);

}  // namespace mft
