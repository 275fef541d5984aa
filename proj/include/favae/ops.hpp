#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "favae/tensor.hpp"

// Differentiable operations. Binary elementwise ops accept operands of
// identical shape, or one operand with a single element (scalar broadcast).
// Everything else must be reshaped explicitly.
namespace favae::ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> neg(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> swish(const Tensor<T>& a);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
// Elementwise power; negative bases are rejected for non-integer exponents.
template <typename T> Tensor<T> pow(const Tensor<T>& a, T exponent);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm);

// [M,K] x [K,N] -> [M,N]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// [B,M,K] x [B,K,N] -> [B,M,N]; transpose_b multiplies by b^T per batch ([B,N,K] input).
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);
// x[..., in] * w[in, out] + bias[out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// NCHW convolution (cross-correlation) with zero padding; bias may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride, int padding);
// Same-kernel valid convolution of every plane of x[..., H, W] with k[kh, kw].
template <typename T> Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& k);
// Mirror padding without edge repetition (index -1 maps to 1).
template <typename T> Tensor<T> pad_reflect(const Tensor<T>& x, int pad);
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);

// Single-group normalization over (C,H,W) per sample with per-channel affine.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// Softmax over the last axis. keep, if non-empty, has one byte per element of
// x; masked entries get probability exactly 0. A fully masked row is all 0.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::span<const std::uint8_t> keep = {});
// Mean token cross-entropy of logits[N, V] against class targets.
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);
// Rows of table[V, D] gathered by index; output shape = prefix + [D].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> indices, Shape prefix);

// Per plane of x[..., M, N]: left[M2, M] * X * right[N, N2]. left/right are constants.
template <typename T>
Tensor<T> plane_transform(const Tensor<T>& x, std::span<const T> left, std::int64_t left_rows,
                          std::span<const T> right, std::int64_t right_cols);

template <typename T> Tensor<T> l2_normalize_lastdim(const Tensor<T>& x, T eps = T(1e-12));
// Forward value of `value`, gradient passed to x unchanged.
template <typename T> Tensor<T> straight_through(const Tensor<T>& x, const Tensor<T>& value);

}  // namespace favae::ops
