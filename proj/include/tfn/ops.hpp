// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.hpp
 * @brief  Differentiable operations over Tensor.
 *
 * Matrices are rank-2 row-major tensors; "vectors" are rank-1. Every
 * operation validates shapes and throws ShapeError naming the offending
 * shapes.
 */
#pragma once

#include <cstddef>
#include <vector>

#include "tfn/tensor.hpp"

namespace tfn {

enum class Activation { relu, sigmoid, tanh };

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
/// y = W x for W [rows x cols] and x [cols].
Tensor matvec(const Tensor& w, const Tensor& x);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor pow_scalar(const Tensor& a, double p);
Tensor activation(const Tensor& x, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::tanh); }
/// Elementwise minimum; ties route the gradient to `a`.
Tensor minimum(const Tensor& a, const Tensor& b);

// Row broadcasting for [N x C] against [C].
Tensor add_row_vector(const Tensor& x, const Tensor& v);
Tensor mul_row_vector(const Tensor& x, const Tensor& v);
/// [C] -> [n x C], every row a copy of v.
Tensor tile_rows(const Tensor& v, std::size_t n);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column means of [N x C] -> [C].
Tensor mean_rows(const Tensor& x);
/// Column-wise maximum of [N x C] -> [C]. The gradient of each output goes
/// entirely to the first row attaining the maximum.
Tensor reduce_max_over_points(const Tensor& x);

// Structure.
Tensor reshape(const Tensor& x, Shape shape);
/// Contiguous range [begin, begin + len) of a rank-1 tensor.
Tensor slice(const Tensor& x, std::size_t begin, std::size_t len);
/// Concatenation of rank-1 tensors.
Tensor concat(const std::vector<Tensor>& parts);
/// Column concatenation of matrices with equal row counts.
Tensor concat_cols(const Tensor& a, const Tensor& b);

// Losses.
/// Mean over elements of the Huber penalty of r = pred - target.
Tensor huber_loss(const Tensor& pred, const Tensor& target, double delta = 1.0);
/// -log softmax(logits)[label] for rank-1 logits.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label);
/// Mean over rows of the per-row cross entropy for [N x K] logits.
Tensor softmax_cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels);
/// 1 - <u, w> / (|u| |w|). Throws NumericError when either norm is below 1e-12.
Tensor cosine_distance(const Tensor& u, const Tensor& w);

/// Fully connected layer on a rank-1 input: x W + b for W [in x out].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
/// Per-row fully connected layer: X W + b for X [N x in].
Tensor dense_rows(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace tfn
