// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "tfn/tensor.hpp"

namespace tfn {

/// Gate parameters of a gated recurrent unit. Input matrices are
/// [hidden x input], recurrent matrices [hidden x hidden], biases [hidden].
struct GruParams {
  Tensor w_z, w_r, w_h;
  Tensor u_z, u_r, u_h;
  Tensor b_z, b_r, b_h;

  std::size_t hidden() const { return b_z.numel(); }
  std::size_t input() const { return w_z.dim(1); }
};

/// One GRU step:
///   z  = sigmoid(W_z x + U_z h + b_z)
///   r  = sigmoid(W_r x + U_r h + b_r)
///   h~ = tanh(W_h x + U_h (r * h) + b_h)
///   h' = z * h + (1 - z) * h~
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p);

}  // namespace tfn
