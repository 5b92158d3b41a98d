// SPDX-License-Identifier: Apache-2.0
#include "tfn/gru.hpp"

#include "tfn/ops.hpp"

namespace tfn {

namespace {
void check(const Tensor& t, const Shape& want, const char* name) {
  if (t.shape() != want) {
    throw ShapeError(std::string("gru_cell: ") + name + " has shape " + shape_str(t.shape()) +
                     ", expected " + shape_str(want));
  }
}
}  // namespace

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  const std::size_t hid = p.hidden();
  const std::size_t in = x.numel();
  check(x, {in}, "x");
  check(h_prev, {hid}, "h_prev");
  check(p.w_z, {hid, in}, "W_z");
  check(p.w_r, {hid, in}, "W_r");
  check(p.w_h, {hid, in}, "W_h");
  check(p.u_z, {hid, hid}, "U_z");
  check(p.u_r, {hid, hid}, "U_r");
  check(p.u_h, {hid, hid}, "U_h");
  check(p.b_r, {hid}, "b_r");
  check(p.b_h, {hid}, "b_h");

  const Tensor z = sigmoid(add(add(matvec(p.w_z, x), matvec(p.u_z, h_prev)), p.b_z));
  const Tensor r = sigmoid(add(add(matvec(p.w_r, x), matvec(p.u_r, h_prev)), p.b_r));
  const Tensor cand =
      tanh(add(add(matvec(p.w_h, x), matvec(p.u_h, mul(r, h_prev))), p.b_h));
  // z * h + (1 - z) * cand == cand + z * (h - cand)
  return add(cand, mul(z, sub(h_prev, cand)));
}

}  // namespace tfn
