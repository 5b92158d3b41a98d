// SPDX-License-Identifier: Apache-2.0
#include "tfn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tfn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.values().data(), static_cast<Eigen::Index>(t.dim(0)),
                     static_cast<Eigen::Index>(t.dim(1)));
}

MatMap grad_mat(const Tensor& t) {
  auto g = t.mutable_grad();
  return MatMap(g.data(), static_cast<Eigen::Index>(t.dim(0)),
                static_cast<Eigen::Index>(t.dim(1)));
}

ConstMatMap grad_of(const Tensor& t) {
  return ConstMatMap(t.grad().data(), static_cast<Eigen::Index>(t.dim(0)),
                     static_cast<Eigen::Index>(t.dim(1)));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " operand, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const bool track = tracking({&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    active_tape()->record(name, {x}, y, [x, y, deriv]() mutable {
      const auto xv = x.values();
      const auto yv = y.values();
      const auto gy = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xv[i], yv[i]);
    });
  }
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), n = b.dim(1);
  std::vector<double> out(m * n);
  MatMap(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      as_mat(a) * as_mat(b);
  const bool track = tracking({&a, &b});
  Tensor c({m, n}, std::move(out), track);
  if (track) {
    active_tape()->record("matmul", {a, b}, c, [a, b, c]() mutable {
      if (a.requires_grad()) grad_mat(a).noalias() += grad_of(c) * as_mat(b).transpose();
      if (b.requires_grad()) grad_mat(b).noalias() += as_mat(a).transpose() * grad_of(c);
    });
  }
  return c;
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  require_rank(w, 2, "matvec");
  require_rank(x, 1, "matvec");
  if (w.dim(1) != x.dim(0)) {
    throw ShapeError("matvec: " + shape_str(w.shape()) + " cannot multiply " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = w.dim(0);
  std::vector<double> out(rows);
  VecMap(out.data(), static_cast<Eigen::Index>(rows)).noalias() =
      as_mat(w) * ConstVecMap(x.values().data(), static_cast<Eigen::Index>(x.numel()));
  const bool track = tracking({&w, &x});
  Tensor y({rows}, std::move(out), track);
  if (track) {
    active_tape()->record("matvec", {w, x}, y, [w, x, y]() mutable {
      const ConstVecMap gy(y.grad().data(), static_cast<Eigen::Index>(y.numel()));
      const ConstVecMap xv(x.values().data(), static_cast<Eigen::Index>(x.numel()));
      if (w.requires_grad()) grad_mat(w).noalias() += gy * xv.transpose();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        VecMap(gx.data(), static_cast<Eigen::Index>(gx.size())).noalias() +=
            as_mat(w).transpose() * gy;
      }
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool track = tracking({&a, &b});
  Tensor y(a.shape(), std::move(out), track);
  if (track) {
    active_tape()->record("add", {a, b}, y, [a, b, y]() mutable {
      const auto gy = y.grad();
      if (a.requires_grad()) {
        auto g = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  const bool track = tracking({&a, &b});
  Tensor y(a.shape(), std::move(out), track);
  if (track) {
    active_tape()->record("sub", {a, b}, y, [a, b, y]() mutable {
      const auto gy = y.grad();
      if (a.requires_grad()) {
        auto g = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool track = tracking({&a, &b});
  Tensor y(a.shape(), std::move(out), track);
  if (track) {
    active_tape()->record("mul", {a, b}, y, [a, b, y]() mutable {
      const auto gy = y.grad();
      if (a.requires_grad()) {
        auto g = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * a[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor pow_scalar(const Tensor& a, double p) {
  return unary(
      a, "pow_scalar", [p](double v) { return std::pow(v, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return unary(
          x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
          [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::sigmoid:
      return unary(
          x, "sigmoid",
          [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
          },
          [](double, double y) { return y * (1.0 - y); });
    case Activation::tanh:
      return unary(
          x, "tanh", [](double v) { return std::tanh(v); },
          [](double, double y) { return 1.0 - y * y; });
  }
  throw Error("activation: unknown kind");
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a[i], b[i]);
  const bool track = tracking({&a, &b});
  Tensor y(a.shape(), std::move(out), track);
  if (track) {
    active_tape()->record("minimum", {a, b}, y, [a, b, y]() mutable {
      const auto gy = y.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const bool to_a = a[i] <= b[i];
        if (to_a && a.requires_grad()) a.mutable_grad()[i] += gy[i];
        if (!to_a && b.requires_grad()) b.mutable_grad()[i] += gy[i];
      }
    });
  }
  return y;
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "add_row_vector");
  require_rank(v, 1, "add_row_vector");
  if (x.dim(1) != v.dim(0)) {
    throw ShapeError("add_row_vector: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += v[j];
  const bool track = tracking({&x, &v});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    active_tape()->record("add_row_vector", {x, v}, y, [x, v, y, n, c]() mutable {
      const auto gy = y.grad();
      if (x.requires_grad()) {
        auto g = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
      if (v.requires_grad()) {
        auto g = v.mutable_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) g[j] += gy[r * c + j];
      }
    });
  }
  return y;
}

Tensor mul_row_vector(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "mul_row_vector");
  require_rank(v, 1, "mul_row_vector");
  if (x.dim(1) != v.dim(0)) {
    throw ShapeError("mul_row_vector: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[r * c + j] * v[j];
  const bool track = tracking({&x, &v});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    active_tape()->record("mul_row_vector", {x, v}, y, [x, v, y, n, c]() mutable {
      const auto gy = y.grad();
      if (x.requires_grad()) {
        auto g = x.mutable_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) g[r * c + j] += gy[r * c + j] * v[j];
      }
      if (v.requires_grad()) {
        auto g = v.mutable_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) g[j] += gy[r * c + j] * x[r * c + j];
      }
    });
  }
  return y;
}

Tensor tile_rows(const Tensor& v, std::size_t n) {
  require_rank(v, 1, "tile_rows");
  if (n == 0) throw ShapeError("tile_rows: zero rows requested");
  const std::size_t c = v.dim(0);
  std::vector<double> out(n * c);
  for (std::size_t r = 0; r < n; ++r) std::copy(v.values().begin(), v.values().end(), out.begin() + r * c);
  const bool track = tracking({&v});
  Tensor y({n, c}, std::move(out), track);
  if (track) {
    active_tape()->record("tile_rows", {v}, y, [v, y, n, c]() mutable {
      const auto gy = y.grad();
      auto g = v.mutable_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += gy[r * c + j];
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const bool track = tracking({&x});
  Tensor y({}, {s}, track);
  if (track) {
    active_tape()->record("sum", {x}, y, [x, y]() mutable {
      const double gy = y.grad()[0];
      for (auto& g : x.mutable_grad()) g += gy;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<double> out(c, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[r * c + j];
  for (auto& v : out) v /= static_cast<double>(n);
  const bool track = tracking({&x});
  Tensor y({c}, std::move(out), track);
  if (track) {
    active_tape()->record("mean_rows", {x}, y, [x, y, n, c]() mutable {
      const auto gy = y.grad();
      auto g = x.mutable_grad();
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) g[r * c + j] += gy[j] * inv;
    });
  }
  return y;
}

Tensor reduce_max_over_points(const Tensor& x) {
  require_rank(x, 2, "reduce_max_over_points");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (n == 0) throw ShapeError("reduce_max_over_points: empty input");
  std::vector<double> out(x.values().begin(), x.values().begin() + static_cast<std::ptrdiff_t>(c));
  std::vector<std::size_t> arg(c, 0);
  for (std::size_t r = 1; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double v = x[r * c + j];
      if (v > out[j]) {
        out[j] = v;
        arg[j] = r;
      }
    }
  }
  const bool track = tracking({&x});
  Tensor y({c}, std::move(out), track);
  if (track) {
    active_tape()->record("reduce_max_over_points", {x}, y, [x, y, arg, c]() mutable {
      const auto gy = y.grad();
      auto g = x.mutable_grad();
      for (std::size_t j = 0; j < c; ++j) g[arg[j] * c + j] += gy[j];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const bool track = tracking({&x});
  Tensor y(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), track);
  if (track) {
    active_tape()->record("reshape", {x}, y, [x, y]() mutable {
      const auto gy = y.grad();
      auto g = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t len) {
  require_rank(x, 1, "slice");
  if (len == 0 || begin + len > x.numel()) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
                     ") out of " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  const bool track = tracking({&x});
  Tensor y({len}, std::vector<double>(xv.begin() + static_cast<std::ptrdiff_t>(begin),
                                      xv.begin() + static_cast<std::ptrdiff_t>(begin + len)),
           track);
  if (track) {
    active_tape()->record("slice", {x}, y, [x, y, begin]() mutable {
      const auto gy = y.grad();
      auto g = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) g[begin + i] += gy[i];
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  std::vector<double> out;
  bool track = false;
  for (const auto& p : parts) {
    require_rank(p, 1, "concat");
    out.insert(out.end(), p.values().begin(), p.values().end());
    track = track || tracking({&p});
  }
  const std::size_t n = out.size();
  Tensor y({n}, std::move(out), track);
  if (track) {
    active_tape()->record("concat", parts, y, [parts, y]() mutable {
      const auto gy = y.grad();
      std::size_t off = 0;
      for (auto p : parts) {
        if (p.requires_grad()) {
          auto g = p.mutable_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[off + i];
        }
        off += p.numel();
      }
    });
  }
  return y;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), c = ca + cb;
  std::vector<double> out(n * c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < ca; ++j) out[r * c + j] = a[r * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out[r * c + ca + j] = b[r * cb + j];
  }
  const bool track = tracking({&a, &b});
  Tensor y({n, c}, std::move(out), track);
  if (track) {
    active_tape()->record("concat_cols", {a, b}, y, [a, b, y, n, ca, cb, c]() mutable {
      const auto gy = y.grad();
      if (a.requires_grad()) {
        auto g = a.mutable_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < ca; ++j) g[r * ca + j] += gy[r * c + j];
      }
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < cb; ++j) g[r * cb + j] += gy[r * c + ca + j];
      }
    });
  }
  return y;
}

Tensor huber_loss(const Tensor& pred, const Tensor& target, double delta) {
  require_same_shape(pred, target, "huber_loss");
  if (!(delta > 0.0)) throw NumericError("huber_loss: delta must be positive");
  const std::size_t n = pred.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = pred[i] - target[i];
    const double ar = std::abs(r);
    total += ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
  }
  const bool track = tracking({&pred, &target});
  Tensor y({}, {total / static_cast<double>(n)}, track);
  if (track) {
    active_tape()->record("huber_loss", {pred, target}, y, [pred, target, y, delta, n]() mutable {
      const double gy = y.grad()[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = pred[i] - target[i];
        const double d = std::abs(r) <= delta ? r : (r > 0.0 ? delta : -delta);
        if (pred.requires_grad()) pred.mutable_grad()[i] += gy * d;
        if (target.requires_grad()) target.mutable_grad()[i] -= gy * d;
      }
    });
  }
  return y;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  require_rank(logits, 1, "softmax_cross_entropy");
  const std::size_t k = logits.numel();
  if (label >= k) {
    throw Error("softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
                std::to_string(k) + " classes");
  }
  const auto lv = logits.values();
  const double m = *std::max_element(lv.begin(), lv.end());
  double z = 0.0;
  for (double v : lv) z += std::exp(v - m);
  const double lse = m + std::log(z);
  const bool track = tracking({&logits});
  Tensor y({}, {lse - lv[label]}, track);
  if (track) {
    active_tape()->record("softmax_cross_entropy", {logits}, y, [logits, y, label, lse]() mutable {
      const double gy = y.grad()[0];
      auto g = logits.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double p = std::exp(logits[i] - lse);
        g[i] += gy * (p - (i == label ? 1.0 : 0.0));
      }
    });
  }
  return y;
}

Tensor softmax_cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy_rows");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy_rows: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  }
  std::vector<double> lse(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw Error("softmax_cross_entropy_rows: label " + std::to_string(labels[r]) +
                  " out of range at row " + std::to_string(r));
    }
    double m = logits[r * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[r * k + j] - m);
    lse[r] = m + std::log(z);
    total += lse[r] - logits[r * k + static_cast<std::size_t>(labels[r])];
  }
  const bool track = tracking({&logits});
  Tensor y({}, {total / static_cast<double>(n)}, track);
  if (track) {
    active_tape()->record("softmax_cross_entropy_rows", {logits}, y,
                          [logits, y, labels, lse, n, k]() mutable {
                            const double gy = y.grad()[0] / static_cast<double>(n);
                            auto g = logits.mutable_grad();
                            for (std::size_t r = 0; r < n; ++r) {
                              for (std::size_t j = 0; j < k; ++j) {
                                const double p = std::exp(logits[r * k + j] - lse[r]);
                                const double hot =
                                    static_cast<int>(j) == labels[r] ? 1.0 : 0.0;
                                g[r * k + j] += gy * (p - hot);
                              }
                            }
                          });
  }
  return y;
}

Tensor cosine_distance(const Tensor& u, const Tensor& w) {
  require_rank(u, 1, "cosine_distance");
  require_same_shape(u, w, "cosine_distance");
  constexpr double kNormGuard = 1e-12;
  double dot = 0.0, uu = 0.0, ww = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    dot += u[i] * w[i];
    uu += u[i] * u[i];
    ww += w[i] * w[i];
  }
  const double nu = std::sqrt(uu), nw = std::sqrt(ww);
  if (nu < kNormGuard || nw < kNormGuard) {
    throw NumericError("cosine_distance: degenerate input, vector norm below 1e-12");
  }
  // sqrt(uu * ww) instead of nu * nw keeps identical and negated inputs at
  // exactly +1 and -1.
  const double cosine = std::clamp(dot / std::sqrt(uu * ww), -1.0, 1.0);
  const bool track = tracking({&u, &w});
  Tensor y({}, {1.0 - cosine}, track);
  if (track) {
    active_tape()->record("cosine_distance", {u, w}, y, [u, w, y, dot, nu, nw]() mutable {
      const double gy = y.grad()[0];
      const double inv = 1.0 / (nu * nw);
      if (u.requires_grad()) {
        auto g = u.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] -= gy * (w[i] * inv - dot * u[i] * inv / (nu * nu));
      }
      if (w.requires_grad()) {
        auto g = w.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] -= gy * (u[i] * inv - dot * w[i] * inv / (nw * nw));
      }
    });
  }
  return y;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 1, "dense");
  const std::size_t out = w.rank() == 2 ? w.dim(1) : 0;
  return reshape(dense_rows(reshape(x, {1, x.numel()}), w, b), {out});
}

Tensor dense_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "dense_rows");
  require_rank(w, 2, "dense_rows");
  require_rank(b, 1, "dense_rows");
  if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0)) {
    throw ShapeError("dense_rows: incompatible " + shape_str(x.shape()) + " * " +
                     shape_str(w.shape()) + " + " + shape_str(b.shape()));
  }
  const std::size_t n = x.dim(0), c = w.dim(1);
  std::vector<double> out(n * c);
  MatMap y_map(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  y_map.noalias() = as_mat(x) * as_mat(w);
  y_map.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(),
                                                          static_cast<Eigen::Index>(c));
  const bool track = tracking({&x, &w, &b});
  Tensor y({n, c}, std::move(out), track);
  if (track) {
    active_tape()->record("dense_rows", {x, w, b}, y, [x, w, b, y]() mutable {
      const auto gy = grad_of(y);
      if (x.requires_grad()) grad_mat(x).noalias() += gy * as_mat(w).transpose();
      if (w.requires_grad()) grad_mat(w).noalias() += as_mat(x).transpose() * gy;
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        Eigen::Map<Eigen::RowVectorXd>(g.data(), static_cast<Eigen::Index>(g.size())) +=
            gy.colwise().sum();
      }
    });
  }
  return y;
}

}  // namespace tfn
