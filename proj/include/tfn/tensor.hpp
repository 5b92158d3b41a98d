// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense double-precision tensors with a reverse-mode gradient tape.
 *
 * A Tensor is a cheap handle onto a shared node holding the shape, the
 * row-major values and (lazily) the gradient. Operations record themselves
 * on the tape that is active on the calling thread, but only when at least
 * one input requires a gradient. Without an active tape every operation is
 * a plain forward evaluation.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tfn {

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or degenerate numeric input.
class NumericError : public Error {
 public:
  using Error::Error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  std::uint64_t id() const { return node_->id; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::span<const double> values() const { return node_->value; }
  /// Write access for parameter updates and data loading; never call on a
  /// tensor that already participates in a recorded graph.
  std::span<double> mutable_values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const { return node_->grad; }
  /// Gradient buffer, allocated as zeros on first access.
  std::span<double> mutable_grad() const;
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const;

  /// Copy of the values as a tensor that is detached from any graph.
  Tensor detach() const;
  /// Deep copy including the requires_grad flag but not the gradient.
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
  friend class Tape;
};

/// Ordered record of the operations executed while the tape is active.
///
/// Records are appended in execution order, so every input id precedes the
/// output id of the record that consumes it. backward() replays the records
/// in reverse, visiting each exactly once.
class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string_view op, std::initializer_list<Tensor> inputs,
              const Tensor& output, std::function<void()> backward);
  void record(std::string_view op, const std::vector<Tensor>& inputs,
              const Tensor& output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and replays. Gradients of recorded
  /// intermediate tensors are reset first, so replaying the same tape twice
  /// yields identical intermediate gradients; leaf gradients accumulate.
  void backward(const Tensor& loss);
  void backward(const Tensor& output, std::span<const double> seed);

  std::size_t size() const { return entries_.size(); }
  std::vector<Record> records() const;
  void clear();

 private:
  struct Entry {
    Record rec;
    std::vector<Tensor> keep_alive;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
};

/// Makes `tape` the active tape of the calling thread for the scope's
/// lifetime; the previous tape (if any) is restored on destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Suspends recording for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace tfn
