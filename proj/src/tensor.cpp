// SPDX-License-Identifier: Apache-2.0
#include "tfn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace tfn {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
thread_local Tape* t_active = nullptr;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values,
                                        bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}
}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor() : node_(make_node({}, {0.0}, false)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(make_node(std::move(shape), std::move(values), requires_grad)) {
  for (auto d : node_->shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(node_->shape));
  }
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({}, {v}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

std::span<double> Tensor::mutable_grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw ShapeError("at(r, c) on tensor of shape " + shape_str(shape()));
  return node_->value[r * node_->shape[1] + c];
}

Tensor Tensor::detach() const { return Tensor(make_node(shape(), node_->value, false)); }

Tensor Tensor::clone() const {
  return Tensor(make_node(shape(), node_->value, node_->requires_grad));
}

void Tape::record(std::string_view op, std::initializer_list<Tensor> inputs,
                  const Tensor& output, std::function<void()> backward) {
  record(op, std::vector<Tensor>(inputs), output, std::move(backward));
}

void Tape::record(std::string_view op, const std::vector<Tensor>& inputs,
                  const Tensor& output, std::function<void()> backward) {
  Entry e;
  e.rec.op = std::string(op);
  e.rec.output = output.id();
  e.rec.inputs.reserve(inputs.size());
  for (const auto& t : inputs) e.rec.inputs.push_back(t.id());
  e.keep_alive = inputs;
  e.output = output;
  e.backward = std::move(backward);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
  const double one = 1.0;
  if (loss.numel() != 1) {
    throw ShapeError("backward() without seed needs a scalar, got " + shape_str(loss.shape()));
  }
  backward(loss, std::span<const double>(&one, 1));
}

void Tape::backward(const Tensor& output, std::span<const double> seed) {
  if (seed.size() != output.numel()) {
    throw ShapeError("backward seed has " + std::to_string(seed.size()) +
                     " entries for output " + shape_str(output.shape()));
  }
  for (auto& e : entries_) e.output.zero_grad();
  Tensor out = output;
  auto g = out.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

std::vector<Tape::Record> Tape::records() const {
  std::vector<Record> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.rec);
  return out;
}

void Tape::clear() { entries_.clear(); }

TapeScope::TapeScope(Tape& tape) : previous_(t_active) { t_active = &tape; }
TapeScope::~TapeScope() { t_active = previous_; }

Tape* active_tape() { return t_active; }

NoGradScope::NoGradScope() : previous_(t_active) { t_active = nullptr; }
NoGradScope::~NoGradScope() { t_active = previous_; }

}  // namespace tfn
