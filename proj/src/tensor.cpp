#include "dforge/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace dforge::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;

int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int e : shape) {
    // zero extents are allowed so empty batches (e.g. zero patches) flow through
    if (e < 0) fail("tensor: negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}
}  // namespace

void fail(const std::string& message) { throw std::runtime_error(message); }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  t.st_->shape = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.st_->data) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values) {
  if (static_cast<size_t>(shape_numel(shape)) != values.size())
    fail("tensor: data length " + std::to_string(values.size()) +
         " does not match shape " + shape_str(shape));
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->shape = std::move(shape);
  t.st_->data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::identity(int n) {
  Tensor t = zeros({n, n});
  for (int i = 0; i < n; ++i) t.st_->data[static_cast<size_t>(i) * n + i] = 1.0;
  return t;
}

const std::vector<int>& Tensor::shape() const {
  if (!st_) fail("tensor: undefined");
  return st_->shape;
}

int Tensor::numel() const { return static_cast<int>(values().size()); }

int Tensor::dim(int i) const { return shape().at(static_cast<size_t>(i)); }

std::vector<double>& Tensor::values() {
  if (!st_) fail("tensor: undefined");
  return st_->data;
}

const std::vector<double>& Tensor::values() const {
  if (!st_) fail("tensor: undefined");
  return st_->data;
}

double Tensor::item() const {
  if (numel() != 1) fail("tensor: item() on non-scalar " + shape_str(shape()));
  return values()[0];
}

bool Tensor::requires_grad() const { return st_ && st_->requires_grad; }

bool Tensor::trainable() const { return st_ && st_->trainable; }

Tensor& Tensor::set_trainable(bool on) {
  if (!st_) fail("tensor: undefined");
  st_->trainable = on;
  st_->requires_grad = on;
  return *this;
}

std::vector<double>& Tensor::grad() {
  if (!st_) fail("tensor: undefined");
  if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
  return st_->grad;
}

const std::vector<double>& Tensor::grad() const {
  return const_cast<Tensor*>(this)->grad();
}

bool Tensor::has_grad() const { return st_ && !st_->grad.empty(); }

void Tensor::zero_grad() {
  if (st_ && !st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
}

Tensor Tensor::detached() const {
  if (!st_) return Tensor();
  return Tensor::from_data(st_->shape, st_->data);
}

Tensor make_interior(std::vector<int> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.st_->requires_grad = true;  // interior node: carries gradient, not a leaf
  t.grad();                     // pre-allocate so backward rules can read it
  return t;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_rule) {
  nodes_.push_back(std::move(backward_rule));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) fail("tape: backward() called twice on a single-use graph");
  consumed_ = true;
  if (loss.numel() != 1)
    fail("tape: backward() requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    fail("tape: loss is not attached to the recorded graph");
  const_cast<Tensor&>(loss).grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace dforge::ad
