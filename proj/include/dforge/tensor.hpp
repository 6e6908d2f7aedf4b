#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dforge::ad {

/// Dense row-major tensor of 64-bit reals, optionally attached to the active
/// recording tape. Copies are shallow handles onto shared storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_data(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor identity(int n);

  bool defined() const { return static_cast<bool>(st_); }
  const std::vector<int>& shape() const;
  int numel() const;
  int dim(int i) const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  double* data() { return values().data(); }
  const double* data() const { return values().data(); }

  // Scalar access; requires numel() == 1.
  double item() const;

  bool requires_grad() const;
  bool trainable() const;
  // Marks this tensor as a trainable graph leaf.
  Tensor& set_trainable(bool on = true);

  // Gradient buffer, allocated (zeroed) on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool has_grad() const;
  void zero_grad();

  // Deep copy of the values with no graph attachment.
  Tensor detached() const;

  // True if both handles point at the same storage.
  bool same_storage(const Tensor& other) const { return st_ == other.st_; }

 private:
  struct Storage {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first use
    bool requires_grad = false;
    bool trainable = false;
  };
  std::shared_ptr<Storage> st_;

  friend Tensor make_interior(std::vector<int> shape);
};

// Internal factory for op outputs that participate in the recorded graph.
Tensor make_interior(std::vector<int> shape);

/// Single-use reverse-mode tape. Constructing a Tape makes it the active
/// recording context for the current thread; ops consult Tape::active() and
/// append their backward rules in execution order. backward() replays the
/// rules in exact reverse order and may be called at most once.
///
/// Parameters captured by recorded rules must not be mutated between
/// recording and backward(); optimizer steps run only after backward().
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_rule);
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs all rules in reverse recording order.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
  bool consumed_ = false;
};

[[noreturn]] void fail(const std::string& message);

std::string shape_str(const std::vector<int>& shape);

}  // namespace dforge::ad
