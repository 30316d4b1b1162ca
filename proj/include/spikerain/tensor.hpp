#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikerain {

/// Raised when operand shapes are incompatible. The message names the axis.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a precondition on arguments (not shapes) is violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// File or stream failure; the message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Backward closure: receives the gradient flowing into the node's output and
/// accumulates into whatever inputs it captured.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> storage;
  std::vector<double> grad;  // empty == no gradient yet
  bool requires_grad = false;
  bool is_leaf = true;
  BackwardFn backward;

  void accumulate_grad(std::span<const double> g);
  std::span<double> grad_buffer();  // allocates zeros on first use
};

/// Dense row-major tensor of doubles. Copies share storage; use clone() for a
/// deep copy. Dimension order is N,C,H,W for images and T,N,C,H,W for spike
/// sequences.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator[](std::size_t i) const { return data()[i]; }
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// Same values, no tape history, never accumulates gradient.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations. One tape per thread.
class Tape {
 public:
  static Tape& active();

  bool recording() const { return enabled_; }
  void set_recording(bool on) { enabled_ = on; }

  void record(const std::shared_ptr<TensorImpl>& node);
  std::size_t size() const { return nodes_.size(); }
  void clear();

  /// Reverse-mode sweep from a scalar loss. Intermediate gradients are reset
  /// on every call; leaf gradients accumulate.
  void backward(const Tensor& loss);

 private:
  std::vector<std::shared_ptr<TensorImpl>> nodes_;
  bool enabled_ = true;
};

void backward(const Tensor& loss);

/// Disables tape recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(Tape::active().recording()) { Tape::active().set_recording(false); }
  ~NoGradGuard() { Tape::active().set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

/// True when an op over these inputs should be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Wraps a freshly computed value as a tape node when any input needs grad.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward);

}  // namespace detail

}  // namespace spikerain
