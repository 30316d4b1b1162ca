#include "spikerain/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace spikerain {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorImpl::accumulate_grad(std::span<const double> g) {
  auto buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(storage->size(), 0.0);
  return grad;
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->storage = std::make_shared<std::vector<double>>(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->storage = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->storage->size(); }

std::span<const double> Tensor::data() const { return *impl_->storage; }
std::span<double> Tensor::mutable_data() { return *impl_->storage; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() needs a single-element tensor, shape is " + shape_str(shape()));
  }
  return (*impl_->storage)[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_->is_leaf) throw ContractError("requires_grad can only be toggled on leaf tensors");
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

bool Tensor::is_leaf() const { return impl_->is_leaf; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor(shape(), 0.0);
  return Tensor(shape(), impl_->grad);
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->storage = impl_->storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return Tensor(shape(), *impl_->storage); }

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const std::shared_ptr<TensorImpl>& node) { nodes_.push_back(node); }

void Tape::clear() { nodes_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (nodes_.empty()) return;
  const auto& target = loss.impl();
  if (target->is_leaf) {
    if (target->requires_grad) target->grad_buffer()[0] += 1.0;
    return;
  }
  auto it = std::find(nodes_.rbegin(), nodes_.rend(), target);
  if (it == nodes_.rend()) return;
  const auto last = static_cast<std::size_t>(std::distance(it, nodes_.rend())) - 1;

  for (std::size_t i = 0; i <= last; ++i) nodes_[i]->grad.clear();
  target->grad_buffer()[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node->grad.empty() || !node->backward) continue;
    node->backward(node->grad);
  }
}

void backward(const Tensor& loss) { Tape::active().backward(loss); }

namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active().recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (needs_grad(inputs)) {
    auto& impl = *out.impl();
    impl.requires_grad = true;
    impl.is_leaf = false;
    impl.backward = std::move(backward);
    Tape::active().record(out.impl());
  }
  return out;
}

}  // namespace detail

}  // namespace spikerain
