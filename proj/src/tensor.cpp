#include "fedsim/tensor.hpp"

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  auto impl = detail::alloc(s);
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::full(const Shape& s, double value, bool requires_grad) {
  auto impl = detail::alloc(s);
  impl->values.assign(static_cast<size_t>(s.numel()), value);
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::from_values(const Shape& s, std::vector<double> values,
                           bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != s.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + s.str());
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = s;
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_values(Shape{1}, {value}); }

Tensor Tensor::randn(const Shape& s, Rng& rng, double stddev,
                     bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(s.numel()));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return from_values(s, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a one-element tensor, got shape " +
                     shape().str());
  }
  return impl_->values[0];
}

const std::vector<double>& Tensor::values() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->values;
}

std::vector<double>& Tensor::mutable_values() {
  if (!impl_) throw Error("use of undefined tensor");
  if (impl_->tape) {
    throw Error("cannot mutate a tensor that is a live tape output");
  }
  return impl_->values;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  if (!impl_) throw Error("use of undefined tensor");
  if (impl_->tape) {
    throw Error("cannot toggle requires_grad on a live tape output");
  }
  impl_->requires_grad = rg;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!impl_) throw Error("use of undefined tensor");
  if (impl_->grad.empty()) {
    throw Error("gradient not populated; call backward() first");
  }
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tape::~Tape() {
  for (auto& node : nodes_) {
    if (node.output) node.output->tape = nullptr;
  }
}

void Tape::record(Node node) {
  auto out = node.output;
  auto fn = std::move(node.backward);
  // Skip dead branches: if no gradient ever reached the output, there is
  // nothing to propagate.
  node.backward = [out, fn = std::move(fn)]() {
    if (!out->grad.empty()) fn();
  };
  nodes_.push_back(std::move(node));
}

Tape* Tape::current() { return g_current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) {
  g_current_tape = &tape;
}

TapeScope::~TapeScope() { g_current_tape = previous_; }

void backward(const Tensor& root) {
  if (!root.defined()) throw Error("backward: undefined root tensor");
  if (root.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got shape " +
                     root.shape().str());
  }
  Tape* tape = root.impl()->tape;
  if (!tape) {
    throw Error("backward: root was not recorded on a live tape");
  }
  if (tape->consumed()) {
    throw Error("backward: tape already consumed; build a new tape per step");
  }
  auto r = root.impl();
  detail::ensure_grad(*r);
  r->grad[0] = 1.0;
  for (auto it = tape->nodes_.rbegin(); it != tape->nodes_.rend(); ++it) {
    it->backward();
  }
  tape->consumed_ = true;
}

namespace detail {

std::shared_ptr<TensorImpl> alloc(const Shape& s) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = s;
  impl->values.assign(static_cast<size_t>(s.numel()), 0.0);
  return impl;
}

Tensor attach(std::shared_ptr<TensorImpl> out,
              std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::function<void()> backward_fn) {
  bool rg = false;
  for (const auto& in : inputs) rg = rg || (in && in->requires_grad);
  out->requires_grad = rg;
  Tape* tape = Tape::current();
  if (rg && tape) {
    out->tape = tape;
    tape->record({std::move(inputs), out, std::move(backward_fn)});
  }
  return Tensor::wrap(std::move(out));
}

}  // namespace detail

}  // namespace fedsim
