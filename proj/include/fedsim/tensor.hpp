#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "fedsim/shape.hpp"

namespace fedsim {

class Tape;
class Rng;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches it
  bool requires_grad = false;
  Tape* tape = nullptr;  // non-null while this is an op output on a live tape
};

inline void ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
}

}  // namespace detail

// Dense f64 tensor with shared storage. Values are immutable once an op has
// produced them; leaf values may be updated in place between tapes, which is
// how optimizers apply parameter steps.
class Tensor {
 public:
  Tensor() = default;  // undefined; used for optional arguments like bias

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor full(const Shape& s, double value, bool requires_grad = false);
  static Tensor from_values(const Shape& s, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(const Shape& s, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const { return shape().numel(); }
  double item() const;  // numel() == 1 only
  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();  // leaves only
  bool requires_grad() const;
  void set_requires_grad(bool rg);  // leaves only
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Ops record themselves in topological order while a
// TapeScope is active on the current thread; backward() walks the list once
// in reverse. A tape can be walked once, then it is consumed.
class Tape {
 public:
  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void()> backward;
  };

  void record(Node node);
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* current();

 private:
  friend class TapeScope;
  friend void backward(const Tensor& root);
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// RAII activation of a tape on the current thread. Tapes on different
// threads are fully independent.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Populates gradients of every requires_grad leaf reachable from root.
// root must be a scalar produced on a live, unconsumed tape.
void backward(const Tensor& root);

namespace detail {
std::shared_ptr<TensorImpl> alloc(const Shape& s);
// Wires requires_grad propagation and tape recording for an op result.
Tensor attach(std::shared_ptr<TensorImpl> out,
              std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::function<void()> backward_fn);
}  // namespace detail

}  // namespace fedsim
