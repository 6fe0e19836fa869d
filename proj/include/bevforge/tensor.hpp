#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <vector>

#include "bevforge/errors.hpp"

namespace bevforge {

class Tensor;

namespace detail {
// Thread-local buffer recycling: define-by-run training reallocates identical
// buffer sizes every step, so dead nodes hand their storage back instead of
// round-tripping through the allocator. Contents are unspecified on take.
std::vector<double> pool_take(std::size_t n);
void pool_give(std::vector<double>&& v);
}  // namespace detail

// Storage behind a Tensor handle. data is flat row-major, 64-bit reals.
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches the node
  bool requires_grad = false;

  ~TensorNode() {
    detail::pool_give(std::move(data));
    detail::pool_give(std::move(grad));
  }

  void ensure_grad() {
    if (grad.empty()) {
      grad = detail::pool_take(data.size());
      std::fill(grad.begin(), grad.end(), 0.0);
    }
  }
};

using NodePtr = std::shared_ptr<TensorNode>;
using BackwardFn = std::function<void()>;

// Dynamic tape, rebuilt each forward pass. Creation order is topological
// order; backward walks entries strictly in reverse. One tape per thread.
class Tape {
 public:
  static Tape& active();

  void reset() {
    entries_.clear();
    consumed_ = false;
  }
  void record(BackwardFn fn) { entries_.push_back(std::move(fn)); }
  bool recording() const { return no_grad_depth_ == 0; }
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend void backward(const Tensor& loss);
  friend struct NoGradScope;

  std::vector<BackwardFn> entries_;
  bool consumed_ = false;
  int no_grad_depth_ = 0;
};

// Disables tape recording for its lifetime (evaluation / rendering paths).
struct NoGradScope {
  NoGradScope() { ++Tape::active().no_grad_depth_; }
  ~NoGradScope() { --Tape::active().no_grad_depth_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

// Value-semantics handle to a TensorNode. Tensors are immutable after they
// participate in a forward pass; mutable_data is for leaf initialization and
// optimizer updates only.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);  // rank-0

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int numel() const { return static_cast<int>(node_->data.size()); }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (node_->grad.empty()) throw MissingGradient("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.assign(node_->data.size(), 0.0);
  }
  void clear_grad() { node_->grad.clear(); }

  // Scalar convenience accessor.
  double value() const {
    if (numel() != 1) throw NotScalar("value() requires a single-element tensor");
    return node_->data[0];
  }

  NodePtr node() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  friend Tensor make_tensor(std::vector<int> shape, bool requires_grad);
  friend Tensor wrap_node(NodePtr node);

  NodePtr node_;
};

// Internal constructors used by ops. zero_init=false hands back pooled
// storage with unspecified contents; only ops that overwrite every element
// may use it.
Tensor make_tensor(std::vector<int> shape, bool requires_grad, bool zero_init = true);
Tensor wrap_node(NodePtr node);

int numel_of(const std::vector<int>& shape);

// Seeds d(loss)/d(loss) = 1 and runs every tape entry in reverse creation
// order. Throws NotScalar unless loss is rank-0, DoubleBackward if the tape
// was already consumed since the last reset.
void backward(const Tensor& loss);

}  // namespace bevforge
