#include "bevforge/tensor.hpp"

#include <string>
#include <unordered_map>

namespace bevforge {
namespace detail {
namespace {

// Size-bucketed LIFO freelists. Capped per bucket so pathological size churn
// cannot hoard memory.
struct BufferPool {
  std::unordered_map<std::size_t, std::vector<std::vector<double>>> buckets;
  static constexpr std::size_t kMaxPerBucket = 64;
};

BufferPool& pool() {
  thread_local BufferPool p;
  return p;
}

}  // namespace

std::vector<double> pool_take(std::size_t n) {
  if (n == 0) return {};
  auto& bucket = pool().buckets[n];
  if (!bucket.empty()) {
    std::vector<double> v = std::move(bucket.back());
    bucket.pop_back();
    return v;
  }
  return std::vector<double>(n);
}

void pool_give(std::vector<double>&& v) {
  if (v.empty()) return;
  auto& bucket = pool().buckets[v.size()];
  if (bucket.size() < BufferPool::kMaxPerBucket) bucket.push_back(std::move(v));
}

}  // namespace detail

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

int numel_of(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeMismatch("dimensions must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

Tensor make_tensor(std::vector<int> shape, bool requires_grad, bool zero_init) {
  auto node = std::make_shared<TensorNode>();
  node->data = detail::pool_take(static_cast<std::size_t>(numel_of(shape)));
  if (zero_init) std::fill(node->data.begin(), node->data.end(), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad && Tape::active().recording();
  return wrap_node(std::move(node));
}

Tensor wrap_node(NodePtr node) { return Tensor(std::move(node)); }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return make_tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  for (double& v : t.mutable_data()) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  if (numel_of(shape) != static_cast<int>(data.size()))
    throw ShapeMismatch("from_data: shape does not match data length");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return wrap_node(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

void backward(const Tensor& loss) {
  Tape& tape = Tape::active();
  if (!loss.defined()) throw NotScalar("backward: undefined tensor");
  if (loss.rank() != 0) throw NotScalar("backward: loss must be rank-0");
  if (tape.consumed_)
    throw DoubleBackward("backward called twice on the same tape; reset before re-forward");
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) (*it)();
  tape.consumed_ = true;
}

}  // namespace bevforge
