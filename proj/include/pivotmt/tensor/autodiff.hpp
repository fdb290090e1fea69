#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pivotmt/rng.hpp"
#include "pivotmt/tensor/tensor.hpp"

namespace pivotmt::tensor {

// One value in the dynamic computation graph. Interior nodes hold a backward
// closure that reads the parents' values and pushes gradient into them.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool released = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const noexcept { return !backward && parents.empty(); }

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>::zeros(value.shape());
    return grad;
  }
};

// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }
  static Var constant(Tensor<T> value) { return Var(std::move(value), false); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Zero-filled when nothing has been accumulated yet.
  Tensor<T> grad() const {
    return has_grad() ? node_->grad : Tensor<T>::zeros(node_->value.shape());
  }
  void zero_grad() { node_->grad = Tensor<T>(); }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// While a guard is alive on this thread, ops record no graph edges.
bool grad_enabled() noexcept;
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Accumulates d(loss)/d(x) into every reachable requires_grad leaf, then
// releases the interior of the graph. Running it twice over the same graph
// is a StateError.
template <typename T>
void backward(const Var<T>& loss);

// Primitive operations. None of them broadcast: operands must have exactly
// the documented shapes, and a ShapeError names the op and both shapes
// otherwise. Every op fails with NumericError on non-finite output.

// [m,k] x [k,n] -> [m,n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

// Batched: [B,m,k] x [B,k,n] -> [B,m,n]; with transpose_b, b is [B,n,k].
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

// x[..., D] + b[D] applied to every row.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias);

template <typename T>
Var<T> relu(const Var<T>& x);

// Softmax over the last axis.
template <typename T>
Var<T> softmax(const Var<T>& x);

// Sets x[i] = fill wherever mask[i] != 0. The mask has x's element count.
template <typename T>
Var<T> masked_fill(const Var<T>& x, std::span<const std::uint8_t> mask, T fill);

// Normalizes over the last axis, then applies gamma[D] and beta[D].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// Rows of table[V,D] selected by ids -> [n,D].
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids);

// Concatenation along axis 0; trailing dimensions must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// Axis permutation for rank <= 4 (out axis i = in axis perm[i]).
template <typename T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> perm);

// Mean label-smoothed cross-entropy over rows of logits[N,V] whose target is
// not ignore_index. Smoothing spreads `smoothing` mass uniformly over V.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets,
                     std::int32_t ignore_index = -1, T smoothing = T(0));

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mean(const Var<T>& x);

// Inverted dropout; identity when p == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng);

}  // namespace pivotmt::tensor
