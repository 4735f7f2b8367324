#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle to a node. Operations on tensors that require
// gradients record their inputs and a backward rule; `backward(loss)` walks
// the recorded nodes in reverse creation order. Only 1-D and 2-D shapes are
// used by the models here, but shapes are stored generally.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coscl {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim() const { return node_->shape.size(); }
  // Rows/cols of a 2-D tensor; a 1-D tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->data; }
  // Direct write access for optimizers and checkpoint loading. Not recorded.
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.has_value(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { node_->grad.reset(); }

  // New leaf holding a copy of the data, disconnected from any graph.
  Tensor detach() const;
  // Deep copy preserving requires_grad (leaf, no graph).
  Tensor clone() const;

  std::uint64_t seq() const { return node_->seq; }
  const char* op() const { return node_->op; }

  // Internal: wrap a node.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Recorded operations reachable from a loss, in creation order.
class Graph {
 public:
  static Graph collect(const Tensor& loss);
  std::span<detail::Node* const> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<detail::Node*> nodes_;
};

// Floor applied to log arguments so saturated softmax never yields -inf.
inline constexpr double kLogClamp = 1e-12;

Tensor matmul(const Tensor& a, const Tensor& b);

// Binary ops accept equal shapes, a single-element operand on either side,
// or a row-vector bias (length == cols) on the right of a 2-D tensor.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

enum class Elementwise { kAdd, kSub, kMul, kRelu, kSigmoid, kLog, kExp };
// Dispatching form; unary ops take one input, binary ops two.
Tensor elementwise(Elementwise op, std::span<const Tensor> inputs);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Row-wise softmax of a 2-D tensor.
Tensor softmax(const Tensor& logits);
// Mean over rows of -log softmax(logits)[label], max-subtracted.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
Tensor sigmoid_bce(const Tensor& logits, std::span<const double> targets);
// sum_i weights[i] * (x[i] - anchor[i])^2 as a scalar.
Tensor weighted_sq_distance(const Tensor& x, std::span<const double> anchor,
                            std::span<const double> weights);
// Elementwise product with a constant mask (inverted dropout, masking).
Tensor mul_const(const Tensor& x, std::span<const double> mask);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Populates .grad of every requires_grad tensor reachable from `loss`.
// Leaf gradients accumulate; call zero_grad() between steps.
void backward(const Tensor& loss);

}  // namespace coscl
