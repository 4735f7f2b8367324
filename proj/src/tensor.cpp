#include "coscl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "coscl/errors.hpp"

namespace coscl {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};

std::size_t product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

// Creates the output node of an op. Inputs and the backward rule are only
// recorded when some input requires a gradient.
Tensor record(const char* op, Shape shape, std::vector<double> data,
              std::initializer_list<const Tensor*> inputs,
              std::function<void(detail::Node&)> backward_fn) {
  auto node = make_node(std::move(shape), std::move(data));
  node->op = op;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
  }
}

enum class Broadcast { kSame, kScalarRight, kScalarLeft, kRowRight };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kScalarRight;
  if (a.numel() == 1) return Broadcast::kScalarLeft;
  if (a.dim() == 2 && b.numel() == a.shape()[1] &&
      (b.dim() == 1 || (b.dim() == 2 && b.shape()[0] == 1))) {
    return Broadcast::kRowRight;
  }
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                       shape_str(b.shape()));
}

// Index of b's element paired with output element k.
inline std::size_t b_index(Broadcast kind, std::size_t k, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame:
      return k;
    case Broadcast::kScalarRight:
      return 0;
    case Broadcast::kRowRight:
      return k % cols;
    case Broadcast::kScalarLeft:
      return k;
  }
  return k;
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const Broadcast kind = classify(a, b, op);
  const Tensor& big = kind == Broadcast::kScalarLeft ? b : a;
  const std::size_t n = big.numel();
  const std::size_t cols = big.dim() == 2 ? big.shape()[1] : 1;
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double x = kind == Broadcast::kScalarLeft ? ad[0] : ad[k];
    out[k] = fwd(x, bd[b_index(kind, k, cols)]);
  }
  return record(op, big.shape(), std::move(out), {&a, &b},
                [kind, cols, da, db](detail::Node& self) {
                  auto& A = *self.inputs[0];
                  auto& B = *self.inputs[1];
                  const auto& g = *self.grad;
                  const std::size_t n = g.size();
                  if (A.requires_grad) {
                    auto& ga = A.grad_buffer();
                    for (std::size_t k = 0; k < n; ++k) {
                      const std::size_t ia = kind == Broadcast::kScalarLeft ? 0 : k;
                      const std::size_t ib = b_index(kind, k, cols);
                      ga[ia] += g[k] * da(A.data[ia], B.data[ib]);
                    }
                  }
                  if (B.requires_grad) {
                    auto& gb = B.grad_buffer();
                    for (std::size_t k = 0; k < n; ++k) {
                      const std::size_t ia = kind == Broadcast::kScalarLeft ? 0 : k;
                      const std::size_t ib = b_index(kind, k, cols);
                      gb[ib] += g[k] * db(A.data[ia], B.data[ib]);
                    }
                  }
                });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t k = 0; k < xd.size(); ++k) out[k] = fwd(xd[k]);
  return record(op, x.shape(), std::move(out), {&x}, [deriv](detail::Node& self) {
    auto& X = *self.inputs[0];
    auto& gx = X.grad_buffer();
    const auto& g = *self.grad;
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * deriv(X.data[k], self.data[k]);
  });
}

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (!grad) grad.emplace(data.size(), 0.0);
  return *grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (product(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  auto node = make_node(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = product(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::rows() const { return dim() == 2 ? shape()[0] : 1; }
std::size_t Tensor::cols() const { return dim() == 2 ? shape()[1] : numel(); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

std::span<const double> Tensor::grad() const {
  if (!node_->grad) return {};
  return *node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (node_->grad) std::fill(node_->grad->begin(), node_->grad->end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::clone() const { return from(shape(), node_->data, requires_grad()); }

Graph Graph::collect(const Tensor& loss) {
  Graph g;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    g.nodes_.push_back(n);
    for (auto& in : n->inputs) stack.push_back(in.get());
  }
  std::sort(g.nodes_.begin(), g.nodes_.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });
  return g;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return record("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const auto& g = *self.grad;
    if (A.requires_grad) {
      // dA = dC * B^T
      auto& ga = A.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B.data[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (B.requires_grad) {
      // dB = A^T * dC
      auto& gb = B.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A.data[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(std::max(v, kLogClamp)); },
      [](double v, double) { return v > kLogClamp ? 1.0 / v : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor elementwise(Elementwise op, std::span<const Tensor> inputs) {
  const bool is_binary = op == Elementwise::kAdd || op == Elementwise::kSub || op == Elementwise::kMul;
  if (inputs.size() != (is_binary ? 2u : 1u)) {
    throw ContractError("elementwise: wrong number of inputs");
  }
  switch (op) {
    case Elementwise::kAdd:
      return add(inputs[0], inputs[1]);
    case Elementwise::kSub:
      return sub(inputs[0], inputs[1]);
    case Elementwise::kMul:
      return mul(inputs[0], inputs[1]);
    case Elementwise::kRelu:
      return relu(inputs[0]);
    case Elementwise::kSigmoid:
      return sigmoid(inputs[0]);
    case Elementwise::kLog:
      return log(inputs[0]);
    case Elementwise::kExp:
      return exp(inputs[0]);
  }
  throw ContractError("elementwise: unknown op");
}

Tensor sum(const Tensor& x) {
  auto xd = x.data();
  const double s = std::accumulate(xd.begin(), xd.end(), 0.0);
  return record("sum", {1}, {s}, {&x}, [](detail::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const double g = (*self.grad)[0];
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor softmax(const Tensor& logits) {
  require_2d(logits, "softmax");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  auto xd = logits.data();
  std::vector<double> out(b * c);
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = xd.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += out[i * c + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return record("softmax", logits.shape(), std::move(out), {&logits}, [b, c](detail::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& g = *self.grad;
    const auto& y = self.data;
    for (std::size_t i = 0; i < b; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_2d(logits, "softmax_cross_entropy");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != b) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_str(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  auto xd = logits.data();
  std::vector<double> probs(b * c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = xd.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += probs[i * c + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += std::log(z) + mx - row[labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return record("softmax_cross_entropy", {1}, {total / static_cast<double>(b)}, {&logits},
                [b, c, probs = std::move(probs), lab = std::move(lab)](detail::Node& self) {
                  auto& gx = self.inputs[0]->grad_buffer();
                  const double g = (*self.grad)[0] / static_cast<double>(b);
                  for (std::size_t i = 0; i < b; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                      const double onehot = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                      gx[i * c + j] += g * (probs[i * c + j] - onehot);
                    }
                  }
                });
}

Tensor sigmoid_bce(const Tensor& logits, std::span<const double> targets) {
  if (targets.size() != logits.numel()) {
    throw DimensionError("sigmoid_bce: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  auto xd = logits.data();
  const std::size_t n = xd.size();
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    // log(1 + e^z) - y z, stable in both tails.
    const double z = xd[k];
    total += std::max(z, 0.0) - targets[k] * z + std::log1p(std::exp(-std::abs(z)));
  }
  std::vector<double> tgt(targets.begin(), targets.end());
  return record("sigmoid_bce", {1}, {total / static_cast<double>(n)}, {&logits},
                [n, tgt = std::move(tgt)](detail::Node& self) {
                  auto& X = *self.inputs[0];
                  auto& gx = X.grad_buffer();
                  const double g = (*self.grad)[0] / static_cast<double>(n);
                  for (std::size_t k = 0; k < n; ++k) gx[k] += g * (sigmoid_scalar(X.data[k]) - tgt[k]);
                });
}

Tensor weighted_sq_distance(const Tensor& x, std::span<const double> anchor,
                            std::span<const double> weights) {
  const std::size_t n = x.numel();
  if (anchor.size() != n || weights.size() != n) {
    throw ContractError("weighted_sq_distance: expected " + std::to_string(n) + " anchor/weight entries");
  }
  auto xd = x.data();
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = xd[k] - anchor[k];
    total += weights[k] * d * d;
  }
  std::vector<double> a(anchor.begin(), anchor.end());
  std::vector<double> w(weights.begin(), weights.end());
  return record("weighted_sq_distance", {1}, {total}, {&x},
                [a = std::move(a), w = std::move(w)](detail::Node& self) {
                  auto& X = *self.inputs[0];
                  auto& gx = X.grad_buffer();
                  const double g = (*self.grad)[0];
                  for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g * 2.0 * w[k] * (X.data[k] - a[k]);
                });
}

Tensor mul_const(const Tensor& x, std::span<const double> mask) {
  if (mask.size() != x.numel()) {
    throw DimensionError("mul_const: mask of " + std::to_string(mask.size()) + " for " +
                         shape_str(x.shape()));
  }
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t k = 0; k < xd.size(); ++k) out[k] = xd[k] * mask[k];
  std::vector<double> m(mask.begin(), mask.end());
  return record("mul_const", x.shape(), std::move(out), {&x}, [m = std::move(m)](detail::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& g = *self.grad;
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * m[k];
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) return;
  Graph graph = Graph::collect(loss);
  // Interior grads belong to this pass only; leaves accumulate.
  for (detail::Node* n : graph.nodes()) {
    if (n->backward_fn && n->grad) std::fill(n->grad->begin(), n->grad->end(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  auto nodes = graph.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && n->grad) n->backward_fn(*n);
  }
}

}  // namespace coscl
