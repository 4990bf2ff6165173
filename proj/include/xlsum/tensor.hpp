#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every op builds a new node
// that remembers its inputs and a backward rule while gradient recording is
// enabled (see NoGradGuard). `backward(loss)` orders the reachable nodes
// topologically into a Tape and replays the rules in reverse.
//
// Conventions:
//  * A scalar has shape {1}. Every dimension is >= 1.
//  * Leaf gradients accumulate across backward calls until zero_grad().
//  * Ops never mutate their inputs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xlsum::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Direct write access for initialisation and optimizers only.
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values with no history attached.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Gradient recording switch (thread-local). Inside a NoGradGuard no graph
// is built, which makes inference cheap.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Topologically ordered nodes reachable from a root; inputs precede users.
class Tape {
 public:
  explicit Tape(const Tensor& root);
  const std::vector<Node*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<Node*> order_;
};

// Seeds d(loss)/d(loss) = 1 and propagates. Loss must be a scalar.
void backward(const Tensor& loss);

// ---- linear algebra ------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor transpose(const Tensor& x);                   // 2-D only
// x[T,in] * weight[in,out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- elementwise ---------------------------------------------------------
// `b` may match `a` exactly, or be a row vector broadcast over a's last axis.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
// Inverted dropout; the mask is a pure function of `seed`. Identity when
// `train` is false or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool train, std::uint64_t seed);

// ---- reductions ----------------------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- normalisation / probability ------------------------------------------
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Rows divided by their L2 norm; all-zero rows stay zero.
Tensor l2_normalize_rows(const Tensor& x);
// Sets entries above the diagonal of a square-or-wide 2-D score matrix to a
// large negative value so that softmax assigns them zero mass.
Tensor causal_mask(const Tensor& scores);

// ---- losses --------------------------------------------------------------
// Mean negative log-likelihood over positions whose target != ignore_index.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_index = -1);
// Mean binary cross-entropy on logits against targets in [0,1].
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);

// ---- indexing / shaping --------------------------------------------------
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
// Row i is the mean of table rows listed in bags[i]; an empty bag yields 0.
Tensor embedding_bag_mean(const Tensor& table,
                          const std::vector<std::vector<int>>& bags);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// out[i] = x[rows[i], cols[i]] for a 2-D x.
Tensor pick(const Tensor& x, std::span<const std::size_t> rows,
            std::span<const std::size_t> cols);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
Tensor reshape(const Tensor& x, const Shape& shape);

}  // namespace xlsum::ad
