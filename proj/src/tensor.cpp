#include "xlsum/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_set>

#include "xlsum/errors.hpp"

namespace xlsum::ad {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kMaskValue = -1e30;

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimension of size 0 in " + shape_str(shape));
  }
}

// Builds the output node; attaches history only when recording.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool record = g_grad_enabled;
  if (record) {
    record = false;
    for (const auto& p : parents) record = record || p->requires_grad;
  }
  if (record) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t axis = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from(shape, std::vector<double>(numel_of(shape), 0.0), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (numel_of(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(numel_of(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) on tensor of shape " + shape_str(shape()));
  if (row >= dim(0) || col >= dim(1)) throw IndexError("index out of range");
  return node_->data[row * dim(1) + col];
}

void Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tape::Tape(const Tensor& root) {
  if (!root.defined() || !root.requires_grad()) return;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a tensor that is not connected to any parameter");
  }
  Tape tape(loss);
  const auto& order = tape.nodes();
  for (Node* n : order) {
    if (!n->is_leaf) n->grad.clear();
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), "matmul", {a.node_ptr(), b.node_ptr()},
                     [m, k, n](Node& self) {
                       Node& na = *self.parents[0];
                       Node& nb = *self.parents[1];
                       const double* G = self.grad.data();
                       if (na.requires_grad) {
                         double* dA = na.grad_buffer().data();
                         const double* B = nb.data.data();
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t p = 0; p < k; ++p) {
                             const double* brow = B + p * n;
                             const double* grow = G + i * n;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                             dA[i * k + p] += acc;
                           }
                         }
                       }
                       if (nb.requires_grad) {
                         double* dB = nb.grad_buffer().data();
                         const double* A = na.data.data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* grow = G + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av = A[i * k + p];
                             double* drow = dB + p * n;
                             for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                           }
                         }
                       }
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * n + j] = acc;
    }
  }
  return make_result({m, n}, std::move(out), "matmul_nt", {a.node_ptr(), b.node_ptr()},
                     [m, k, n](Node& self) {
                       Node& na = *self.parents[0];
                       Node& nb = *self.parents[1];
                       const double* G = self.grad.data();
                       const double* A = na.data.data();
                       const double* B = nb.data.data();
                       double* dA = na.requires_grad ? na.grad_buffer().data() : nullptr;
                       double* dB = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < n; ++j) {
                           const double g = G[i * n + j];
                           if (g == 0.0) continue;
                           if (dA) {
                             for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[j * k + p];
                           }
                           if (dB) {
                             for (std::size_t p = 0; p < k; ++p) dB[j * k + p] += g * A[i * k + p];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  const auto X = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = X[i * c + j];
  return make_result({c, r}, std::move(out), "transpose", {x.node_ptr()}, [r, c](Node& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += self.grad[j * r + i];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(x, "linear");
  require_rank2(weight, "linear");
  const std::size_t t = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
  if (weight.dim(0) != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  if (bias.numel() != out_dim) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  std::vector<double> out(t * out_dim);
  const double* X = x.data().data();
  const double* W = weight.data().data();
  const double* b = bias.data().data();
  for (std::size_t i = 0; i < t; ++i) {
    double* row = out.data() + i * out_dim;
    std::copy(b, b + out_dim, row);
    for (std::size_t p = 0; p < in; ++p) {
      const double xv = X[i * in + p];
      const double* wrow = W + p * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) row[j] += xv * wrow[j];
    }
  }
  return make_result(
      {t, out_dim}, std::move(out), "linear", {x.node_ptr(), weight.node_ptr(), bias.node_ptr()},
      [t, in, out_dim](Node& self) {
        Node& nx = *self.parents[0];
        Node& nw = *self.parents[1];
        Node& nb = *self.parents[2];
        const double* G = self.grad.data();
        if (nx.requires_grad) {
          double* dX = nx.grad_buffer().data();
          const double* W = nw.data.data();
          for (std::size_t i = 0; i < t; ++i) {
            const double* grow = G + i * out_dim;
            for (std::size_t p = 0; p < in; ++p) {
              const double* wrow = W + p * out_dim;
              double acc = 0.0;
              for (std::size_t j = 0; j < out_dim; ++j) acc += grow[j] * wrow[j];
              dX[i * in + p] += acc;
            }
          }
        }
        if (nw.requires_grad) {
          double* dW = nw.grad_buffer().data();
          const double* X = nx.data.data();
          for (std::size_t i = 0; i < t; ++i) {
            const double* grow = G + i * out_dim;
            for (std::size_t p = 0; p < in; ++p) {
              const double xv = X[i * in + p];
              double* drow = dW + p * out_dim;
              for (std::size_t j = 0; j < out_dim; ++j) drow[j] += xv * grow[j];
            }
          }
        }
        if (nb.requires_grad) {
          double* db = nb.grad_buffer().data();
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) db[j] += G[i * out_dim + j];
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

// Either identical shapes or `b` is a row vector matching a's last axis.
bool is_row_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  const std::size_t last = a.shape().back();
  if (b.numel() == last && b.rank() <= a.rank() && b.shape().back() == last) return true;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " are not compatible");
}

template <typename Fwd, typename Da, typename Db>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Da da, Db db) {
  const bool bcast = is_row_broadcast(a, b, op);
  const std::size_t n = a.numel();
  const std::size_t width = b.numel();
  std::vector<double> out(n);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(A[i], B[bcast ? i % width : i]);
  return make_result(a.shape(), std::move(out), op, {a.node_ptr(), b.node_ptr()},
                     [bcast, n, width, da, db](Node& self) {
                       Node& na = *self.parents[0];
                       Node& nb = *self.parents[1];
                       const auto& A = na.data;
                       const auto& B = nb.data;
                       if (na.requires_grad) {
                         auto& g = na.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           g[i] += self.grad[i] * da(A[i], B[bcast ? i % width : i]);
                       }
                       if (nb.requires_grad) {
                         auto& g = nb.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t j = bcast ? i % width : i;
                           g[j] += self.grad[i] * db(A[i], B[j]);
                         }
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  const auto X = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(X[i]);
  // deriv(x, y) receives the input and the output value.
  return make_result(x.shape(), std::move(out), op, {x.node_ptr()}, [n, deriv](Node& self) {
    Node& nx = *self.parents[0];
    auto& g = nx.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * deriv(nx.data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(
      x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary_op(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor dropout(const Tensor& x, double rate, bool train, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  const std::size_t n = x.numel();
  std::mt19937_64 gen(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(n);
  for (auto& m : mask) m = uniform01(gen) < rate ? 0.0 : keep_scale;
  std::vector<double> out(n);
  const auto X = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = X[i] * mask[i];
  return make_result(x.shape(), std::move(out), "dropout", {x.node_ptr()},
                     [mask = std::move(mask)](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({1}, {acc}, "sum", {x.node_ptr()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// normalisation / probability

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.axis * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < s.axis; ++a) mx = std::max(mx, X[base + a * s.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < s.axis; ++a) {
        const double e = std::exp(X[base + a * s.inner] - mx);
        out[base + a * s.inner] = e;
        z += e;
      }
      for (std::size_t a = 0; a < s.axis; ++a) out[base + a * s.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), "softmax", {x.node_ptr()}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& Y = self.data;
    const auto& G = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.axis * s.inner + in;
        double dot = 0.0;
        for (std::size_t a = 0; a < s.axis; ++a) dot += G[base + a * s.inner] * Y[base + a * s.inner];
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t i = base + a * s.inner;
          g[i] += Y[i] * (G[i] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.axis * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < s.axis; ++a) mx = std::max(mx, X[base + a * s.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < s.axis; ++a) z += std::exp(X[base + a * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t a = 0; a < s.axis; ++a) out[base + a * s.inner] = X[base + a * s.inner] - lse;
    }
  }
  return make_result(x.shape(), std::move(out), "log_softmax", {x.node_ptr()}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& Y = self.data;
    const auto& G = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.axis * s.inner + in;
        double gsum = 0.0;
        for (std::size_t a = 0; a < s.axis; ++a) gsum += G[base + a * s.inner];
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t i = base + a * s.inner;
          g[i] += G[i] - std::exp(Y[i]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t width = x.shape().back();
  if (gain.numel() != width || bias.numel() != width) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(width) + " entries");
  }
  const std::size_t rows = x.numel() / width;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const auto X = x.data();
  const auto Gn = gain.data();
  const auto Bs = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += xr[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (xr[j] - mu) * inv;
      xhat[r * width + j] = h;
      out[r * width + j] = h * Gn[j] + Bs[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& nx = *self.parents[0];
        Node& ng = *self.parents[1];
        Node& nb = *self.parents[2];
        const auto& G = self.grad;
        if (ng.requires_grad || nb.requires_grad) {
          double* dg = ng.requires_grad ? ng.grad_buffer().data() : nullptr;
          double* db = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) {
              const double gv = G[r * width + j];
              if (dg) dg[j] += gv * xhat[r * width + j];
              if (db) db[j] += gv;
            }
          }
        }
        if (nx.requires_grad) {
          auto& dx = nx.grad_buffer();
          const auto& gain = ng.data;
          const double inv_n = 1.0 / static_cast<double>(width);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              const double d = G[r * width + j] * gain[j];
              mean_d += d;
              mean_dx += d * xhat[r * width + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < width; ++j) {
              const double d = G[r * width + j] * gain[j];
              dx[r * width + j] += inv_std[r] * (d - mean_d - xhat[r * width + j] * mean_dx);
            }
          }
        }
      });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_rank2(x, "l2_normalize_rows");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  std::vector<double> out(x.numel(), 0.0);
  std::vector<double> norms(rows, 0.0);
  const auto X = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < width; ++j) ss += X[r * width + j] * X[r * width + j];
    const double norm = std::sqrt(ss);
    norms[r] = norm;
    if (norm > 0.0) {
      for (std::size_t j = 0; j < width; ++j) out[r * width + j] = X[r * width + j] / norm;
    }
  }
  return make_result({rows, width}, std::move(out), "l2_normalize_rows", {x.node_ptr()},
                     [rows, width, norms = std::move(norms)](Node& self) {
                       auto& dx = self.parents[0]->grad_buffer();
                       const auto& Y = self.data;
                       const auto& G = self.grad;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (norms[r] <= 0.0) continue;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < width; ++j) dot += Y[r * width + j] * G[r * width + j];
                         for (std::size_t j = 0; j < width; ++j) {
                           const std::size_t i = r * width + j;
                           dx[i] += (G[i] - Y[i] * dot) / norms[r];
                         }
                       }
                     });
}

Tensor causal_mask(const Tensor& scores) {
  require_rank2(scores, "causal_mask");
  const std::size_t tq = scores.dim(0), tk = scores.dim(1);
  if (tk < tq) throw DimensionError("causal_mask: more queries than keys");
  const std::size_t offset = tk - tq;
  std::vector<double> out(scores.data().begin(), scores.data().end());
  for (std::size_t i = 0; i < tq; ++i)
    for (std::size_t j = i + offset + 1; j < tk; ++j) out[i * tk + j] = kMaskValue;
  return make_result({tq, tk}, std::move(out), "causal_mask", {scores.node_ptr()},
                     [tq, tk, offset](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < tq; ++i)
                         for (std::size_t j = 0; j <= i + offset; ++j) g[i * tk + j] += self.grad[i * tk + j];
                     });
}

// ---------------------------------------------------------------------------
// losses

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require_rank2(logits, "cross_entropy");
  const std::size_t t = logits.dim(0), v = logits.dim(1);
  if (targets.size() != t) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()) + " logits");
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::size_t counted = 0;
  for (int id : tg) {
    if (id == ignore_index) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw IndexError("cross_entropy: target id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(v));
    }
    ++counted;
  }
  const auto X = logits.data();
  std::vector<double> probs(t * v);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = X.data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[i * v + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    if (tg[i] != ignore_index) total += -(row[tg[i]] - mx - std::log(z));
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  return make_result({1}, {total / denom}, "cross_entropy", {logits.node_ptr()},
                     [t, v, denom, ignore_index, tg = std::move(tg), probs = std::move(probs)](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const double scale_g = self.grad[0] / denom;
                       for (std::size_t i = 0; i < t; ++i) {
                         if (tg[i] == ignore_index) continue;
                         for (std::size_t j = 0; j < v; ++j) g[i * v + j] += scale_g * probs[i * v + j];
                         g[i * v + static_cast<std::size_t>(tg[i])] -= scale_g;
                       }
                     });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  const std::size_t n = logits.numel();
  if (targets.size() != n) throw DimensionError("bce_with_logits: target count mismatch");
  std::vector<double> y(targets.begin(), targets.end());
  const auto Z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = Z[i];
    total += std::max(z, 0.0) - z * y[i] + std::log1p(std::exp(-std::abs(z)));
  }
  const double denom = static_cast<double>(n);
  return make_result({1}, {total / denom}, "bce_with_logits", {logits.node_ptr()},
                     [n, denom, y = std::move(y)](Node& self) {
                       Node& nz = *self.parents[0];
                       auto& g = nz.grad_buffer();
                       for (std::size_t i = 0; i < n; ++i) {
                         const double z = nz.data[i];
                         const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                                   : std::exp(z) / (1.0 + std::exp(z));
                         g[i] += self.grad[0] * (p - y[i]) / denom;
                       }
                     });
}

// ---------------------------------------------------------------------------
// indexing / shaping

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding_lookup");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * width);
  const auto T = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(T.data() + static_cast<std::size_t>(idx[i]) * width, width, out.data() + i * width);
  }
  const std::size_t n = idx.size();
  return make_result({n, width}, std::move(out), "embedding_lookup", {table.node_ptr()},
                     [width, idx = std::move(idx)](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         double* dst = g.data() + static_cast<std::size_t>(idx[i]) * width;
                         const double* src = self.grad.data() + i * width;
                         for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor embedding_bag_mean(const Tensor& table, const std::vector<std::vector<int>>& bags) {
  require_rank2(table, "embedding_bag_mean");
  if (bags.empty()) throw DimensionError("embedding_bag_mean: no bags");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<double> out(bags.size() * width, 0.0);
  const auto T = table.data();
  for (std::size_t b = 0; b < bags.size(); ++b) {
    if (bags[b].empty()) continue;
    const double w = 1.0 / static_cast<double>(bags[b].size());
    for (int id : bags[b]) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw IndexError("embedding_bag_mean: id " + std::to_string(id) + " outside table");
      }
      const double* src = T.data() + static_cast<std::size_t>(id) * width;
      for (std::size_t j = 0; j < width; ++j) out[b * width + j] += w * src[j];
    }
  }
  return make_result({bags.size(), width}, std::move(out), "embedding_bag_mean", {table.node_ptr()},
                     [width, bags](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t b = 0; b < bags.size(); ++b) {
                         if (bags[b].empty()) continue;
                         const double w = 1.0 / static_cast<double>(bags[b].size());
                         const double* src = self.grad.data() + b * width;
                         for (int id : bags[b]) {
                           double* dst = g.data() + static_cast<std::size_t>(id) * width;
                           for (std::size_t j = 0; j < width; ++j) dst[j] += w * src[j];
                         }
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "gather_rows");
  if (rows.empty()) throw DimensionError("gather_rows: empty row list");
  const std::size_t width = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * width);
  const auto X = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.dim(0)) {
      throw IndexError("gather_rows: row " + std::to_string(idx[i]) + " outside " + shape_str(x.shape()));
    }
    std::copy_n(X.data() + idx[i] * width, width, out.data() + i * width);
  }
  const std::size_t n = idx.size();
  return make_result({n, width}, std::move(out), "gather_rows", {x.node_ptr()},
                     [width, idx = std::move(idx)](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < width; ++j)
                           g[idx[i] * width + j] += self.grad[i * width + j];
                     });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  require_rank2(x, "pick");
  if (rows.size() != cols.size()) throw DimensionError("pick: rows and cols differ in length");
  if (rows.empty()) throw DimensionError("pick: empty index list");
  const std::size_t width = x.dim(1);
  std::vector<std::size_t> flat(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0) || cols[i] >= width) {
      throw IndexError("pick: (" + std::to_string(rows[i]) + "," + std::to_string(cols[i]) +
                       ") outside " + shape_str(x.shape()));
    }
    flat[i] = rows[i] * width + cols[i];
  }
  std::vector<double> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) out[i] = x.data()[flat[i]];
  const std::size_t n = flat.size();
  return make_result({n}, std::move(out), "pick", {x.node_ptr()}, [flat = std::move(flat)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < flat.size(); ++i) g[flat[i]] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  split_at(first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.shape()[d] != first[d]) {
        throw DimensionError("concat: shapes " + shape_str(first) + " and " + shape_str(p.shape()) +
                             " differ off the concat axis");
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const auto s = split_at(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.shape()[axis];
    const auto P = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(P.data() + o * len * s.inner, len * s.inner,
                  out.data() + (o * s.axis + offset) * s.inner);
    offset += len;
  }
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    parents.push_back(p.node_ptr());
    lens.push_back(p.shape()[axis]);
  }
  return make_result(std::move(out_shape), std::move(out), "concat", std::move(parents),
                     [s, offsets = std::move(offsets), lens = std::move(lens)](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& np = *self.parents[k];
                         if (!np.requires_grad) continue;
                         auto& g = np.grad_buffer();
                         for (std::size_t o = 0; o < s.outer; ++o) {
                           const double* src = self.grad.data() + (o * s.axis + offsets[k]) * s.inner;
                           double* dst = g.data() + o * lens[k] * s.inner;
                           for (std::size_t i = 0; i < lens[k] * s.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_at(x.shape(), axis);
  if (begin >= end || end > s.axis) {
    throw IndexError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(numel_of(out_shape));
  const auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(X.data() + (o * s.axis + begin) * s.inner, len * s.inner, out.data() + o * len * s.inner);
  return make_result(std::move(out_shape), std::move(out), "slice", {x.node_ptr()},
                     [s, begin, len](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         const double* src = self.grad.data() + o * len * s.inner;
                         double* dst = g.data() + (o * s.axis + begin) * s.inner;
                         for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  check_shape(shape);
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(shape, std::move(out), "reshape", {x.node_ptr()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace xlsum::ad
