#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle to a graph node. Ops build new nodes that keep
// their parents alive until the result is dropped; backward() walks the
// reachable subgraph in reverse topological order and accumulates gradients
// into every node that requires them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace wmark {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline thread_local bool grad_disabled = false;

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({}, {v}, requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    auto n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return matrix(rows.size(), cols, std::move(data));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t rows() const { return dim() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return dim() == 2 ? node_->shape[1] : size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad() { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  /// New leaf holding a copy of the values; never shares storage.
  Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }
  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result; records parents and the backward closure only when
/// some parent needs gradients and recording is enabled.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(value));
  if (detail::grad_disabled) return out;
  bool needs = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& p) { return p.requires_grad(); });
  if (!needs) return out;
  auto& node = out.node();
  node.requires_grad = true;
  for (auto& p : parents) node.parents.push_back(p.node_ptr());
  node.backward_fn = std::move(backward_fn);
  return out;
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline MatMap as_mat(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline ConstMatMap as_mat(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// Gradient sink for parent i, or nullptr when it does not need one.
inline std::vector<double>* sink(Node& n, std::size_t i) {
  auto& p = *n.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return &p.grad;
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got shape " + shape_str(t.shape()));
  }
}

template <class F, class G>
Tensor unary(const Tensor& a, F f, G dfdx) {
  std::vector<double> out(a.size());
  const auto& x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(a.shape(), std::move(out), {a}, [dfdx](Node& n) {
    if (auto* g = sink(n, 0)) {
      const auto& x = n.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * dfdx(x[i], n.value[i]);
    }
  });
}

// Elementwise binary op: identical shapes, or either side a single value.
template <class F, class Da, class Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, Da dfa, Db dfb) {
  bool same = a.shape() == b.shape();
  bool a_scalar = a.size() == 1 && !same;
  bool b_scalar = b.size() == 1 && !same;
  if (!same && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not conformable");
  }
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  std::size_t n = numel(shape);
  std::vector<double> out(n);
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
  return make_result(shape, std::move(out), {a, b}, [=](Node& node) {
    const auto& x = node.parents[0]->value;
    const auto& y = node.parents[1]->value;
    auto* ga = sink(node, 0);
    auto* gb = sink(node, 1);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      double xi = x[a_scalar ? 0 : i];
      double yi = y[b_scalar ? 0 : i];
      if (ga) (*ga)[a_scalar ? 0 : i] += node.grad[i] * dfa(xi, yi);
      if (gb) (*gb)[b_scalar ? 0 : i] += node.grad[i] * dfb(xi, yi);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "add", [](double x, double y) { return x + y; },
                        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "sub", [](double x, double y) { return x - y; },
                        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "mul", [](double x, double y) { return x * y; },
                        [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor neg(const Tensor& a) {
  return detail::unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Tensor abs(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::fabs(x); },
                       [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  return make_result({}, {s}, {a}, [](detail::Node& n) {
    if (auto* g = detail::sink(n, 0))
      for (auto& v : *g) v += n.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  double inv = 1.0 / static_cast<double>(a.size());
  double s = std::accumulate(a.values().begin(), a.values().end(), 0.0) * inv;
  return make_result({}, {s}, {a}, [inv](detail::Node& n) {
    if (auto* g = detail::sink(n, 0))
      for (auto& v : *g) v += n.grad[0] * inv;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(n * m);
  detail::as_mat(out, n, m).noalias() =
      detail::as_mat(a.values(), n, k) * detail::as_mat(b.values(), k, m);
  return make_result({n, m}, std::move(out), {a, b}, [n, k, m](detail::Node& node) {
    auto dc = detail::as_mat(std::as_const(node.grad), n, m);
    if (auto* ga = detail::sink(node, 0))
      detail::as_mat(*ga, n, k).noalias() +=
          dc * detail::as_mat(std::as_const(node.parents[1]->value), k, m).transpose();
    if (auto* gb = detail::sink(node, 1))
      detail::as_mat(*gb, k, m).noalias() +=
          detail::as_mat(std::as_const(node.parents[0]->value), n, k).transpose() * dc;
  });
}

/// Fully-connected layer: x (batch, in) times weight (out, in) transposed, plus bias (out).
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(weight, "linear");
  std::size_t batch = x.rows(), in = x.cols(), out_dim = weight.rows();
  if (weight.cols() != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                     shape_str(weight.shape()));
  }
  if (bias.size() != out_dim) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " +
                     shape_str(weight.shape()));
  }
  std::vector<double> out(batch * out_dim);
  auto y = detail::as_mat(out, batch, out_dim);
  y.noalias() = detail::as_mat(x.values(), batch, in) *
                detail::as_mat(weight.values(), out_dim, in).transpose();
  auto b = detail::as_mat(bias.values(), 1, out_dim);
  y.rowwise() += b.row(0);
  return make_result({batch, out_dim}, std::move(out), {x, weight, bias},
                     [batch, in, out_dim](detail::Node& node) {
                       auto dy = detail::as_mat(std::as_const(node.grad), batch, out_dim);
                       if (auto* gx = detail::sink(node, 0))
                         detail::as_mat(*gx, batch, in).noalias() +=
                             dy * detail::as_mat(std::as_const(node.parents[1]->value), out_dim, in);
                       if (auto* gw = detail::sink(node, 1))
                         detail::as_mat(*gw, out_dim, in).noalias() +=
                             dy.transpose() *
                             detail::as_mat(std::as_const(node.parents[0]->value), batch, in);
                       // Plain loop: a vectorised reduction would sum in an address-dependent order.
                       if (auto* gb = detail::sink(node, 2)) {
                         const auto& g = node.grad;
                         for (std::size_t r = 0; r < batch; ++r)
                           for (std::size_t c = 0; c < out_dim; ++c) (*gb)[c] += g[r * out_dim + c];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean categorical cross-entropy of row-wise softmax(logits) against class labels.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::require_matrix(logits, "softmax_cross_entropy");
  std::size_t batch = logits.rows(), classes = logits.cols();
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  }
  std::vector<double> probs(batch * classes);
  double total = 0.0;
  const auto& z = logits.values();
  for (std::size_t r = 0; r < batch; ++r) {
    auto label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw std::out_of_range("softmax_cross_entropy: label out of range");
    const double* row = z.data() + r * classes;
    double mx = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - mx) / denom;
    total += -(row[label] - mx - std::log(denom));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result({}, {total / static_cast<double>(batch)}, {logits},
                     [probs = std::move(probs), lab = std::move(lab), batch, classes](detail::Node& n) {
                       if (auto* g = detail::sink(n, 0)) {
                         double s = n.grad[0] / static_cast<double>(batch);
                         for (std::size_t r = 0; r < batch; ++r)
                           for (std::size_t c = 0; c < classes; ++c) {
                             double onehot = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
                             (*g)[r * classes + c] += s * (probs[r * classes + c] - onehot);
                           }
                       }
                     });
}

inline constexpr double kProbFloor = 1e-7;

/// Mean binary cross-entropy; predictions are clamped to [1e-7, 1-1e-7] before the log.
/// The clamp passes gradients straight through.
inline Tensor binary_cross_entropy(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw ShapeError("binary_cross_entropy: shapes " + shape_str(prediction.shape()) + " and " +
                     shape_str(target.shape()) + " differ");
  }
  std::size_t n = prediction.size();
  if (n == 0) throw ShapeError("binary_cross_entropy of empty tensor");
  const auto& p = prediction.values();
  const auto& t = target.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double q = std::clamp(p[i], kProbFloor, 1.0 - kProbFloor);
    total += -(t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q));
  }
  return make_result({}, {total / static_cast<double>(n)}, {prediction, target}, [n](detail::Node& node) {
    const auto& p = node.parents[0]->value;
    const auto& t = node.parents[1]->value;
    double s = node.grad[0] / static_cast<double>(n);
    auto* gp = detail::sink(node, 0);
    auto* gt = detail::sink(node, 1);
    for (std::size_t i = 0; i < n; ++i) {
      double q = std::clamp(p[i], kProbFloor, 1.0 - kProbFloor);
      if (gp) (*gp)[i] += s * (-t[i] / q + (1.0 - t[i]) / (1.0 - q));
      if (gt) (*gt)[i] += s * (std::log(1.0 - q) - std::log(q));
    }
  });
}

/// Mean of elementwise squared differences.
inline Tensor squared_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("squared_error: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
  return mean(mul(sub(a, b), sub(a, b)));
}

// ---------------------------------------------------------------------------
// Structural ops

/// Concatenates along the leading axis; trailing dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat of no tensors");
  Shape tail(parts[0].shape().begin() + (parts[0].dim() ? 1 : 0), parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.dim() == 0) throw ShapeError("concat of scalar");
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) {
      throw ShapeError("concat: shapes " + shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()) + " differ beyond the leading axis");
    }
    lead += p.shape()[0];
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_result(shape, std::move(out), parts, [](detail::Node& n) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      std::size_t len = n.parents[i]->value.size();
      if (auto* g = detail::sink(n, i))
        for (std::size_t j = 0; j < len; ++j) (*g)[j] += n.grad[offset + j];
      offset += len;
    }
  });
}

/// Rows [begin, end) along the leading axis.
inline Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.dim() == 0 || begin > end || end > a.shape()[0]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for shape " + shape_str(a.shape()));
  }
  std::size_t stride = a.size() / a.shape()[0];
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                          a.values().begin() + static_cast<std::ptrdiff_t>(end * stride));
  return make_result(shape, std::move(out), {a}, [begin, stride](detail::Node& n) {
    if (auto* g = detail::sink(n, 0))
      for (std::size_t j = 0; j < n.grad.size(); ++j) (*g)[begin * stride + j] += n.grad[j];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return make_result(std::move(shape), a.values(), {a}, [](detail::Node& n) {
    if (auto* g = detail::sink(n, 0))
      for (std::size_t j = 0; j < n.grad.size(); ++j) (*g)[j] += n.grad[j];
  });
}

/// Flat gather: out[i] = a.flat[indices[i]]; gradients scatter back to the source positions.
inline Tensor gather(const Tensor& a, std::vector<std::size_t> indices) {
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.size()) throw std::out_of_range("gather index out of range");
    out[i] = a.values()[indices[i]];
  }
  Shape shape{indices.size()};
  return make_result(shape, std::move(out), {a}, [idx = std::move(indices)](detail::Node& n) {
    if (auto* g = detail::sink(n, 0))
      for (std::size_t i = 0; i < idx.size(); ++i) (*g)[idx[i]] += n.grad[i];
  });
}

/// Positions of the flat values in descending value order; equal values keep index order.
inline std::vector<std::size_t> argsort_descending(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] > values[j]; });
  return order;
}

/// Flat values in descending order, detached from the graph.
inline Tensor sort_descending(const Tensor& a) {
  std::vector<double> out(a.values());
  std::sort(out.begin(), out.end(), std::greater<>());
  return Tensor::vector(std::move(out));
}

// ---------------------------------------------------------------------------
// Backward pass

inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS yields a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_ptr().get(), 0);
  seen.insert(loss.node_ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  auto& root = loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
  // Interior gradients are scratch space; only leaves keep theirs.
  for (auto* n : order) {
    if (n->backward_fn && n != &root) std::vector<double>().swap(n->grad);
  }
}

}  // namespace wmark
