// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Define-by-run: every operation appends a node to a Tape; the creation
// order is a valid topological order, so backward() is a single reverse
// sweep. Graphs are rebuilt per forward pass, which is what truncated
// BPTT over variable-length trajectories needs. Everything is double
// precision.

#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ompn::ad {

using Matrix = Eigen::MatrixXd;

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class Tape;
class Var;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until the node participates in a backward pass
  bool tracked = false;
  std::function<void()> backprop;
  Tape* tape = nullptr;

  Matrix& grad_ref() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

Var make_var(Node* n);
Node* var_node(Var v);
std::string shape_str(const Matrix& m);

}  // namespace detail

// Cheap handle to a tape-owned node.
class Var {
 public:
  Var() = default;

  const Matrix& value() const { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool tracked() const { return node_->tracked; }
  bool valid() const { return node_ != nullptr; }

  // Accumulated gradient; zero matrix if this node never received one.
  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }

  double scalar() const { return node_->value(0, 0); }

 private:
  friend class Tape;
  friend Var detail::make_var(detail::Node* n);
  friend detail::Node* detail::var_node(Var v);

  detail::Node* node_ = nullptr;
};

// Owns the nodes of one forward pass. Single-threaded; independent tapes
// may live on different threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Untracked leaf: inputs, constants, carried-over recurrent state.
  Var constant(Matrix value);
  // Tracked leaf: parameters and anything needing a gradient.
  Var leaf(Matrix value);

  // Seeds `root` (must be 1x1) with gradient 1 and sweeps the tape in
  // reverse creation order. Leaves not on any path to `root` keep an
  // exactly-zero gradient.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

  detail::Node& push(Matrix value, bool tracked);

 private:
  std::deque<detail::Node> nodes_;
};

// --- elementwise and structural operations -------------------------------
//
// Binary elementwise ops accept equal shapes or a 1x1 operand on either
// side (scalar<->matrix broadcasting, the only kind supported).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);

Var add_const(Var a, double c);
Var rsub_const(double c, Var a);  // c - a
Var scale(Var a, double c);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var log(Var a);

// Clamps to [lo, hi]; gradient passes only through entries strictly inside.
// When `saturations` is given it is incremented by the number of clamped
// entries at forward time.
Var clamp(Var a, double lo, double hi, long* saturations = nullptr);

Var matmul(Var a, Var b);
Var sum(Var a);  // 1x1

Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
// Contiguous block along `axis`; the adjoint of concat.
Var slice(Var a, int axis, Eigen::Index start, Eigen::Index count);

// out(:,j) = m(:,j) * w(j); w is q x 1 for a p x q matrix.
Var colscale(Var m, Var w);

// gain .* (x - mean) / sqrt(var + eps) + bias over a column vector.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Numerically stable negative log-likelihood of `target` under
// softmax(logits); logits is k x 1. Gradient is softmax - onehot.
Var log_softmax_nll(Var logits, Eigen::Index target);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// --- gradient checking ----------------------------------------------------

// Central-difference check. `loss` evaluates the objective at the current
// contents of `params`; `analytic` returns one gradient per parameter
// (computed by a backward pass). Returns the max over coordinates of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
double grad_check(std::span<Matrix* const> params,
                  const std::function<double()>& loss,
                  const std::function<std::vector<Matrix>()>& analytic,
                  double eps = 1e-5);

}  // namespace ompn::ad
