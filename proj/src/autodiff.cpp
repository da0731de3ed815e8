#include "ompn/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace ompn::ad {

namespace detail {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

Var make_var(Node* n) {
  Var v;
  v.node_ = n;
  return v;
}

Node* var_node(Var v) { return v.node_; }

}  // namespace detail

namespace {

using detail::Node;
using detail::shape_str;

Var wrap(Node* n) { return detail::make_var(n); }

Node* node_of(Var v) { return detail::var_node(v); }

Tape& tape_of(Var v) { return *node_of(v)->tape; }

void require_same_tape(Var a, Var b) {
  if (node_of(a)->tape != node_of(b)->tape)
    throw std::logic_error("operands belong to different tapes");
}

bool scalar_shaped(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

void require_broadcastable(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return;
  if (scalar_shaped(a) || scalar_shaped(b)) return;
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_str(a) + " and " + shape_str(b));
}

// Spreads `g` (shaped like the broadcast result) back onto an operand that
// may have been a 1x1 scalar.
void accumulate(Node* n, const Matrix& g) {
  if (!n->tracked) return;
  if (scalar_shaped(n->value) && g.size() > 1) {
    n->grad_ref()(0, 0) += g.sum();
  } else {
    n->grad_ref() += g;
  }
}

Matrix broadcast_apply(const Matrix& a, const Matrix& b,
                       const std::function<double(double, double)>& f) {
  if (scalar_shaped(a) && !scalar_shaped(b)) {
    return b.unaryExpr([&](double y) { return f(a(0, 0), y); });
  }
  if (scalar_shaped(b) && !scalar_shaped(a)) {
    return a.unaryExpr([&](double x) { return f(x, b(0, 0)); });
  }
  return a.binaryExpr(b, [&](double x, double y) { return f(x, y); });
}

// Value of an operand expanded to the broadcast result shape.
Matrix expanded(const Matrix& m, Eigen::Index r, Eigen::Index c) {
  if (scalar_shaped(m) && (r != 1 || c != 1)) return Matrix::Constant(r, c, m(0, 0));
  return m;
}

}  // namespace

Node& Tape::push(Matrix value, bool tracked) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.tracked = tracked;
  n.tape = this;
  return n;
}

Var Tape::constant(Matrix value) { return wrap(&push(std::move(value), false)); }

Var Tape::leaf(Matrix value) { return wrap(&push(std::move(value), true)); }

void Tape::backward(Var root) {
  Node* r = node_of(root);
  if (r->tape != this) throw std::logic_error("backward: root from another tape");
  if (r->value.rows() != 1 || r->value.cols() != 1)
    throw DimensionError("backward: root must be 1x1, got " + shape_str(r->value));
  r->grad_ref()(0, 0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->grad.size() != 0 && it->backprop) it->backprop();
  }
}

// --- elementwise -----------------------------------------------------------

namespace {

Var binary_op(Var a, Var b, const char* name,
              const std::function<double(double, double)>& f,
              // local partials evaluated elementwise at (x, y)
              const std::function<double(double, double)>& dfdx,
              const std::function<double(double, double)>& dfdy) {
  require_same_tape(a, b);
  require_broadcastable(a.value(), b.value(), name);
  Node* na = node_of(a);
  Node* nb = node_of(b);
  Matrix out = broadcast_apply(na->value, nb->value, f);
  Node& n = tape_of(a).push(std::move(out), na->tracked || nb->tracked);
  if (n.tracked) {
    n.backprop = [na, nb, pn = &n, dfdx, dfdy] {
      const Matrix& g = pn->grad;
      Matrix xa = expanded(na->value, g.rows(), g.cols());
      Matrix xb = expanded(nb->value, g.rows(), g.cols());
      if (na->tracked)
        accumulate(na, g.cwiseProduct(xa.binaryExpr(
                           xb, [&](double x, double y) { return dfdx(x, y); })));
      if (nb->tracked)
        accumulate(nb, g.cwiseProduct(xa.binaryExpr(
                           xb, [&](double x, double y) { return dfdy(x, y); })));
    };
  }
  return wrap(&n);
}

Var unary_op(Var a, const std::function<Matrix(const Matrix&)>& f,
             // given (value_out, value_in, grad_out) -> grad_in contribution
             const std::function<Matrix(const Matrix&, const Matrix&, const Matrix&)>& df) {
  Node* na = node_of(a);
  Matrix out = f(na->value);
  Node& n = tape_of(a).push(std::move(out), na->tracked);
  if (n.tracked) {
    n.backprop = [na, pn = &n, df] {
      na->grad_ref() += df(pn->value, na->value, pn->grad);
    };
  }
  return wrap(&n);
}

}  // namespace

Var add(Var a, Var b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var divide(Var a, Var b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var add_const(Var a, double c) {
  return unary_op(
      a, [c](const Matrix& v) { return Matrix(v.array() + c); },
      [](const Matrix&, const Matrix&, const Matrix& g) { return g; });
}

Var rsub_const(double c, Var a) {
  return unary_op(
      a, [c](const Matrix& v) { return Matrix(c - v.array()); },
      [](const Matrix&, const Matrix&, const Matrix& g) { return Matrix(-g); });
}

Var scale(Var a, double c) {
  return unary_op(
      a, [c](const Matrix& v) { return Matrix(v * c); },
      [c](const Matrix&, const Matrix&, const Matrix& g) { return Matrix(g * c); });
}

Var sigmoid(Var a) {
  return unary_op(
      a,
      [](const Matrix& v) {
        return Matrix(1.0 / (1.0 + (-v.array()).exp()));
      },
      [](const Matrix& out, const Matrix&, const Matrix& g) {
        return Matrix(g.array() * out.array() * (1.0 - out.array()));
      });
}

Var tanh(Var a) {
  return unary_op(
      a, [](const Matrix& v) { return Matrix(v.array().tanh()); },
      [](const Matrix& out, const Matrix&, const Matrix& g) {
        return Matrix(g.array() * (1.0 - out.array().square()));
      });
}

Var relu(Var a) {
  return unary_op(
      a, [](const Matrix& v) { return Matrix(v.array().max(0.0)); },
      [](const Matrix&, const Matrix& in, const Matrix& g) {
        return Matrix((in.array() > 0.0).select(g, Matrix::Zero(g.rows(), g.cols())));
      });
}

Var log(Var a) {
  return unary_op(
      a, [](const Matrix& v) { return Matrix(v.array().log()); },
      [](const Matrix&, const Matrix& in, const Matrix& g) {
        return Matrix(g.array() / in.array());
      });
}

Var clamp(Var a, double lo, double hi, long* saturations) {
  Node* na = node_of(a);
  Matrix out = na->value.array().max(lo).min(hi);
  if (saturations) {
    *saturations +=
        (na->value.array() <= lo).count() + (na->value.array() >= hi).count();
  }
  Node& n = tape_of(a).push(std::move(out), na->tracked);
  if (n.tracked) {
    n.backprop = [na, pn = &n, lo, hi] {
      Matrix inside = ((na->value.array() > lo) && (na->value.array() < hi))
                          .cast<double>();
      na->grad_ref() += pn->grad.cwiseProduct(inside);
    };
  }
  return wrap(&n);
}

// --- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.value()) + " * " + shape_str(b.value()));
  Node* na = node_of(a);
  Node* nb = node_of(b);
  Node& n = tape_of(a).push(na->value * nb->value, na->tracked || nb->tracked);
  if (n.tracked) {
    n.backprop = [na, nb, pn = &n] {
      if (na->tracked) na->grad_ref() += pn->grad * nb->value.transpose();
      if (nb->tracked) nb->grad_ref() += na->value.transpose() * pn->grad;
    };
  }
  return wrap(&n);
}

Var sum(Var a) {
  Node* na = node_of(a);
  Matrix out(1, 1);
  out(0, 0) = na->value.sum();
  Node& n = tape_of(a).push(std::move(out), na->tracked);
  if (n.tracked) {
    n.backprop = [na, pn = &n] {
      na->grad_ref().array() += pn->grad(0, 0);
    };
  }
  return wrap(&n);
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1)
    throw DimensionError("concat: axis out of range: " + std::to_string(axis));
  const Matrix& first = parts[0].value();
  Eigen::Index rows = first.rows(), cols = first.cols();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    require_same_tape(parts[0], parts[i]);
    const Matrix& m = parts[i].value();
    if (axis == 0) {
      if (m.cols() != cols)
        throw DimensionError("concat axis 0: column mismatch " +
                             shape_str(first) + " vs " + shape_str(m));
      rows += m.rows();
    } else {
      if (m.rows() != rows)
        throw DimensionError("concat axis 1: row mismatch " + shape_str(first) +
                             " vs " + shape_str(m));
      cols += m.cols();
    }
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  bool tracked = false;
  std::vector<Node*> srcs;
  srcs.reserve(parts.size());
  for (const Var& p : parts) {
    const Matrix& m = p.value();
    if (axis == 0) {
      out.middleRows(off, m.rows()) = m;
      off += m.rows();
    } else {
      out.middleCols(off, m.cols()) = m;
      off += m.cols();
    }
    tracked = tracked || p.tracked();
    srcs.push_back(node_of(p));
  }
  Node& n = tape_of(parts[0]).push(std::move(out), tracked);
  if (n.tracked) {
    n.backprop = [srcs, pn = &n, axis] {
      Eigen::Index off = 0;
      for (Node* s : srcs) {
        Eigen::Index len = axis == 0 ? s->value.rows() : s->value.cols();
        if (s->tracked) {
          if (axis == 0)
            s->grad_ref() += pn->grad.middleRows(off, len);
          else
            s->grad_ref() += pn->grad.middleCols(off, len);
        }
        off += len;
      }
    };
  }
  return wrap(&n);
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, int axis, Eigen::Index start, Eigen::Index count) {
  if (axis != 0 && axis != 1)
    throw DimensionError("slice: axis out of range: " + std::to_string(axis));
  Node* na = node_of(a);
  Eigen::Index extent = axis == 0 ? a.rows() : a.cols();
  if (start < 0 || count < 1 || start + count > extent)
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " +
                         shape_str(na->value));
  Matrix out = axis == 0 ? Matrix(na->value.middleRows(start, count))
                         : Matrix(na->value.middleCols(start, count));
  Node& n = tape_of(a).push(std::move(out), na->tracked);
  if (n.tracked) {
    n.backprop = [na, pn = &n, axis, start, count] {
      if (axis == 0)
        na->grad_ref().middleRows(start, count) += pn->grad;
      else
        na->grad_ref().middleCols(start, count) += pn->grad;
    };
  }
  return wrap(&n);
}

Var colscale(Var m, Var w) {
  require_same_tape(m, w);
  if (w.cols() != 1 || w.rows() != m.cols())
    throw DimensionError("colscale: weights " + shape_str(w.value()) +
                         " do not match matrix " + shape_str(m.value()));
  Node* nm = node_of(m);
  Node* nw = node_of(w);
  Node& n = tape_of(m).push(nm->value * nw->value.asDiagonal(),
                            nm->tracked || nw->tracked);
  if (n.tracked) {
    n.backprop = [nm, nw, pn = &n] {
      if (nm->tracked) nm->grad_ref() += pn->grad * nw->value.asDiagonal();
      if (nw->tracked) {
        Matrix& gw = nw->grad_ref();
        for (Eigen::Index j = 0; j < nm->value.cols(); ++j)
          gw(j, 0) += pn->grad.col(j).dot(nm->value.col(j));
      }
    };
  }
  return wrap(&n);
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  if (x.cols() != 1 || gain.rows() != x.rows() || gain.cols() != 1 ||
      bias.rows() != x.rows() || bias.cols() != 1)
    throw DimensionError("layer_norm: expected matching column vectors, got " +
                         shape_str(x.value()) + ", " + shape_str(gain.value()) +
                         ", " + shape_str(bias.value()));
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  Node* nx = node_of(x);
  Node* ng = node_of(gain);
  Node* nb = node_of(bias);
  const double n = static_cast<double>(x.rows());
  const double mean = nx->value.mean();
  const double var = (nx->value.array() - mean).square().sum() / n;
  const double sigma = std::sqrt(var + eps);
  Matrix xhat = (nx->value.array() - mean) / sigma;
  Matrix out = ng->value.cwiseProduct(xhat) + nb->value;
  Node& node =
      tape_of(x).push(std::move(out), nx->tracked || ng->tracked || nb->tracked);
  if (node.tracked) {
    node.backprop = [nx, ng, nb, pn = &node, xhat, sigma, n] {
      const Matrix& g = pn->grad;
      if (nb->tracked) nb->grad_ref() += g;
      if (ng->tracked) ng->grad_ref() += g.cwiseProduct(xhat);
      if (nx->tracked) {
        Matrix h = ng->value.cwiseProduct(g);
        const double mean_h = h.mean();
        const double mean_hx = h.cwiseProduct(xhat).mean();
        nx->grad_ref() +=
            ((h.array() - mean_h - xhat.array() * mean_hx) / sigma).matrix();
      }
    };
  }
  return wrap(&node);
}

Var log_softmax_nll(Var logits, Eigen::Index target) {
  if (logits.cols() != 1 || logits.rows() < 1)
    throw DimensionError("log_softmax_nll: logits must be k x 1, got " +
                         shape_str(logits.value()));
  if (target < 0 || target >= logits.rows())
    throw DimensionError("log_softmax_nll: target " + std::to_string(target) +
                         " out of [0, " + std::to_string(logits.rows()) + ")");
  Node* nl = node_of(logits);
  const Matrix& z = nl->value;
  double zmax = z.maxCoeff();
  double lse = std::log((z.array() - zmax).exp().sum()) + zmax;
  Matrix out(1, 1);
  out(0, 0) = lse - z(target, 0);
  Node& n = tape_of(logits).push(std::move(out), nl->tracked);
  if (n.tracked) {
    n.backprop = [nl, pn = &n, target, lse] {
      Matrix softmax = (nl->value.array() - lse).exp();
      softmax(target, 0) -= 1.0;
      nl->grad_ref() += softmax * pn->grad(0, 0);
    };
  }
  return wrap(&n);
}

// --- gradient checking -----------------------------------------------------

double grad_check(std::span<Matrix* const> params,
                  const std::function<double()>& loss,
                  const std::function<std::vector<Matrix>()>& analytic,
                  double eps) {
  std::vector<Matrix> grads = analytic();
  if (grads.size() != params.size())
    throw std::logic_error("grad_check: gradient count mismatch");
  double max_err = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& theta = *params[p];
    const Matrix& g = grads[p];
    if (g.rows() != theta.rows() || g.cols() != theta.cols())
      throw DimensionError("grad_check: gradient shape " + detail::shape_str(g) +
                           " vs parameter " + detail::shape_str(theta));
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      double saved = theta(i);
      theta(i) = saved + eps;
      double up = loss();
      theta(i) = saved - eps;
      double down = loss();
      theta(i) = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite loss during perturbation");
      double numeric = (up - down) / (2.0 * eps);
      double a = g(i);
      double err = std::abs(a - numeric) /
                   std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace ompn::ad
