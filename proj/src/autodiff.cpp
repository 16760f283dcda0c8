#include "msiprior/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "msiprior/error.hpp"

namespace msiprior::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  require(ok, ErrorKind::kInvalidInput,
          std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

enum class Broadcast { kNone, kRow };

Broadcast broadcast_mode(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  check_shape(b.rows() == 1 && b.cols() == a.cols(), op, a, b);
  return Broadcast::kRow;
}

// Reduces an adjoint of the broadcast result back to the right operand's shape.
Matrix reduce_for(Broadcast mode, const Matrix& g) {
  if (mode == Broadcast::kNone) return g;
  return g.colwise().sum();
}

}  // namespace

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::accumulate_block(Var v, Eigen::Index row, Eigen::Index col, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad.block(row, col, g.rows(), g.cols()) += g;
}

void Tape::backward(Var loss) {
  const Matrix& lv = nodes_[loss.id()].value;
  require(lv.rows() == 1 && lv.cols() == 1, ErrorKind::kInvalidInput,
          "backward: loss must be a 1x1 scalar, got " + shape_str(lv));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (nodes_[loss.id()].needs_grad) {
    nodes_[loss.id()].grad = Matrix::Ones(1, 1);
    // Gradients are allocated on first accumulation; an empty gradient means
    // the node was not reached.
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() > 0) n.backward(*this, n.grad);
    }
  }
  for (auto& n : nodes_) {
    if (n.needs_grad && n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
}

Var matmul(Var a, Var b) {
  check_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  check_shape(a.cols() == b.cols(), "matmul_nt", a.value(), b.value());
  Matrix out = a.value() * b.value().transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value());
    if (t.needs_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  const Broadcast mode = broadcast_mode("add", a.value(), b.value());
  Matrix out = mode == Broadcast::kNone ? Matrix(a.value() + b.value())
                                        : Matrix(a.value().rowwise() + b.value().row(0));
  return a.tape().record(std::move(out), {a, b}, [a, b, mode](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, reduce_for(mode, g));
  });
}

Var sub(Var a, Var b) {
  const Broadcast mode = broadcast_mode("sub", a.value(), b.value());
  Matrix out = mode == Broadcast::kNone ? Matrix(a.value() - b.value())
                                        : Matrix(a.value().rowwise() - b.value().row(0));
  return a.tape().record(std::move(out), {a, b}, [a, b, mode](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, -reduce_for(mode, g));
  });
}

Var mul(Var a, Var b) {
  const Broadcast mode = broadcast_mode("mul", a.value(), b.value());
  Matrix out;
  if (mode == Broadcast::kNone) {
    out = a.value().cwiseProduct(b.value());
  } else {
    out = a.value().array().rowwise() * b.value().row(0).array();
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, mode](Tape& t, const Matrix& g) {
    if (mode == Broadcast::kNone) {
      if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
      if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
    } else {
      if (t.needs_grad(a)) {
        t.accumulate(a, Matrix(g.array().rowwise() * b.value().row(0).array()));
      }
      if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()).colwise().sum());
    }
  });
}

Var scale(Var a, double s) {
  return a.tape().record(a.value() * s, {a},
                         [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var concat_rows(Var top, Var bottom) {
  check_shape(top.cols() == bottom.cols(), "concat_rows", top.value(), bottom.value());
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top.value(), bottom.value();
  const Eigen::Index split = top.rows();
  return top.tape().record(std::move(out), {top, bottom},
                           [top, bottom, split](Tape& t, const Matrix& g) {
                             if (t.needs_grad(top)) t.accumulate(top, g.topRows(split));
                             if (t.needs_grad(bottom)) t.accumulate(bottom, g.bottomRows(g.rows() - split));
                           });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::kInvalidInput, "concat_cols: no inputs");
  Tape& tape = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    check_shape(p.rows() == rows, "concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return tape.record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), ErrorKind::kInvalidInput,
          "slice_cols: range out of bounds");
  Matrix out = a.value().middleCols(start, count);
  return a.tape().record(std::move(out), {a}, [a, start](Tape& t, const Matrix& g) {
    t.accumulate_block(a, 0, start, g);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), ErrorKind::kInvalidInput,
          "slice_rows: range out of bounds");
  Matrix out = a.value().middleRows(start, count);
  return a.tape().record(std::move(out), {a}, [a, start](Tape& t, const Matrix& g) {
    t.accumulate_block(a, start, 0, g);
  });
}

Var gather_rows(Var a, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] >= 0 && rows[k] < a.rows(), ErrorKind::kInvalidInput,
            "gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(k)) = a.value().row(rows[k]);
  }
  return a.tape().record(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < rows.size(); ++k)
      t.accumulate_block(a, rows[k], 0, g.row(static_cast<Eigen::Index>(k)));
  });
}

Var transpose(Var a) {
  return a.tape().record(a.value().transpose(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.transpose());
  });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  return a.tape().record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix(g.array() * (1.0 - out.array().square())));
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix((a.value().array() > 0.0).select(g.array(), 0.0)));
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return a.tape().record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix(g.array() * out.array() * (1.0 - out.array())));
  });
}

Var softplus(Var a) {
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  Matrix out = a.value().unaryExpr(
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix s = a.value().unaryExpr([](double x) {
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
    t.accumulate(a, g.cwiseProduct(s));
  });
}

Var log(Var a) {
  Matrix out = a.value().array().log().matrix();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix(g.array() / a.value().array()));
  });
}

Var softmax_rows(Var a) {
  // Column-major storage: operate on whole columns with per-row vectors.
  const Eigen::VectorXd row_max = a.value().rowwise().maxCoeff();
  Matrix out = (a.value().colwise() - row_max).array().exp().matrix();
  const Eigen::VectorXd inv_sum = out.rowwise().sum().cwiseInverse();
  out = out.array().colwise() * inv_sum.array();
  return a.tape().record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(out).rowwise().sum();
    t.accumulate(a, Matrix(out.array() * (g.colwise() - dots).array()));
  });
}

Var layernorm_rows(Var a, double eps) {
  const double c = static_cast<double>(a.cols());
  const Eigen::VectorXd mean = a.value().rowwise().sum() / c;
  Matrix centered = a.value().colwise() - mean;
  const Eigen::VectorXd var = centered.cwiseAbs2().rowwise().sum() / c;
  const Eigen::VectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix out = centered.array().colwise() * inv_std.array();
  return a.tape().record(out, {a}, [a, out, inv_std, c](Tape& t, const Matrix& g) {
    const Eigen::VectorXd g_mean = g.rowwise().sum() / c;
    const Eigen::VectorXd gy_mean = g.cwiseProduct(out).rowwise().sum() / c;
    Matrix gin = (g.colwise() - g_mean) - Matrix(out.array().colwise() * gy_mean.array());
    gin = gin.array().colwise() * inv_std.array();
    t.accumulate(a, gin);
  });
}

AttentionResult multihead_attention(Var q, Var k, Var v, int n_heads) {
  check_shape(q.cols() == k.cols(), "multihead_attention", q.value(), k.value());
  check_shape(k.rows() == v.rows() && k.cols() == v.cols(), "multihead_attention", k.value(),
              v.value());
  require(n_heads >= 1 && q.cols() % n_heads == 0, ErrorKind::kInvalidInput,
          "multihead_attention: width not divisible by head count");
  const Eigen::Index dh = q.cols() / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index nq = q.rows();
  const Eigen::Index nk = k.rows();

  auto probs = std::make_shared<std::vector<Matrix>>();
  Matrix out(nq, q.cols());
  AttentionResult result;
  result.mean_probs = Matrix::Zero(nq, nk);
  for (int h = 0; h < n_heads; ++h) {
    const Eigen::Index c0 = h * dh;
    Matrix s = (q.value().middleCols(c0, dh) * k.value().middleCols(c0, dh).transpose()) * scale;
    const Eigen::VectorXd row_max = s.rowwise().maxCoeff();
    s = (s.colwise() - row_max).array().exp().matrix();
    const Eigen::VectorXd inv_sum = s.rowwise().sum().cwiseInverse();
    s = s.array().colwise() * inv_sum.array();
    out.middleCols(c0, dh).noalias() = s * v.value().middleCols(c0, dh);
    result.mean_probs += s;
    probs->push_back(std::move(s));
  }
  result.mean_probs /= static_cast<double>(n_heads);

  result.output = q.tape().record(
      std::move(out), {q, k, v}, [q, k, v, probs, dh, scale, n_heads](Tape& t, const Matrix& g) {
        Matrix dq(q.rows(), q.cols()), dk(k.rows(), k.cols()), dv(v.rows(), v.cols());
        for (int h = 0; h < n_heads; ++h) {
          const Eigen::Index c0 = h * dh;
          const Matrix& p = (*probs)[static_cast<std::size_t>(h)];
          const auto g_h = g.middleCols(c0, dh);
          dv.middleCols(c0, dh).noalias() = p.transpose() * g_h;
          Matrix dp = g_h * v.value().middleCols(c0, dh).transpose();
          const Eigen::VectorXd dots = dp.cwiseProduct(p).rowwise().sum();
          dp = (p.array() * (dp.colwise() - dots).array()) * scale;
          dq.middleCols(c0, dh).noalias() = dp * k.value().middleCols(c0, dh);
          dk.middleCols(c0, dh).noalias() = dp.transpose() * q.value().middleCols(c0, dh);
        }
        t.accumulate(q, dq);
        t.accumulate(k, dk);
        t.accumulate(v, dv);
      });
  return result;
}

Var mean_rows(Var a) {
  require(a.rows() > 0, ErrorKind::kInvalidInput, "mean_rows: empty input");
  const auto n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() / n;
  return a.tape().record(std::move(out), {a}, [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix(g.replicate(a.rows(), 1) / n));
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

ValueAndGrad value_and_grad(const LossFn& fn, const std::vector<Matrix>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.variable(p));
  const Var loss = fn(tape, leaves);
  tape.backward(loss);
  ValueAndGrad out;
  out.value = loss.scalar();
  out.grads.reserve(leaves.size());
  for (const Var& v : leaves) out.grads.push_back(v.grad());
  return out;
}

double grad_check(const LossFn& fn, const std::vector<Matrix>& params, double eps) {
  require(eps > 0.0, ErrorKind::kInvalidInput, "grad_check: eps must be positive");
  const ValueAndGrad analytic = value_and_grad(fn, params);
  require(std::isfinite(analytic.value), ErrorKind::kNumeric, "grad_check: non-finite loss");

  auto eval = [&](const std::vector<Matrix>& p) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& m : p) leaves.push_back(tape.constant(m));
    const double v = fn(tape, leaves).scalar();
    require(std::isfinite(v), ErrorKind::kNumeric, "grad_check: non-finite loss");
    return v;
  };

  std::vector<Matrix> work = params;
  double worst = 0.0;
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (Eigen::Index i = 0; i < work[k].size(); ++i) {
      const double orig = work[k](i);
      work[k](i) = orig + eps;
      const double up = eval(work);
      work[k](i) = orig - eps;
      const double down = eval(work);
      work[k](i) = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic.grads[k](i);
      const double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace msiprior::ad
