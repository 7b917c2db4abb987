#include "doseopt/diffcore.hpp"

#include <cmath>
#include <sstream>

namespace doseopt {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::vector<Var>(parents), std::move(backward));
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (p.tape != this) throw ContractError("node from a different tape");
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::accumulate(int id, const Matrix& contribution) {
  auto& n = nodes_[id];
  if (!n.requires_grad) return;
  if (contribution.rows() != n.value.rows() || contribution.cols() != n.value.cols()) {
    throw DimensionError("gradient shape " + shape_str(contribution) + " does not match node shape " +
                         shape_str(n.value));
  }
  if (n.grad.size() == 0) {
    n.grad = contribution;
  } else {
    n.grad += contribution;
  }
}

Matrix Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  const auto& l = nodes_[loss.id];
  if (l.value.rows() != 1 || l.value.cols() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_str(l.value));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id].grad = Matrix::Constant(1, 1, 1.0);
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      // closures only write into parents, which precede i
      n.backward(*this, n.grad);
    }
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.value()) + " and " +
                         shape_str(b.value()) + " differ");
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  const int ia = a.id, ib = b.id;
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id;
  return a.tape->record(a.value() * s, {a}, [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id;
  Matrix out = a.value().array() + s;
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: " + shape_str(a.value()) + " + " + shape_str(row.value()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id, ir = row.id;
  return a.tape->record(std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var mul_col(Var a, Var col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw DimensionError("mul_col: " + shape_str(a.value()) + " * " + shape_str(col.value()));
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  const int ia = a.id, ic = col.id;
  return a.tape->record(std::move(out), {a, col}, [ia, ic](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) {
      Matrix ga = g.array().colwise() * t.value(ic).col(0).array();
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ic)) t.accumulate(ic, g.cwiseProduct(t.value(ia)).rowwise().sum());
  });
}

Var relu(Var a) {
  const int ia = a.id;
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    Matrix mask = (t.value(ia).array() > 0.0).cast<double>();
    t.accumulate(ia, g.cwiseProduct(mask));
  });
}

Var sigmoid(Var a) {
  const int ia = a.id;
  Matrix out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  Matrix deriv = out.array() * (1.0 - out.array());
  return a.tape->record(std::move(out), {a}, [ia, deriv = std::move(deriv)](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(deriv));
  });
}

Var exp(Var a) {
  const int ia = a.id;
  Matrix out = a.value().array().exp();
  Matrix copy = out;
  return a.tape->record(std::move(out), {a}, [ia, copy = std::move(copy)](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(copy));
  });
}

Var log(Var a) {
  const int ia = a.id;
  Matrix out = a.value().array().log();
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
  });
}

Var softplus(Var a) {
  const int ia = a.id;
  Matrix out = a.value().unaryExpr([](double x) { return stable_softplus(x); });
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    Matrix d = t.value(ia).unaryExpr([](double x) { return stable_sigmoid(x); });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var square(Var a) {
  const int ia = a.id;
  Matrix out = a.value().array().square();
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
  });
}

Var clamp(Var a, double lo, double hi) {
  const int ia = a.id;
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape->record(std::move(out), {a}, [ia, lo, hi](Tape& t, const Matrix& g) {
    Matrix mask = (t.value(ia).array() >= lo && t.value(ia).array() <= hi).cast<double>();
    t.accumulate(ia, g.cwiseProduct(mask));
  });
}

Var softmax_rows(Var a) {
  const int ia = a.id;
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  Matrix s = out;
  return a.tape->record(std::move(out), {a}, [ia, s = std::move(s)](Tape& t, const Matrix& g) {
    // d/dz softmax: s * (g - <g, s>)
    Vector dot = g.cwiseProduct(s).rowwise().sum();
    Matrix ga = s.array() * (g.array().colwise() - dot.array());
    t.accumulate(ia, ga);
  });
}

Var sum(Var a) {
  const int ia = a.id;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const auto r = a.rows(), c = a.cols();
  return a.tape->record(std::move(out), {a}, [ia, r, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw DimensionError("mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  const int ia = a.id;
  Matrix out = a.value().rowwise().sum();
  const auto c = a.cols();
  return a.tape->record(std::move(out), {a}, [ia, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.replicate(1, c));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().value()) + " vs " +
                           shape_str(p.value()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id, off);
    off += p.cols();
  }
  return parts.front().tape->record(std::move(out), parts, [spans](Tape& t, const Matrix& g) {
    for (const auto& [id, start] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(start, t.value(id).cols()));
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + shape_str(a.value()));
  }
  const int ia = a.id;
  const auto r = a.rows(), c = a.cols();
  return a.tape->record(a.value().middleCols(start, count), {a}, [=](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleCols(start, count) = g;
    t.accumulate(ia, full);
  });
}

Var apply(Var a, Activation act) {
  switch (act) {
    case Activation::relu:
      return relu(a);
    case Activation::sigmoid:
      return sigmoid(a);
    case Activation::identity:
      break;
  }
  return a;
}

Var forward_dense(Var input, Var weights, Var bias, Activation act) {
  if (weights.rows() != input.cols() || bias.rows() != 1 || bias.cols() != weights.cols()) {
    throw DimensionError("forward_dense: input " + shape_str(input.value()) + ", weights " +
                         shape_str(weights.value()) + ", bias " + shape_str(bias.value()));
  }
  return apply(add_row(matmul(input, weights), bias), act);
}

}  // namespace doseopt
