#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// Every value on the tape is a (batch x feature) matrix of doubles. Nodes are
// appended in creation order, so the tape itself is a topological order and
// backward() is a single reverse sweep. Trainable leaves are bound to a
// Parameter and accumulate into Parameter::grad.

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace doseopt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

std::string shape_str(const Matrix& m);

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Lightweight handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  // Receives the gradient flowing into the node; pushes contributions to
  // parents via accumulate().
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Var constant(Matrix value);
  // Differentiable input that is not a Parameter (e.g. a dosage batch).
  Var variable(Matrix value);
  // Binds a trainable parameter; backward() adds into param.grad.
  Var param(Parameter& p);

  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, const std::vector<Var>& parents, Backward backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  // Zeros when nothing flowed into v during the last backward().
  Matrix grad(Var v) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  void accumulate(int id, const Matrix& contribution);

  // Reverse sweep from a 1x1 loss. Throws ContractError on a non-scalar.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until a contribution arrives
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  Var push(Node node);

  std::vector<Node> nodes_;
};

enum class Activation { identity, relu, sigmoid };

Activation parse_activation(const std::string& name);

// ---- primitives ----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// a (n x m) + row (1 x m), broadcast across rows
Var add_row(Var a, Var row);
// a (n x m) * col (n x 1), broadcast across columns
Var mul_col(Var a, Var col);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);  // zero gradient outside [lo, hi]
Var softmax_rows(Var a);
Var sum(Var a);            // -> 1x1
Var mean(Var a);           // -> 1x1
Var row_sum(Var a);        // -> n x 1
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var apply(Var a, Activation act);

// input (n x in) * W (in x out) + b (1 x out), then activation.
Var forward_dense(Var input, Var weights, Var bias, Activation act);

}  // namespace doseopt
