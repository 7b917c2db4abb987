#pragma once

#include "doseopt/diffcore.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace doseopt {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Clamped B-spline basis on [0, 1]. The knot vector repeats each endpoint
// degree+1 times around the interior knots, so K = interior + degree + 1.
class SplineSpec {
 public:
  SplineSpec() : SplineSpec(2, {1.0 / 3.0, 2.0 / 3.0}) {}
  SplineSpec(int degree, std::vector<double> interior_knots);

  int degree() const { return degree_; }
  const std::vector<double>& interior_knots() const { return interior_; }
  const std::vector<double>& knots() const { return knots_; }
  int basis_count() const { return static_cast<int>(interior_.size()) + degree_ + 1; }

 private:
  int degree_;
  std::vector<double> interior_;
  std::vector<double> knots_;
};

// Values psi_1(t)..psi_K(t). Throws DomainError for t outside [0, 1].
std::vector<double> eval_basis(const SplineSpec& spec, double t);
// d/dt of each basis function.
std::vector<double> eval_basis_grad(const SplineSpec& spec, double t);

struct TensorBasisSpec {
  std::vector<SplineSpec> dims;

  static TensorBasisSpec uniform(std::size_t p, const SplineSpec& spec = {});
  std::size_t p() const { return dims.size(); }
  int total_size() const;
};

// Kronecker product psi^(1)(t_1) (x) ... (x) psi^(p)(t_p); the first
// dimension's index varies slowest.
std::vector<double> tensor_product(const TensorBasisSpec& spec, std::span<const double> t);

// Tape primitive: t (n x p) -> Psi (n x prod K_i), differentiable in t.
Var tensor_basis(const TensorBasisSpec& spec, Var t);

// Rows that share the same set of tensor-basis columns with a nonzero value
// or derivative. Only those columns can contribute to Psi(t) or dPsi/dt.
struct SupportGroup {
  std::vector<std::size_t> rows;
  std::vector<Eigen::Index> cols;
  Matrix psi;                 // rows x cols
  std::vector<Matrix> dpsi;   // one per dimension, d psi / d t_j
};

// Groups the rows of t (n x p) by active columns.
std::vector<SupportGroup> plan_support(const TensorBasisSpec& spec, const Matrix& t);

}  // namespace doseopt
