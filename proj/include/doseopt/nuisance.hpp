#pragma once

#include "doseopt/diffcore.hpp"

namespace doseopt {

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Plug-in outcome model mu(t, x). Parameters are frozen: only t carries
// gradient through mu().
class DoseResponse {
 public:
  virtual ~DoseResponse() = default;
  virtual Eigen::Index d() const = 0;
  virtual Eigen::Index p() const = 0;
  // t: n x p (may be a differentiable Var), x: n x d -> n x 1
  virtual Var mu(Tape& tape, Var t, const Matrix& x) const = 0;
};

// Plug-in conditional dosage density f(t, x), evaluated in log space.
class DosageDensity {
 public:
  virtual ~DosageDensity() = default;
  virtual Eigen::Index d() const = 0;
  virtual Eigen::Index p() const = 0;
  // t: n x p, x: n x d -> n x 1 log-density
  virtual Var log_density(Tape& tape, Var t, const Matrix& x) const = 0;
};

Vector eval_mu(const DoseResponse& model, const Matrix& t, const Matrix& x);
Vector eval_density(const DosageDensity& model, const Matrix& t, const Matrix& x);

}  // namespace doseopt
