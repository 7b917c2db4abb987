#include "doseopt/nuisance.hpp"

namespace doseopt {

Vector eval_mu(const DoseResponse& model, const Matrix& t, const Matrix& x) {
  Tape tape;
  return model.mu(tape, tape.constant(t), x).value().col(0);
}

Vector eval_density(const DosageDensity& model, const Matrix& t, const Matrix& x) {
  Tape tape;
  return model.log_density(tape, tape.constant(t), x).value().col(0).array().exp();
}

}  // namespace doseopt
