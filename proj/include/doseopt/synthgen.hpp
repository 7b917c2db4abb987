#pragma once

// Semi-synthetic benchmark: covariates, biased dosage assignment drawn from
// per-dimension Beta distributions whose mode is the optimal dosage, and a
// closed-form dose-response surface with a joint (interaction) term.

#include "doseopt/dataset.hpp"
#include "doseopt/nuisance.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>

namespace doseopt {

struct SimConfig {
  std::size_t n = 5000;
  Eigen::Index d = 10;
  Eigen::Index p = 2;
  double alpha = 2.0;  // dosage bias
  double kappa = 1.0;  // interaction strength
  double sigma = 0.5;  // outcome noise standard deviation
  std::optional<std::filesystem::path> covariate_csv;
  unsigned long long seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& j);
};

struct BetaParams {
  double a;  // alpha + 1
  double b;  // q
};

inline constexpr double kEtaClamp = 10.0;

double logistic(double v);
// v1'x / (2 v2'x), clamped to [-10, 10]. A vanishing denominator maps to the
// clamp boundary with the numerator's sign (0 if both vanish).
double eta_ratio(std::span<const double> v1, std::span<const double> v2, std::span<const double> x);
double compute_tilde_t(double eta);
BetaParams beta_params(double alpha, double tilde_t);
double beta_pdf(const BetaParams& bp, double t);

class SimOracle {
 public:
  SimOracle() = default;
  SimOracle(SimConfig cfg, Matrix v1, Matrix v2);

  const SimConfig& config() const { return cfg_; }
  const Matrix& v1() const { return v1_; }  // p x d, unit rows
  const Matrix& v2() const { return v2_; }
  Eigen::Index p() const { return cfg_.p; }
  Eigen::Index d() const { return cfg_.d; }

  double compute_eta(std::span<const double> x, Eigen::Index j) const;
  std::vector<double> tilde_t(std::span<const double> x) const;
  double mu(std::span<const double> t, std::span<const double> x) const;
  double gps(std::span<const double> t, std::span<const double> x) const;

  Vector mu_batch(const Matrix& t, const Matrix& x) const;
  Matrix tilde_t_batch(const Matrix& x) const;

  nlohmann::json to_json() const;
  static SimOracle from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SimOracle load(const std::filesystem::path& path);

 private:
  SimConfig cfg_;
  Matrix v1_, v2_;
};

struct Simulation {
  Dataset data;
  SimOracle oracle;
};

Simulation generate(const SimConfig& cfg);

}  // namespace doseopt
