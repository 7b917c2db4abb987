#pragma once

// Reliable policy learning. A policy network maps covariates to dosages in
// (0, 1)^p and is trained against plug-in estimates mu(t, x) and f(t, x) with
// per-sample Lagrange multipliers enforcing f(pi(x), x) >= threshold.

#include "doseopt/dataset.hpp"
#include "doseopt/nn.hpp"
#include "doseopt/nuisance.hpp"
#include "doseopt/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>

namespace doseopt {

enum class PolicyMode { reliable, naive };

const char* to_string(PolicyMode m);
PolicyMode parse_policy_mode(const std::string& s);

// Linear-interpolation quantile, position (n - 1) * q over sorted values.
double compute_threshold(std::span<const double> values, double quantile);

// -(1/n) sum_i { mu_i + lambda_i (f_i - threshold) }. The multiplier term
// carries a plus sign so that descent in the policy raises f where lambda > 0
// and ascent in lambda grows the multiplier of a violated constraint.
double policy_loss(std::span<const double> mu, std::span<const double> density, std::span<const double> lambda,
                   double threshold);
double naive_policy_loss(std::span<const double> mu);
Var policy_loss(Var mu, Var density, Var lambda, double threshold);

struct PolicyTrainConfig {
  PolicyMode mode = PolicyMode::reliable;
  std::optional<double> threshold;  // explicit value; otherwise a quantile of train-set f(t_i, x_i)
  double quantile = 0.05;
  int restarts = 5;
  std::vector<double> lr_grid{1e-4, 5e-4, 1e-3, 5e-3, 1e-2};
  double lambda_lr = 0.01;
  double lambda_init_min = 1.0;
  double lambda_init_max = 5.0;
  std::size_t batch_size = 512;
  int max_epochs = 400;
  int patience = 20;
  int search_budget = 10;
  Eigen::Index width = 50;
  // Fixing both skips the random search.
  std::optional<double> fixed_lr;
  std::optional<double> fixed_lambda_init;
  // Keeps every multiplier at its initial value (for diagnostics).
  bool freeze_lambda = false;

  void validate() const;
  nlohmann::json to_json() const;
  static PolicyTrainConfig from_json(const nlohmann::json& j);
};

struct EpochLog {
  int epoch = 0;
  double batch_loss = 0.0;  // mean over the epoch's batches
  double mean_lambda = 0.0;
  double constraint_rate = 0.0;  // validation samples with f(pi(x), x) >= threshold
  double val_score = 0.0;
};

struct RestartRecord {
  unsigned long long seed = 0;
  double val_score = 0.0;  // best over epochs
  double constraint_rate = 0.0;
  double final_train_loss = 0.0;
  int epochs_run = 0;
  int best_epoch = -1;
  int skipped_steps = 0;  // batches with a non-finite loss
  ParamSet params;
  std::vector<EpochLog> log;
};

struct SearchTrial {
  double lr = 0.0;
  double lambda_init = 0.0;
  double val_score = 0.0;
};

class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(Eigen::Index d, Eigen::Index p, Eigen::Index width = 50);

  void init(ParamSet& params, Rng& rng) const;
  Var forward(Tape& tape, ParamSet& params, Var x) const;
  Matrix predict(const ParamSet& params, const Matrix& x) const;

  Eigen::Index d() const { return net_.in_dim(); }
  Eigen::Index p() const { return net_.out_dim(); }
  Eigen::Index width() const { return width_; }

 private:
  Mlp net_;
  Eigen::Index width_ = 50;
};

class PolicyModel {
 public:
  PolicyModel() = default;
  PolicyModel(PolicyNet net, PolicyMode mode, double threshold)
      : net_(std::move(net)), mode_(mode), threshold_(threshold) {}

  const PolicyNet& net() const { return net_; }
  PolicyMode mode() const { return mode_; }
  double threshold() const { return threshold_; }
  const std::vector<RestartRecord>& restarts() const { return restarts_; }
  std::vector<RestartRecord>& restarts() { return restarts_; }
  std::size_t selected() const { return selected_; }
  const std::vector<SearchTrial>& search() const { return search_; }
  double lr() const { return lr_; }
  double lambda_init() const { return lambda_init_; }

  void set_search(std::vector<SearchTrial> s, double lr, double lambda_init) {
    search_ = std::move(s);
    lr_ = lr;
    lambda_init_ = lambda_init;
  }
  // Picks the restart with the highest validation score; ties go to the lower
  // final training loss, then to the lower index.
  void select();
  void set_selected(std::size_t i);

  bool ready() const { return !restarts_.empty(); }
  Matrix predict_dosage(const Matrix& x) const;
  std::vector<double> predict_dosage(std::span<const double> x) const;
  Matrix predict_restart(std::size_t k, const Matrix& x) const;

  nlohmann::json to_json() const;
  static PolicyModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static PolicyModel load(const std::filesystem::path& path);
  // epoch, batch_loss, mean_lambda, constraint_rate (plus restart, val_score)
  void write_log_csv(const std::filesystem::path& path) const;

 private:
  PolicyNet net_;
  PolicyMode mode_ = PolicyMode::reliable;
  double threshold_ = 0.0;
  std::vector<RestartRecord> restarts_;
  std::size_t selected_ = 0;
  std::vector<SearchTrial> search_;
  double lr_ = 0.0;
  double lambda_init_ = 0.0;
};

// sum_i mu(pi(x_i), x_i) * 1{ f(pi(x_i), x_i) >= threshold }
double validation_score(const Matrix& dosages, const DoseResponse& mu, const DosageDensity& gps, const Matrix& x,
                        double threshold);
double validation_score(const Vector& mu_values, const Vector& density_values, double threshold);
double constraint_rate(const Vector& density_values, double threshold);

// Resolves the threshold: explicit value, or the quantile of f(t_i, x_i) over
// the training split.
double resolve_threshold(const PolicyTrainConfig& cfg, const DosageDensity& gps, const Dataset& ds);

// One descent-ascent run from a fresh initialization; early stopping on the
// validation score.
RestartRecord train_policy_run(const DoseResponse& mu, const DosageDensity& gps, const Dataset& ds,
                               const PolicyTrainConfig& cfg, double threshold, double lr, double lambda_init,
                               unsigned long long seed);

PolicyModel train_policy(const DoseResponse& mu, const DosageDensity& gps, const Dataset& ds,
                         const PolicyTrainConfig& cfg, unsigned long long seed);

}  // namespace doseopt
