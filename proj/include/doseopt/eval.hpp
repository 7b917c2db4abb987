#pragma once

// Oracle-based evaluation on the synthetic benchmark: policy value and regret,
// the method-by-mode comparison table, robustness sweeps, and surface grids.

#include "doseopt/dcnet.hpp"
#include "doseopt/gps_flow.hpp"
#include "doseopt/policy.hpp"
#include "doseopt/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace doseopt {

struct UnsupportedError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Mean oracle outcome (1/n) sum_i mu(t_i, x_i).
double policy_value(const SimOracle& oracle, const Matrix& dosages, const Matrix& x);
double policy_value(const SimOracle& oracle, const PolicyModel& policy, const Matrix& x);
// Value of the closed-form optimum t~(x), the attainable maximum.
double optimal_value(const SimOracle& oracle, const Matrix& x);
double regret(const SimOracle& oracle, const Matrix& dosages, const Matrix& x);
double regret(const SimOracle& oracle, const PolicyModel& policy, const Matrix& x);
// Regret of the logging policy: the dosages actually recorded on `split`.
double observed_regret(const SimOracle& oracle, const Dataset& ds, Split split);

struct EvalConfig {
  SimConfig sim;  // base simulation; alpha, p, d and seed vary per cell
  DcnetConfig mu;
  FlowConfig gps;
  PolicyTrainConfig policy;
  std::vector<unsigned long long> seeds{0};
  std::vector<MuKind> methods{MuKind::mlp, MuKind::dcnet};
  std::vector<PolicyMode> modes{PolicyMode::naive, PolicyMode::reliable};
  std::vector<Eigen::Index> table_dims{10, 100};
  // Sweeps vary one setting around the base (sim.alpha, sim.p, sim.d).
  MuKind sweep_method = MuKind::dcnet;
  std::vector<double> alpha_grid{0.0, 1.0, 2.0, 4.0};
  std::vector<Eigen::Index> p_grid{2, 3};
  std::vector<double> quantile_grid{0.01, 0.05, 0.1, 0.2};
  bool run_table = true;
  bool run_alpha_sweep = true;
  bool run_p_sweep = true;
  bool run_quantile_sweep = true;

  EvalConfig();
  void validate() const;
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

// Identifies one simulated dataset.
struct DataKey {
  unsigned long long seed = 0;
  double alpha = 0.0;
  Eigen::Index p = 0;
  Eigen::Index d = 0;
  auto operator<=>(const DataKey&) const = default;
};

struct CellResult {
  std::string sweep;  // table, alpha, p or quantile
  DataKey data;
  MuKind method = MuKind::dcnet;
  PolicyMode mode = PolicyMode::naive;
  double quantile = 0.0;
  double threshold = 0.0;
  bool failed = false;
  std::string failure;
  std::vector<double> restart_regrets;
  std::size_t selected = 0;
  double selected_regret = 0.0;
  double mean_regret = 0.0;
  double std_regret = 0.0;  // population std over restarts
  double range_regret = 0.0;  // max - min over restarts
  double constraint_rate = 0.0;  // test samples of the selected policy with f(pi(x), x) >= threshold
  double observed_regret = 0.0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
  static CellResult from_json(const nlohmann::json& j);
};

// Summary of the nuisance fits behind one dataset.
struct NuisanceRecord {
  DataKey data;
  std::map<std::string, double> test_mse;  // keyed by method name
  double gps_val_nll = 0.0;
  bool failed = false;
  std::string failure;
  double seconds = 0.0;

  nlohmann::json to_json() const;
  static NuisanceRecord from_json(const nlohmann::json& j);
};

struct EvalReport {
  EvalConfig config;
  std::vector<CellResult> cells;
  std::vector<NuisanceRecord> nuisances;
  double seconds = 0.0;

  std::vector<const CellResult*> sweep(const std::string& name) const;
  std::vector<std::string> failures() const;

  // Wall-clock times are kept out of to_json() so that reports of identical
  // runs are byte-identical.
  nlohmann::json to_json() const;
  nlohmann::json timing_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct TrainedNuisances {
  std::map<MuKind, DoseResponseModel> mu;
  GpsModel gps;
};

struct DataSeeds {
  unsigned long long sim, mu, gps, policy;
};
DataSeeds derive_seeds(unsigned long long benchmark_seed);

TrainedNuisances train_nuisances(const Dataset& ds, const EvalConfig& cfg, const std::vector<MuKind>& methods,
                                 const DataSeeds& seeds);

// Regret of every restart and constraint satisfaction of the selected one on
// the test split. Sweep coordinates of the result are left for the caller.
CellResult score_policy(const SimOracle& oracle, const Dataset& ds, const DosageDensity& gps, const PolicyModel& policy);

// Trains one policy configuration and scores it with score_policy.
CellResult evaluate_cell(const Simulation& sim, const DoseResponseModel& mu, const GpsModel& gps,
                         const PolicyTrainConfig& policy, unsigned long long seed);

// Runs the enabled parts of the benchmark. Datasets, nuisance fits and cells
// shared between the table and the sweeps are computed once; a failing cell is
// recorded and the run continues.
EvalReport run_benchmark(const EvalConfig& cfg, const std::function<void(const std::string&)>& progress = {});

// results.csv: every cell, one row each.
void write_results_csv(const EvalReport& report, const std::filesystem::path& path);
// Restart-level records of one sweep.
void write_sweep_csv(const EvalReport& report, const std::string& sweep, const std::filesystem::path& path);
// results.csv, one CSV per non-empty sweep, manifest.json and timing.json.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

// Evaluation without an oracle: factual fit of the nuisance models and the
// policy's constraint satisfaction on the test split.
struct FactualReport {
  std::map<std::string, double> test_mse;
  double gps_test_nll = 0.0;
  double constraint_rate = 0.0;
  std::map<std::string, double> policy_mu_hat;  // plug-in value of the selected policy per outcome model
  nlohmann::json to_json() const;
};

FactualReport factual_report(const Dataset& ds, const std::map<MuKind, const DoseResponseModel*>& mu,
                             const GpsModel& gps, const PolicyModel* policy);

struct SurfaceGrid {
  int resolution = 0;
  // One row per grid node: t_1, t_2, gps_hat, mu_oracle, mu_dcnet, mu_mlp.
  Matrix values;
  // The same six columns evaluated at t~(x).
  std::vector<double> optimum;

  static constexpr const char* kHeader = "kind,t_1,t_2,gps_hat,mu_oracle,mu_dcnet,mu_mlp";
};

// Grid nodes at i / (resolution - 1) in each dimension, t_1 slowest.
SurfaceGrid surface_grid(const SimOracle& oracle, const DoseResponseModel& dcnet, const DoseResponseModel& mlp,
                         const GpsModel& gps, std::span<const double> x, int resolution);
// Grid rows carry kind "grid"; the closing "optimum" row holds t~(x) and the
// oracle value there.
void write_surface_csv(const SurfaceGrid& grid, const std::filesystem::path& path);
SurfaceGrid read_surface_csv(const std::filesystem::path& path);

}  // namespace doseopt
