#include "doseopt/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>

namespace doseopt {

double policy_value(const SimOracle& oracle, const Matrix& dosages, const Matrix& x) {
  if (dosages.rows() != x.rows() || dosages.cols() != oracle.p() || x.cols() != oracle.d()) {
    throw DimensionError("policy_value: dosages " + shape_str(dosages) + " and covariates " + shape_str(x) +
                         " do not match the oracle");
  }
  if (x.rows() == 0) throw DataError("policy_value: empty evaluation set");
  return oracle.mu_batch(dosages, x).mean();
}

double policy_value(const SimOracle& oracle, const PolicyModel& policy, const Matrix& x) {
  return policy_value(oracle, policy.predict_dosage(x), x);
}

double optimal_value(const SimOracle& oracle, const Matrix& x) {
  return policy_value(oracle, oracle.tilde_t_batch(x), x);
}

double regret(const SimOracle& oracle, const Matrix& dosages, const Matrix& x) {
  return optimal_value(oracle, x) - policy_value(oracle, dosages, x);
}

double regret(const SimOracle& oracle, const PolicyModel& policy, const Matrix& x) {
  return regret(oracle, policy.predict_dosage(x), x);
}

double observed_regret(const SimOracle& oracle, const Dataset& ds, Split split) {
  const auto idx = ds.indices(split);
  return regret(oracle, ds.t_rows(idx), ds.x_rows(idx));
}

// ---- configuration ---------------------------------------------------------

EvalConfig::EvalConfig() {
  sim.n = 5000;
  sim.d = 10;
  sim.p = 2;
  sim.alpha = 2.0;
}

void EvalConfig::validate() const {
  sim.validate();
  policy.validate();
  auto nonempty = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("eval.") + what + " must be nonempty");
  };
  nonempty(!seeds.empty(), "seeds");
  nonempty(!methods.empty(), "methods");
  nonempty(!modes.empty(), "modes");
  if (run_table) nonempty(!table_dims.empty(), "table_dims");
  if (run_alpha_sweep) nonempty(!alpha_grid.empty(), "alpha_grid");
  if (run_p_sweep) nonempty(!p_grid.empty(), "p_grid");
  if (run_quantile_sweep) nonempty(!quantile_grid.empty(), "quantile_grid");
  for (double a : alpha_grid) {
    if (!(a >= 0.0)) throw std::invalid_argument("eval.alpha_grid entries must be nonnegative");
  }
  for (auto p : p_grid) {
    if (p < 1) throw std::invalid_argument("eval.p_grid entries must be positive");
  }
  for (auto d : table_dims) {
    if (d < 1) throw std::invalid_argument("eval.table_dims entries must be positive");
  }
  for (double q : quantile_grid) {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("eval.quantile_grid entries must lie in (0, 1)");
  }
}

nlohmann::json EvalConfig::to_json() const {
  std::vector<std::string> m, md;
  for (auto k : methods) m.emplace_back(to_string(k));
  for (auto k : modes) md.emplace_back(to_string(k));
  return {{"sim", sim.to_json()},
          {"mu", mu.to_json()},
          {"gps", gps.to_json()},
          {"policy", policy.to_json()},
          {"seeds", seeds},
          {"methods", m},
          {"modes", md},
          {"table_dims", table_dims},
          {"sweep_method", to_string(sweep_method)},
          {"alpha_grid", alpha_grid},
          {"p_grid", p_grid},
          {"quantile_grid", quantile_grid},
          {"run_table", run_table},
          {"run_alpha_sweep", run_alpha_sweep},
          {"run_p_sweep", run_p_sweep},
          {"run_quantile_sweep", run_quantile_sweep}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  EvalConfig c;
  c.sim = SimConfig::from_json(j.at("sim"));
  c.mu = DcnetConfig::from_json(j.at("mu"));
  c.gps = FlowConfig::from_json(j.at("gps"));
  c.policy = PolicyTrainConfig::from_json(j.at("policy"));
  c.seeds = j.at("seeds").get<std::vector<unsigned long long>>();
  c.methods.clear();
  for (const auto& s : j.at("methods")) c.methods.push_back(parse_mu_kind(s.get<std::string>()));
  c.modes.clear();
  for (const auto& s : j.at("modes")) c.modes.push_back(parse_policy_mode(s.get<std::string>()));
  c.table_dims = j.at("table_dims").get<std::vector<Eigen::Index>>();
  c.sweep_method = parse_mu_kind(j.at("sweep_method").get<std::string>());
  c.alpha_grid = j.at("alpha_grid").get<std::vector<double>>();
  c.p_grid = j.at("p_grid").get<std::vector<Eigen::Index>>();
  c.quantile_grid = j.at("quantile_grid").get<std::vector<double>>();
  c.run_table = j.at("run_table").get<bool>();
  c.run_alpha_sweep = j.at("run_alpha_sweep").get<bool>();
  c.run_p_sweep = j.at("run_p_sweep").get<bool>();
  c.run_quantile_sweep = j.at("run_quantile_sweep").get<bool>();
  return c;
}

// ---- records ----------------------------------------------------------------

namespace {

nlohmann::json key_json(const DataKey& k) {
  return {{"seed", k.seed}, {"alpha", k.alpha}, {"p", k.p}, {"d", k.d}};
}

DataKey key_from_json(const nlohmann::json& j) {
  return {j.at("seed").get<unsigned long long>(), j.at("alpha").get<double>(), j.at("p").get<Eigen::Index>(),
          j.at("d").get<Eigen::Index>()};
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

nlohmann::json CellResult::to_json() const {
  auto regrets = nlohmann::json::array();
  for (double r : restart_regrets) regrets.push_back(number(r));
  return {{"sweep", sweep},
          {"data", key_json(data)},
          {"method", to_string(method)},
          {"mode", to_string(mode)},
          {"quantile", quantile},
          {"threshold", number(threshold)},
          {"failed", failed},
          {"failure", failure},
          {"restart_regrets", regrets},
          {"selected", selected},
          {"selected_regret", number(selected_regret)},
          {"mean_regret", number(mean_regret)},
          {"std_regret", number(std_regret)},
          {"range_regret", number(range_regret)},
          {"constraint_rate", number(constraint_rate)},
          {"observed_regret", number(observed_regret)}};
}

CellResult CellResult::from_json(const nlohmann::json& j) {
  CellResult c;
  c.sweep = j.at("sweep").get<std::string>();
  c.data = key_from_json(j.at("data"));
  c.method = parse_mu_kind(j.at("method").get<std::string>());
  c.mode = parse_policy_mode(j.at("mode").get<std::string>());
  c.quantile = j.at("quantile").get<double>();
  c.threshold = json_number(j.at("threshold"), kNaN);
  c.failed = j.at("failed").get<bool>();
  c.failure = j.at("failure").get<std::string>();
  for (const auto& r : j.at("restart_regrets")) c.restart_regrets.push_back(json_number(r, kNaN));
  c.selected = j.at("selected").get<std::size_t>();
  c.selected_regret = json_number(j.at("selected_regret"), kNaN);
  c.mean_regret = json_number(j.at("mean_regret"), kNaN);
  c.std_regret = json_number(j.at("std_regret"), kNaN);
  c.range_regret = json_number(j.at("range_regret"), kNaN);
  c.constraint_rate = json_number(j.at("constraint_rate"), kNaN);
  c.observed_regret = json_number(j.at("observed_regret"), kNaN);
  return c;
}

nlohmann::json NuisanceRecord::to_json() const {
  nlohmann::json mse = nlohmann::json::object();
  for (const auto& [k, v] : test_mse) mse[k] = number(v);
  return {{"data", key_json(data)}, {"test_mse", mse},       {"gps_val_nll", number(gps_val_nll)},
          {"failed", failed},       {"failure", failure}};
}

NuisanceRecord NuisanceRecord::from_json(const nlohmann::json& j) {
  NuisanceRecord r;
  r.data = key_from_json(j.at("data"));
  for (const auto& [k, v] : j.at("test_mse").items()) r.test_mse[k] = json_number(v, kNaN);
  r.gps_val_nll = json_number(j.at("gps_val_nll"), kNaN);
  r.failed = j.at("failed").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  return r;
}

std::vector<const CellResult*> EvalReport::sweep(const std::string& name) const {
  std::vector<const CellResult*> out;
  for (const auto& c : cells) {
    if (c.sweep == name) out.push_back(&c);
  }
  return out;
}

std::vector<std::string> EvalReport::failures() const {
  std::vector<std::string> out;
  for (const auto& n : nuisances) {
    if (n.failed) out.push_back("nuisance seed=" + std::to_string(n.data.seed) + ": " + n.failure);
  }
  for (const auto& c : cells) {
    if (c.failed) {
      out.push_back(c.sweep + " " + to_string(c.method) + "/" + to_string(c.mode) + " seed=" +
                    std::to_string(c.data.seed) + ": " + c.failure);
    }
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  auto cs = nlohmann::json::array();
  for (const auto& c : cells) cs.push_back(c.to_json());
  auto ns = nlohmann::json::array();
  for (const auto& n : nuisances) ns.push_back(n.to_json());
  return {{"config", config.to_json()}, {"cells", cs}, {"nuisances", ns}, {"failures", failures()}};
}

nlohmann::json EvalReport::timing_json() const {
  auto cs = nlohmann::json::array();
  for (const auto& c : cells) {
    cs.push_back({{"sweep", c.sweep}, {"data", key_json(c.data)}, {"method", to_string(c.method)},
                  {"mode", to_string(c.mode)}, {"quantile", c.quantile}, {"seconds", c.seconds}});
  }
  auto ns = nlohmann::json::array();
  for (const auto& n : nuisances) ns.push_back({{"data", key_json(n.data)}, {"seconds", n.seconds}});
  return {{"total_seconds", seconds}, {"cells", cs}, {"nuisances", ns}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.config = EvalConfig::from_json(j.at("config"));
  for (const auto& c : j.at("cells")) r.cells.push_back(CellResult::from_json(c));
  for (const auto& n : j.at("nuisances")) r.nuisances.push_back(NuisanceRecord::from_json(n));
  return r;
}

// ---- benchmark ----------------------------------------------------------------

DataSeeds derive_seeds(unsigned long long benchmark_seed) {
  const auto base = benchmark_seed * 1000ULL;
  return {benchmark_seed, base + 101, base + 202, base + 303};
}

TrainedNuisances train_nuisances(const Dataset& ds, const EvalConfig& cfg, const std::vector<MuKind>& methods,
                                 const DataSeeds& seeds) {
  TrainedNuisances out;
  for (auto kind : methods) {
    DcnetConfig mc = cfg.mu;
    mc.kind = kind;
    mc.d = ds.d();
    mc.p = ds.p();
    out.mu.emplace(kind, train_mu(ds, mc, seeds.mu));
  }
  FlowConfig gc = cfg.gps;
  gc.d = ds.d();
  gc.p = ds.p();
  out.gps = train_gps(ds, gc, seeds.gps);
  return out;
}

CellResult score_policy(const SimOracle& oracle, const Dataset& ds, const DosageDensity& gps, const PolicyModel& policy) {
  if (!policy.ready()) throw StateError("policy model is not trained");
  CellResult c;
  c.mode = policy.mode();
  c.threshold = policy.threshold();
  const auto test = ds.indices(Split::test);
  const Matrix xt = ds.x_rows(test);
  const double best = optimal_value(oracle, xt);
  for (std::size_t k = 0; k < policy.restarts().size(); ++k) {
    c.restart_regrets.push_back(best - policy_value(oracle, policy.predict_restart(k, xt), xt));
  }
  c.selected = policy.selected();
  c.selected_regret = c.restart_regrets[c.selected];
  const auto& r = c.restart_regrets;
  const double n = static_cast<double>(r.size());
  double sum = 0.0;
  for (double v : r) sum += v;
  c.mean_regret = sum / n;
  double ss = 0.0;
  for (double v : r) ss += (v - c.mean_regret) * (v - c.mean_regret);
  c.std_regret = std::sqrt(ss / n);
  const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  c.range_regret = *hi - *lo;
  c.constraint_rate = constraint_rate(eval_density(gps, policy.predict_dosage(xt), xt), c.threshold);
  c.observed_regret = observed_regret(oracle, ds, Split::test);
  for (double v : r) {
    if (!std::isfinite(v)) {
      c.failed = true;
      c.failure = "non-finite regret";
    }
  }
  return c;
}

CellResult evaluate_cell(const Simulation& sim, const DoseResponseModel& mu, const GpsModel& gps,
                         const PolicyTrainConfig& policy, unsigned long long seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto model = train_policy(mu, gps, sim.data, policy, seed);
  CellResult c = score_policy(sim.oracle, sim.data, gps, model);
  c.method = mu.config().kind;
  c.quantile = policy.quantile;
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return c;
}

namespace {

struct CellSpec {
  std::string sweep;
  DataKey data;
  MuKind method;
  PolicyMode mode;
  double quantile;
};

// Cells that train the same policy on the same data share one result.
using CellIdentity = std::tuple<DataKey, MuKind, PolicyMode, double>;

CellIdentity identity(const CellSpec& s) {
  // The quantile is irrelevant for naive policies and under an explicit threshold.
  return {s.data, s.method, s.mode, s.mode == PolicyMode::naive ? 0.0 : s.quantile};
}

std::vector<CellSpec> plan_cells(const EvalConfig& cfg) {
  std::vector<CellSpec> out;
  const double q0 = cfg.policy.quantile;
  for (auto seed : cfg.seeds) {
    if (cfg.run_table) {
      for (auto d : cfg.table_dims) {
        for (auto m : cfg.methods) {
          for (auto mode : cfg.modes) out.push_back({"table", {seed, cfg.sim.alpha, cfg.sim.p, d}, m, mode, q0});
        }
      }
    }
    if (cfg.run_alpha_sweep) {
      for (double a : cfg.alpha_grid) {
        for (auto mode : cfg.modes) out.push_back({"alpha", {seed, a, cfg.sim.p, cfg.sim.d}, cfg.sweep_method, mode, q0});
      }
    }
    if (cfg.run_p_sweep) {
      for (auto p : cfg.p_grid) {
        for (auto mode : cfg.modes) out.push_back({"p", {seed, cfg.sim.alpha, p, cfg.sim.d}, cfg.sweep_method, mode, q0});
      }
    }
    if (cfg.run_quantile_sweep) {
      for (double q : cfg.quantile_grid) {
        out.push_back({"quantile", {seed, cfg.sim.alpha, cfg.sim.p, cfg.sim.d}, cfg.sweep_method, PolicyMode::reliable, q});
      }
    }
  }
  return out;
}

std::string describe(const DataKey& k) {
  std::ostringstream os;
  os << "seed=" << k.seed << " alpha=" << k.alpha << " p=" << k.p << " d=" << k.d;
  return os.str();
}

}  // namespace

EvalReport run_benchmark(const EvalConfig& cfg, const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  EvalReport report;
  report.config = cfg;
  const auto specs = plan_cells(cfg);

  // Datasets in a fixed order, each with the outcome models its cells need.
  std::map<DataKey, std::set<MuKind>> needs;
  for (const auto& s : specs) needs[s.data].insert(s.method);

  std::map<CellIdentity, CellResult> done;
  for (const auto& [key, kinds] : needs) {
    const auto seeds = derive_seeds(key.seed);
    SimConfig sc = cfg.sim;
    sc.alpha = key.alpha;
    sc.p = key.p;
    sc.d = key.d;
    sc.seed = seeds.sim;

    NuisanceRecord rec;
    rec.data = key;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<Simulation> sim;
    std::optional<TrainedNuisances> nuis;
    say("dataset " + describe(key) + ": fitting nuisance models");
    try {
      sim = generate(sc);
      nuis = train_nuisances(sim->data, cfg, std::vector<MuKind>(kinds.begin(), kinds.end()), seeds);
      for (const auto& [kind, model] : nuis->mu) rec.test_mse[to_string(kind)] = factual_mse(model, sim->data, Split::test);
      rec.gps_val_nll = nuis->gps.meta().best_val;
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.failure = e.what();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.nuisances.push_back(rec);

    for (const auto& s : specs) {
      if (!(s.data == key)) continue;
      const auto id = identity(s);
      if (!done.contains(id)) {
        CellResult c;
        if (rec.failed) {
          c.failed = true;
          c.failure = "nuisance models unavailable: " + rec.failure;
        } else {
          PolicyTrainConfig pc = cfg.policy;
          pc.mode = s.mode;
          pc.quantile = s.quantile;
          say("  " + std::string(to_string(s.method)) + "/" + to_string(s.mode) + " quantile=" + std::to_string(s.quantile));
          try {
            c = evaluate_cell(*sim, nuis->mu.at(s.method), nuis->gps, pc, seeds.policy);
          } catch (const std::exception& e) {
            c.failed = true;
            c.failure = e.what();
          }
        }
        c.data = key;
        c.method = s.method;
        c.mode = s.mode;
        c.quantile = s.quantile;
        done.emplace(id, std::move(c));
      }
      CellResult c = done.at(id);
      c.sweep = s.sweep;
      c.quantile = s.quantile;
      report.cells.push_back(std::move(c));
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---- report files -------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os.precision(17);
  return os;
}

void write_cell_row(std::ostream& os, const CellResult& c) {
  os << c.sweep << ',' << c.data.seed << ',' << to_string(c.method) << ',' << to_string(c.mode) << ',' << c.data.alpha
     << ',' << c.data.p << ',' << c.data.d << ',' << c.quantile << ',' << c.threshold << ',' << c.selected_regret << ','
     << c.mean_regret << ',' << c.std_regret << ',' << c.range_regret << ',' << c.constraint_rate << ','
     << c.observed_regret << ',' << (c.failed ? 1 : 0);
}

constexpr const char* kCellHeader =
    "sweep,seed,method,mode,alpha,p,d,quantile,threshold,selected_regret,mean_regret,std_regret,range_regret,"
    "constraint_rate,observed_regret,failed";

}  // namespace

void write_results_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << kCellHeader << '\n';
  for (const auto& c : report.cells) {
    write_cell_row(os, c);
    os << '\n';
  }
}

void write_sweep_csv(const EvalReport& report, const std::string& sweep, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << kCellHeader << ",restart,regret,is_selected\n";
  for (const auto* c : report.sweep(sweep)) {
    for (std::size_t k = 0; k < c->restart_regrets.size(); ++k) {
      write_cell_row(os, *c);
      os << ',' << k << ',' << c->restart_regrets[k] << ',' << (k == c->selected ? 1 : 0) << '\n';
    }
  }
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_results_csv(report, dir / "results.csv");
  for (const char* s : {"table", "alpha", "p", "quantile"}) {
    if (!report.sweep(s).empty()) write_sweep_csv(report, s, dir / ("sweep_" + std::string(s) + ".csv"));
  }
  open_out(dir / "manifest.json") << report.to_json().dump(2) << '\n';
  open_out(dir / "timing.json") << report.timing_json().dump(2) << '\n';
}

// ---- oracle-free evaluation -----------------------------------------------------

nlohmann::json FactualReport::to_json() const {
  nlohmann::json mse = nlohmann::json::object(), val = nlohmann::json::object();
  for (const auto& [k, v] : test_mse) mse[k] = number(v);
  for (const auto& [k, v] : policy_mu_hat) val[k] = number(v);
  return {{"test_mse", mse}, {"gps_test_nll", number(gps_test_nll)}, {"constraint_rate", number(constraint_rate)},
          {"policy_mu_hat", val}};
}

FactualReport factual_report(const Dataset& ds, const std::map<MuKind, const DoseResponseModel*>& mu,
                             const GpsModel& gps, const PolicyModel* policy) {
  FactualReport r;
  for (const auto& [kind, model] : mu) r.test_mse[to_string(kind)] = factual_mse(*model, ds, Split::test);
  r.gps_test_nll = mean_nll(gps, ds, Split::test);
  if (policy) {
    const auto test = ds.indices(Split::test);
    const Matrix xt = ds.x_rows(test);
    const Matrix tp = policy->predict_dosage(xt);
    r.constraint_rate = constraint_rate(eval_density(gps, tp, xt), policy->threshold());
    for (const auto& [kind, model] : mu) r.policy_mu_hat[to_string(kind)] = eval_mu(*model, tp, xt).mean();
  } else {
    r.constraint_rate = kNaN;
  }
  return r;
}

// ---- surfaces ----------------------------------------------------------------------

SurfaceGrid surface_grid(const SimOracle& oracle, const DoseResponseModel& dcnet, const DoseResponseModel& mlp,
                         const GpsModel& gps, std::span<const double> x, int resolution) {
  if (oracle.p() != 2) throw UnsupportedError("surface grids need p = 2, got p = " + std::to_string(oracle.p()));
  if (resolution < 2) throw std::invalid_argument("surface resolution must be at least 2");
  if (static_cast<Eigen::Index>(x.size()) != oracle.d()) {
    throw DimensionError("surface_grid: covariate vector of length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(oracle.d()));
  }
  const auto n = static_cast<Eigen::Index>(resolution) * resolution;
  Matrix t(n + 1, 2);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      t(i * resolution + j, 0) = static_cast<double>(i) / (resolution - 1);
      t(i * resolution + j, 1) = static_cast<double>(j) / (resolution - 1);
    }
  }
  const auto opt = oracle.tilde_t(x);
  t(n, 0) = opt[0];
  t(n, 1) = opt[1];
  const Matrix xs = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size())).replicate(n + 1, 1);

  Matrix all(n + 1, 6);
  all.col(0) = t.col(0);
  all.col(1) = t.col(1);
  all.col(2) = gps.log_prob_batch(t, xs).array().exp();
  all.col(3) = oracle.mu_batch(t, xs);
  all.col(4) = dcnet.predict_batch(t, xs);
  all.col(5) = mlp.predict_batch(t, xs);

  SurfaceGrid g;
  g.resolution = resolution;
  g.values = all.topRows(n);
  g.optimum.assign(all.row(n).data(), all.row(n).data() + 6);
  return g;
}

void write_surface_csv(const SurfaceGrid& grid, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << SurfaceGrid::kHeader << '\n';
  auto row = [&](const char* kind, const double* v) {
    os << kind;
    for (int k = 0; k < 6; ++k) os << ',' << v[k];
    os << '\n';
  };
  for (Eigen::Index i = 0; i < grid.values.rows(); ++i) row("grid", grid.values.row(i).data());
  row("optimum", grid.optimum.data());
}

SurfaceGrid read_surface_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != SurfaceGrid::kHeader) throw DataError(path.string() + ": unexpected header");
  std::vector<std::vector<double>> rows;
  std::vector<double> optimum;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string kind, cell;
    std::getline(ss, kind, ',');
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 6) throw DataError(path.string() + ": expected 7 fields per row");
    if (kind == "grid") {
      rows.push_back(std::move(v));
    } else if (kind == "optimum") {
      optimum = std::move(v);
    } else {
      throw DataError(path.string() + ": unknown row kind '" + kind + "'");
    }
  }
  const auto res = static_cast<int>(std::lround(std::sqrt(static_cast<double>(rows.size()))));
  if (optimum.empty() || res < 2 || static_cast<std::size_t>(res) * res != rows.size()) {
    throw DataError(path.string() + ": not a square grid with an optimum row");
  }
  SurfaceGrid g;
  g.resolution = res;
  g.values.resize(static_cast<Eigen::Index>(rows.size()), 6);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int k = 0; k < 6; ++k) g.values(static_cast<Eigen::Index>(i), k) = rows[i][k];
  }
  g.optimum = std::move(optimum);
  return g;
}

}  // namespace doseopt
