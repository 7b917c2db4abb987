#include "doseopt/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <set>

namespace doseopt {

namespace artifact {
std::string mu(MuKind kind) { return std::string("mu_") + to_string(kind) + ".json"; }
std::string mu_log(MuKind kind) { return std::string("mu_") + to_string(kind) + "_log.csv"; }
std::string policy(MuKind kind, PolicyMode mode) {
  return std::string("policy_") + to_string(kind) + "_" + to_string(mode) + ".json";
}
std::string policy_log(MuKind kind, PolicyMode mode) {
  return std::string("policy_") + to_string(kind) + "_" + to_string(mode) + "_log.csv";
}
}  // namespace artifact

// ---- configuration --------------------------------------------------------------

namespace {

using json = nlohmann::json;

const char* verbosity_name(Verbosity v) {
  switch (v) {
    case Verbosity::quiet: return "quiet";
    case Verbosity::debug: return "debug";
    default: return "info";
  }
}

Verbosity parse_verbosity(const std::string& s) {
  if (s == "quiet") return Verbosity::quiet;
  if (s == "info") return Verbosity::info;
  if (s == "debug") return Verbosity::debug;
  throw ConfigError("config key 'verbosity': expected quiet, info or debug, got '" + s + "'");
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

void check_type(const json& def, const json& v, const std::string& key) {
  auto fail = [&](const char* expected) {
    throw ConfigError("config key '" + key + "': expected " + expected + ", got " + v.dump());
  };
  if (def.is_null()) return;  // optional value; checked when parsed
  if (def.is_boolean() && !v.is_boolean()) fail("a boolean");
  if (def.is_string() && !v.is_string()) fail("a string");
  if (def.is_number_unsigned() && !(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0))) {
    fail("a nonnegative integer");
  }
  if (def.is_number_integer() && !v.is_number_integer()) fail("an integer");
  if (def.is_number() && !v.is_number()) fail("a number");
  if (def.is_array()) {
    if (!v.is_array()) fail("an array");
    if (!def.empty()) {
      for (std::size_t i = 0; i < v.size(); ++i) check_type(def[0], v[i], key + "[" + std::to_string(i) + "]");
    }
  }
}

// Copies user values over the defaults of one section, rejecting unknown keys.
json overlay(const json& defaults, const json& user, const std::string& section) {
  if (!user.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  json out = defaults;
  for (const auto& [k, v] : user.items()) {
    const std::string key = section + "." + k;
    if (!defaults.contains(k)) throw ConfigError("unknown config key '" + key + "'");
    check_type(defaults.at(k), v, key);
    out[k] = v;
  }
  return out;
}

template <class F>
auto parse_section(const std::string& section, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("invalid config section '" + section + "': " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  sim.n = 5000;
  sim.d = 10;
  sim.p = 2;
  sim.alpha = 2.0;
  eval.seeds = {seed};
}

json RunConfig::to_json() const {
  json pol = policy.to_json();
  pol["outcome_model"] = doseopt::to_string(policy_outcome_model);
  json ev = without(eval.to_json(), {"sim", "mu", "gps", "policy"});
  ev["surface_resolution"] = surface_resolution;
  ev["surface_sample"] = surface_sample;
  return {{"seed", seed},
          {"out", out.string()},
          {"verbosity", verbosity_name(verbosity)},
          {"sim", without(sim.to_json(), {"seed"})},
          {"dcnet", without(dcnet.to_json(), {"d", "p"})},
          {"gps", without(gps.to_json(), {"d", "p"})},
          {"policy", pol},
          {"eval", ev}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  const RunConfig base;
  json defaults = base.to_json();
  defaults["eval"]["seeds"] = nullptr;  // follows the global seed unless given

  for (const auto& [k, v] : j.items()) {
    if (!defaults.contains(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  RunConfig c;
  auto top = [&](const char* key) -> json {
    if (!j.contains(key)) return defaults.at(key);
    check_type(defaults.at(key), j.at(key), key);
    return j.at(key);
  };
  c.seed = top("seed").get<unsigned long long>();
  c.out = top("out").get<std::string>();
  c.verbosity = parse_verbosity(top("verbosity").get<std::string>());

  auto section = [&](const char* key) {
    return j.contains(key) ? overlay(defaults.at(key), j.at(key), key) : defaults.at(key);
  };
  const json simj = section("sim");
  c.sim = parse_section("sim", [&] {
    json s = simj;
    s["seed"] = c.seed;
    return SimConfig::from_json(s);
  });
  c.dcnet = parse_section("dcnet", [&] {
    json s = section("dcnet");
    s["d"] = c.sim.d;
    s["p"] = c.sim.p;
    return DcnetConfig::from_json(s);
  });
  c.gps = parse_section("gps", [&] {
    json s = section("gps");
    s["d"] = c.sim.d;
    s["p"] = c.sim.p;
    return FlowConfig::from_json(s);
  });
  const json polj = section("policy");
  c.policy = parse_section("policy", [&] { return PolicyTrainConfig::from_json(without(polj, {"outcome_model"})); });
  c.policy_outcome_model = parse_section("policy", [&] { return parse_mu_kind(polj.at("outcome_model").get<std::string>()); });

  const json evj = section("eval");
  c.eval = parse_section("eval", [&] {
    json e = without(evj, {"surface_resolution", "surface_sample"});
    c.eval_seeds_follow_seed = e.at("seeds").is_null();
    if (c.eval_seeds_follow_seed) e["seeds"] = json::array({c.seed});
    e["sim"] = c.sim.to_json();
    e["mu"] = c.dcnet.to_json();
    e["gps"] = c.gps.to_json();
    e["policy"] = c.policy.to_json();
    return EvalConfig::from_json(e);
  });
  c.surface_resolution = evj.at("surface_resolution").get<int>();
  c.surface_sample = evj.at("surface_sample").get<std::size_t>();

  parse_section("sim", [&] { c.sim.validate(); return 0; });
  parse_section("policy", [&] { c.policy.validate(); return 0; });
  parse_section("eval", [&] { c.eval.validate(); return 0; });
  if (c.surface_resolution < 2) throw ConfigError("config key 'eval.surface_resolution' must be at least 2");
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---- commands -----------------------------------------------------------------------

namespace {

struct Context {
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;

  void info(const std::string& msg) const {
    if (cfg.verbosity != Verbosity::quiet) out << msg << '\n';
  }
  void debug(const std::string& msg) const {
    if (cfg.verbosity == Verbosity::debug) out << msg << '\n';
  }
  void warn(const std::string& msg) const { err << "warning: " << msg << '\n'; }

  std::filesystem::path path(const std::string& name) const { return cfg.out / name; }

  std::filesystem::path require(const std::string& name, const std::string& stage) const {
    const auto p = path(name);
    if (!std::filesystem::exists(p)) {
      throw MissingArtifact("missing " + p.string() + "; run the '" + stage + "' stage first");
    }
    return p;
  }
  void wrote(const std::filesystem::path& p) const { info("wrote " + p.string()); }
};

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  os << text;
}

void write_val_curve(const std::filesystem::path& p, const TrainMeta& meta) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  os.precision(17);
  os << "epoch,val_loss\n";
  for (std::size_t e = 0; e < meta.val_curve.size(); ++e) os << e << ',' << meta.val_curve[e] << '\n';
}

Dataset load_dataset(const Context& c) { return read_dataset_csv(c.require(artifact::kDataset, "generate")); }

void cmd_generate(const Context& c) {
  SimConfig sc = c.cfg.sim;
  sc.seed = derive_seeds(c.cfg.seed).sim;
  const auto sim = generate(sc);
  write_dataset_csv(sim.data, c.path(artifact::kDataset));
  sim.oracle.save(c.path(artifact::kOracle));
  c.wrote(c.path(artifact::kDataset));
  c.wrote(c.path(artifact::kOracle));
  c.info("generated n=" + std::to_string(sim.data.n()) + " d=" + std::to_string(sim.data.d()) +
         " p=" + std::to_string(sim.data.p()));
}

void train_mu_stage(const Context& c) {
  const auto ds = load_dataset(c);
  DcnetConfig mc = c.cfg.dcnet;
  mc.d = ds.d();
  mc.p = ds.p();
  const auto model = train_mu(ds, mc, derive_seeds(c.cfg.seed).mu);
  if (model.meta().failed) throw NumericalFailure("outcome model training failed: " + model.meta().failure);
  model.save(c.path(artifact::mu(mc.kind)));
  write_val_curve(c.path(artifact::mu_log(mc.kind)), model.meta());
  c.wrote(c.path(artifact::mu(mc.kind)));
  c.info(std::string(to_string(mc.kind)) + " lr=" + std::to_string(model.meta().lr) +
         " test_mse=" + std::to_string(factual_mse(model, ds, Split::test)));
}

void train_gps_stage(const Context& c) {
  const auto ds = load_dataset(c);
  FlowConfig fc = c.cfg.gps;
  fc.d = ds.d();
  fc.p = ds.p();
  const auto model = train_gps(ds, fc, derive_seeds(c.cfg.seed).gps);
  if (model.meta().failed) throw NumericalFailure("density model training failed: " + model.meta().failure);
  model.save(c.path(artifact::kGps));
  write_val_curve(c.path(artifact::kGpsLog), model.meta());
  c.wrote(c.path(artifact::kGps));
  c.info("gps lr=" + std::to_string(model.meta().lr) + " test_nll=" + std::to_string(mean_nll(model, ds, Split::test)));
}

void train_policy_stage(const Context& c) {
  const auto ds = load_dataset(c);
  const auto kind = c.cfg.policy_outcome_model;
  const auto mu = DoseResponseModel::load(c.require(artifact::mu(kind), "train --stage mu"));
  const auto gps = GpsModel::load(c.require(artifact::kGps, "train --stage gps"));
  const auto model = train_policy(mu, gps, ds, c.cfg.policy, derive_seeds(c.cfg.seed).policy);
  int skipped = 0;
  bool any_finite = false;
  for (const auto& r : model.restarts()) {
    skipped += r.skipped_steps;
    any_finite = any_finite || std::isfinite(r.val_score);
  }
  if (!any_finite) throw NumericalFailure("no policy restart reached a finite validation score");
  if (skipped > 0) c.warn(std::to_string(skipped) + " policy training steps skipped on a non-finite loss");
  const auto mode = c.cfg.policy.mode;
  model.save(c.path(artifact::policy(kind, mode)));
  model.write_log_csv(c.path(artifact::policy_log(kind, mode)));
  c.wrote(c.path(artifact::policy(kind, mode)));
  const auto& sel = model.restarts()[model.selected()];
  c.info(std::string(to_string(kind)) + "/" + to_string(mode) + " threshold=" + std::to_string(model.threshold()) +
         " selected=" + std::to_string(model.selected()) + " val_score=" + std::to_string(sel.val_score) +
         " constraint_rate=" + std::to_string(sel.constraint_rate));
}

void cmd_evaluate(const Context& c) {
  const auto ds = load_dataset(c);
  const auto gps = GpsModel::load(c.require(artifact::kGps, "train --stage gps"));
  std::map<MuKind, DoseResponseModel> mus;
  for (auto kind : {MuKind::mlp, MuKind::dcnet}) {
    if (std::filesystem::exists(c.path(artifact::mu(kind)))) mus.emplace(kind, DoseResponseModel::load(c.path(artifact::mu(kind))));
  }
  if (mus.empty()) throw MissingArtifact("no outcome model in " + c.cfg.out.string() + "; run the 'train --stage mu' stage first");
  std::map<MuKind, const DoseResponseModel*> mu_ptrs;
  for (const auto& [k, m] : mus) mu_ptrs[k] = &m;

  std::optional<SimOracle> oracle;
  if (std::filesystem::exists(c.path(artifact::kOracle))) {
    oracle = SimOracle::load(c.path(artifact::kOracle));
  } else {
    c.warn("no oracle metadata (" + c.path(artifact::kOracle).string() + "); reporting factual metrics only");
  }

  json report{{"oracle", oracle.has_value()}, {"factual", factual_report(ds, mu_ptrs, gps, nullptr).to_json()}};
  json policies = json::array();
  for (auto kind : {MuKind::mlp, MuKind::dcnet}) {
    for (auto mode : {PolicyMode::naive, PolicyMode::reliable}) {
      const auto p = c.path(artifact::policy(kind, mode));
      if (!std::filesystem::exists(p)) continue;
      const auto policy = PolicyModel::load(p);
      json entry{{"file", p.filename().string()},
                 {"method", to_string(kind)},
                 {"mode", to_string(mode)},
                 {"factual", factual_report(ds, mu_ptrs, gps, &policy).to_json()}};
      if (oracle) {
        CellResult r = score_policy(*oracle, ds, gps, policy);
        r.method = kind;
        entry["selected_regret"] = r.selected_regret;
        entry["mean_regret"] = r.mean_regret;
        entry["std_regret"] = r.std_regret;
        entry["range_regret"] = r.range_regret;
        entry["restart_regrets"] = r.restart_regrets;
        entry["constraint_rate"] = r.constraint_rate;
        c.info(std::string(to_string(kind)) + "/" + to_string(mode) + " selected_regret=" +
               std::to_string(r.selected_regret) + " constraint_rate=" + std::to_string(r.constraint_rate));
      }
      policies.push_back(entry);
    }
  }
  report["policies"] = policies;
  if (oracle) {
    report["observed_regret"] = observed_regret(*oracle, ds, Split::test);
    const auto test = ds.indices(Split::test);
    report["optimal_value"] = optimal_value(*oracle, ds.x_rows(test));
  }
  write_text(c.path(artifact::kEvaluation), report.dump(2) + "\n");
  c.wrote(c.path(artifact::kEvaluation));
}

void cmd_sweep(const Context& c) {
  const auto report = run_benchmark(c.cfg.eval, [&](const std::string& m) { c.debug(m); });
  const auto dir = c.path("report");
  write_report(report, dir);
  c.wrote(dir / "results.csv");
  c.wrote(dir / "manifest.json");
  const auto failures = report.failures();
  for (const auto& f : failures) c.warn("cell failed: " + f);
  c.info(std::to_string(report.cells.size()) + " cells, " + std::to_string(failures.size()) + " failures");
}

void cmd_surface(const Context& c) {
  const auto ds = load_dataset(c);
  const auto oracle = SimOracle::load(c.require(artifact::kOracle, "generate"));
  const auto dcnet = DoseResponseModel::load(c.require(artifact::mu(MuKind::dcnet), "train --stage mu"));
  const auto mlp = DoseResponseModel::load(c.require(artifact::mu(MuKind::mlp), "train --stage mu"));
  const auto gps = GpsModel::load(c.require(artifact::kGps, "train --stage gps"));
  const auto test = ds.indices(Split::test);
  if (c.cfg.surface_sample >= test.size()) {
    throw ConfigError("config key 'eval.surface_sample' exceeds the test split size " + std::to_string(test.size()));
  }
  const auto row = test[c.cfg.surface_sample];
  const std::vector<double> x(ds.x.row(static_cast<Eigen::Index>(row)).data(),
                              ds.x.row(static_cast<Eigen::Index>(row)).data() + ds.d());
  const auto grid = surface_grid(oracle, dcnet, mlp, gps, x, c.cfg.surface_resolution);
  write_surface_csv(grid, c.path(artifact::kSurface));
  c.wrote(c.path(artifact::kSurface));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reliable dosage-combination policy learning"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<unsigned long long> seed;
  std::optional<std::string> out_dir;
  std::optional<double> quantile;
  std::string stage;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "global seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory (overrides config and " + std::string(kOutDirEnv) + ")");
    sub->add_option("--quantile", quantile, "train-set density quantile used as the reliability threshold");
  };
  auto* gen = app.add_subcommand("generate", "simulate a dataset and its oracle");
  auto* train = app.add_subcommand("train", "fit one pipeline stage");
  train->add_option("--stage", stage, "mu, gps or policy")->required()->check(CLI::IsMember({"mu", "gps", "policy"}));
  auto* evaluate = app.add_subcommand("evaluate", "score trained policies");
  auto* sweep = app.add_subcommand("sweep", "run the benchmark table and robustness sweeps");
  auto* surface = app.add_subcommand("surface", "tabulate outcome and density surfaces for one sample");
  for (auto* s : {gen, train, evaluate, sweep, surface}) common(s);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = RunConfig::load(config_path);
    if (const char* env = std::getenv(kOutDirEnv); env && *env) cfg.out = env;
    if (out_dir) cfg.out = *out_dir;
    if (seed) {
      cfg.seed = *seed;
      cfg.sim.seed = *seed;
      cfg.eval.sim.seed = *seed;
      if (cfg.eval_seeds_follow_seed) cfg.eval.seeds = {*seed};
    }
    if (quantile) {
      cfg.policy.quantile = *quantile;
      cfg.policy.threshold.reset();
      cfg.eval.policy = cfg.policy;
      try {
        cfg.policy.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("--quantile: ") + e.what());
      }
    }
    std::filesystem::create_directories(cfg.out);
    Context ctx{cfg, out, err};
    write_text(ctx.path(artifact::kResolvedConfig), cfg.to_json().dump(2) + "\n");

    if (gen->parsed()) cmd_generate(ctx);
    if (train->parsed()) {
      if (stage == "mu") train_mu_stage(ctx);
      if (stage == "gps") train_gps_stage(ctx);
      if (stage == "policy") train_policy_stage(ctx);
    }
    if (evaluate->parsed()) cmd_evaluate(ctx);
    if (sweep->parsed()) cmd_sweep(ctx);
    if (surface->parsed()) cmd_surface(ctx);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UnsupportedError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MissingArtifact& e) {
    err << "missing dependency: " << e.what() << '\n';
    return kExitMissing;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace doseopt
