#include "doseopt/policy.hpp"

#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace doseopt {

const char* to_string(PolicyMode m) { return m == PolicyMode::reliable ? "reliable" : "naive"; }

PolicyMode parse_policy_mode(const std::string& s) {
  if (s == "reliable") return PolicyMode::reliable;
  if (s == "naive") return PolicyMode::naive;
  throw std::invalid_argument("unknown policy mode '" + s + "'");
}

double compute_threshold(std::span<const double> values, double quantile) {
  if (values.empty()) throw DataError("cannot take a quantile of an empty set");
  if (!(quantile > 0.0 && quantile < 1.0)) throw std::invalid_argument("quantile must lie in (0, 1)");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = static_cast<double>(v.size() - 1) * quantile;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double policy_loss(std::span<const double> mu, std::span<const double> density, std::span<const double> lambda,
                   double threshold) {
  if (mu.size() != density.size() || mu.size() != lambda.size() || mu.empty()) {
    throw DimensionError("policy_loss: inputs must have equal nonzero length");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += mu[i] + lambda[i] * (density[i] - threshold);
  return -s / static_cast<double>(mu.size());
}

double naive_policy_loss(std::span<const double> mu) {
  if (mu.empty()) throw DimensionError("policy_loss: empty input");
  double s = 0.0;
  for (double m : mu) s += m;
  return -s / static_cast<double>(mu.size());
}

Var policy_loss(Var mu, Var density, Var lambda, double threshold) {
  Var penalty = mul(lambda, add_scalar(density, -threshold));
  return scale(mean(add(mu, penalty)), -1.0);
}

void PolicyTrainConfig::validate() const {
  if (threshold && !(*threshold >= 0.0)) throw std::invalid_argument("policy.threshold must be nonnegative");
  if (!(quantile > 0.0 && quantile < 1.0)) throw std::invalid_argument("policy.quantile must lie in (0, 1)");
  if (restarts < 1) throw std::invalid_argument("policy.restarts must be at least 1");
  if (lr_grid.empty()) throw std::invalid_argument("policy.lr_grid must be nonempty");
  if (!(lambda_init_min >= 0.0 && lambda_init_max >= lambda_init_min)) {
    throw std::invalid_argument("policy.lambda_init range is invalid");
  }
  if (batch_size == 0 || max_epochs < 1 || patience < 1 || search_budget < 1) {
    throw std::invalid_argument("policy batch_size, max_epochs, patience and search_budget must be positive");
  }
}

nlohmann::json PolicyTrainConfig::to_json() const {
  nlohmann::json j{{"mode", to_string(mode)},
                   {"quantile", quantile},
                   {"restarts", restarts},
                   {"lr_grid", lr_grid},
                   {"lambda_lr", lambda_lr},
                   {"lambda_init_min", lambda_init_min},
                   {"lambda_init_max", lambda_init_max},
                   {"batch_size", batch_size},
                   {"max_epochs", max_epochs},
                   {"patience", patience},
                   {"search_budget", search_budget},
                   {"width", width},
                   {"freeze_lambda", freeze_lambda}};
  j["threshold"] = threshold ? nlohmann::json(*threshold) : nlohmann::json(nullptr);
  j["fixed_lr"] = fixed_lr ? nlohmann::json(*fixed_lr) : nlohmann::json(nullptr);
  j["fixed_lambda_init"] = fixed_lambda_init ? nlohmann::json(*fixed_lambda_init) : nlohmann::json(nullptr);
  return j;
}

PolicyTrainConfig PolicyTrainConfig::from_json(const nlohmann::json& j) {
  PolicyTrainConfig c;
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  c.mode = parse_policy_mode(j.at("mode").get<std::string>());
  c.threshold = opt("threshold");
  c.quantile = j.at("quantile").get<double>();
  c.restarts = j.at("restarts").get<int>();
  c.lr_grid = j.at("lr_grid").get<std::vector<double>>();
  c.lambda_lr = j.at("lambda_lr").get<double>();
  c.lambda_init_min = j.at("lambda_init_min").get<double>();
  c.lambda_init_max = j.at("lambda_init_max").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.search_budget = j.at("search_budget").get<int>();
  c.width = j.at("width").get<Eigen::Index>();
  c.freeze_lambda = j.at("freeze_lambda").get<bool>();
  c.fixed_lr = opt("fixed_lr");
  c.fixed_lambda_init = opt("fixed_lambda_init");
  return c;
}

PolicyNet::PolicyNet(Eigen::Index d, Eigen::Index p, Eigen::Index width)
    : net_("pi", {d, width, width, p}, Activation::relu, Activation::sigmoid), width_(width) {}

void PolicyNet::init(ParamSet& params, Rng& rng) const { net_.init(params, rng); }

Var PolicyNet::forward(Tape& tape, ParamSet& params, Var x) const { return net_.forward(tape, params, x); }

Matrix PolicyNet::predict(const ParamSet& params, const Matrix& x) const {
  if (x.cols() != d()) {
    throw DimensionError("policy input " + shape_str(x) + ", expected d=" + std::to_string(d()));
  }
  Tape tape;
  ParamSet copy = params;
  return forward(tape, copy, tape.constant(x)).value();
}

void PolicyModel::select() {
  if (restarts_.empty()) throw StateError("policy has no restarts to select from");
  std::size_t best = 0;
  for (std::size_t k = 1; k < restarts_.size(); ++k) {
    const auto& a = restarts_[k];
    const auto& b = restarts_[best];
    if (a.val_score > b.val_score || (a.val_score == b.val_score && a.final_train_loss < b.final_train_loss)) {
      best = k;
    }
  }
  selected_ = best;
}

void PolicyModel::set_selected(std::size_t i) {
  if (i >= restarts_.size()) throw std::out_of_range("selected restart index out of range");
  selected_ = i;
}

Matrix PolicyModel::predict_restart(std::size_t k, const Matrix& x) const {
  if (!ready()) throw StateError("policy model is not trained");
  return net_.predict(restarts_.at(k).params, x);
}

Matrix PolicyModel::predict_dosage(const Matrix& x) const { return predict_restart(selected_, x); }

std::vector<double> PolicyModel::predict_dosage(std::span<const double> x) const {
  const Matrix xm = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const Matrix t = predict_dosage(xm);
  return {t.data(), t.data() + t.size()};
}

nlohmann::json PolicyModel::to_json() const {
  auto rs = nlohmann::json::array();
  for (const auto& r : restarts_) {
    rs.push_back({{"seed", r.seed},
                  {"val_score", r.val_score},
                  {"constraint_rate", r.constraint_rate},
                  {"final_train_loss", r.final_train_loss},
                  {"epochs_run", r.epochs_run},
                  {"best_epoch", r.best_epoch},
                  {"skipped_steps", r.skipped_steps},
                  {"params", r.params.to_json()}});
  }
  auto search = nlohmann::json::array();
  for (const auto& s : search_) search.push_back({{"lr", s.lr}, {"lambda_init", s.lambda_init}, {"val_score", s.val_score}});
  return {{"d", net_.d()},       {"p", net_.p()},
          {"width", net_.width()}, {"mode", to_string(mode_)},
          {"threshold", threshold_}, {"selected", selected_},
          {"lr", lr_},             {"lambda_init", lambda_init_},
          {"search", search},      {"restarts", rs}};
}

PolicyModel PolicyModel::from_json(const nlohmann::json& j) {
  PolicyModel m(PolicyNet(j.at("d").get<Eigen::Index>(), j.at("p").get<Eigen::Index>(), j.at("width").get<Eigen::Index>()),
                parse_policy_mode(j.at("mode").get<std::string>()), j.at("threshold").get<double>());
  for (const auto& r : j.at("restarts")) {
    RestartRecord rec;
    rec.seed = r.at("seed").get<unsigned long long>();
    rec.val_score = json_number(r.at("val_score"), -std::numeric_limits<double>::infinity());
    rec.constraint_rate = r.at("constraint_rate").get<double>();
    rec.final_train_loss = json_number(r.at("final_train_loss"), std::numeric_limits<double>::quiet_NaN());
    rec.epochs_run = r.at("epochs_run").get<int>();
    rec.best_epoch = r.at("best_epoch").get<int>();
    rec.skipped_steps = r.value("skipped_steps", 0);
    rec.params = ParamSet::from_json(r.at("params"));
    m.restarts_.push_back(std::move(rec));
  }
  std::vector<SearchTrial> search;
  for (const auto& s : j.at("search")) {
    search.push_back({s.at("lr").get<double>(), s.at("lambda_init").get<double>(),
                      json_number(s.at("val_score"), -std::numeric_limits<double>::infinity())});
  }
  m.set_search(std::move(search), j.at("lr").get<double>(), j.at("lambda_init").get<double>());
  m.set_selected(j.at("selected").get<std::size_t>());
  return m;
}

void PolicyModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_json().dump() << '\n';
}

PolicyModel PolicyModel::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  return from_json(nlohmann::json::parse(is));
}

void PolicyModel::write_log_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os.precision(17);
  os << "restart,epoch,batch_loss,mean_lambda,constraint_rate,val_score\n";
  for (std::size_t k = 0; k < restarts_.size(); ++k) {
    for (const auto& e : restarts_[k].log) {
      os << k << ',' << e.epoch << ',' << e.batch_loss << ',' << e.mean_lambda << ',' << e.constraint_rate << ','
         << e.val_score << '\n';
    }
  }
}

double validation_score(const Vector& mu_values, const Vector& density_values, double threshold) {
  if (mu_values.size() != density_values.size()) throw DimensionError("validation_score: length mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < mu_values.size(); ++i) {
    if (density_values(i) >= threshold) s += mu_values(i);
  }
  return s;
}

double validation_score(const Matrix& dosages, const DoseResponse& mu, const DosageDensity& gps, const Matrix& x,
                        double threshold) {
  return validation_score(eval_mu(mu, dosages, x), eval_density(gps, dosages, x), threshold);
}

double constraint_rate(const Vector& density_values, double threshold) {
  if (density_values.size() == 0) return 0.0;
  return static_cast<double>((density_values.array() >= threshold).count()) /
         static_cast<double>(density_values.size());
}

double resolve_threshold(const PolicyTrainConfig& cfg, const DosageDensity& gps, const Dataset& ds) {
  if (cfg.threshold) return *cfg.threshold;
  const auto train = ds.indices(Split::train);
  const Vector f = eval_density(gps, ds.t_rows(train), ds.x_rows(train));
  return compute_threshold(std::span<const double>(f.data(), static_cast<std::size_t>(f.size())), cfg.quantile);
}

namespace {

void check_shapes(const DoseResponse& mu, const DosageDensity& gps, const Dataset& ds) {
  if (mu.d() != ds.d() || mu.p() != ds.p() || gps.d() != ds.d() || gps.p() != ds.p()) {
    throw std::invalid_argument("nuisance models (mu d=" + std::to_string(mu.d()) + " p=" + std::to_string(mu.p()) +
                                ", gps d=" + std::to_string(gps.d()) + " p=" + std::to_string(gps.p()) +
                                ") do not match the dataset (d=" + std::to_string(ds.d()) +
                                " p=" + std::to_string(ds.p()) + ")");
  }
}

}  // namespace

RestartRecord train_policy_run(const DoseResponse& mu, const DosageDensity& gps, const Dataset& ds,
                               const PolicyTrainConfig& cfg, double threshold, double lr, double lambda_init,
                               unsigned long long seed) {
  cfg.validate();
  check_shapes(mu, gps, ds);
  const auto train = ds.indices(Split::train);
  const auto val = ds.indices(Split::val);
  if (train.empty() || val.empty()) throw DataError("policy training needs nonempty train and validation splits");
  const Matrix xt = ds.x_rows(train);
  const Matrix xv = ds.x_rows(val);
  const bool reliable = cfg.mode == PolicyMode::reliable;
  const double gate = reliable ? threshold : 0.0;

  const PolicyNet net(ds.d(), ds.p(), cfg.width);
  Rng rng(seed);
  ParamSet theta;
  net.init(theta, rng);
  Parameter lambda("lambda", Matrix::Constant(static_cast<Eigen::Index>(train.size()), 1, lambda_init));
  Adam theta_opt(AdamConfig{.lr = lr});
  Adam lambda_opt(AdamConfig{.lr = cfg.lambda_lr});

  RestartRecord rec;
  rec.seed = seed;
  rec.val_score = -std::numeric_limits<double>::infinity();
  rec.params = theta;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto order = shuffled_indices(train.size(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto nb = static_cast<Eigen::Index>(rows.size());
      const Matrix xb = gather_rows(xt, rows);
      Tape tape;
      theta.zero_grad();
      Var t = net.forward(tape, theta, tape.constant(xb));
      Var m = mu.mu(tape, t, xb);
      Var loss;
      Var lam;
      if (reliable) {
        Matrix lb(nb, 1);
        for (Eigen::Index i = 0; i < nb; ++i) lb(i, 0) = lambda.value(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]), 0);
        lam = tape.variable(std::move(lb));
        Var f = exp(gps.log_density(tape, t, xb));
        loss = policy_loss(m, f, lam, threshold);
      } else {
        loss = scale(mean(m), -1.0);
      }
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) {
        ++rec.skipped_steps;
        continue;
      }
      tape.backward(loss);
      theta_opt.step(theta);
      if (reliable && !cfg.freeze_lambda) {
        // Ascent on the loss == descent on its negation.
        lambda.grad.setZero();
        const Matrix& g = tape.grad(lam);
        for (Eigen::Index i = 0; i < nb; ++i) lambda.grad(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]), 0) = -g(i, 0);
        lambda_opt.step_entries(lambda, rows);
        for (const auto r : rows) {
          auto& v = lambda.value(static_cast<Eigen::Index>(r), 0);
          v = std::max(0.0, v);
        }
      }
      loss_sum += lv;
      ++batches;
    }
    const Matrix tv = net.predict(theta, xv);
    const Vector fv = eval_density(gps, tv, xv);
    const double score = validation_score(eval_mu(mu, tv, xv), fv, gate);
    const double rate = constraint_rate(fv, threshold);
    rec.log.push_back({epoch, batches > 0 ? loss_sum / batches : std::numeric_limits<double>::quiet_NaN(),
                       lambda.value.mean(), rate, score});
    rec.epochs_run = epoch + 1;
    rec.final_train_loss = rec.log.back().batch_loss;
    if (score > rec.val_score) {
      rec.val_score = score;
      rec.constraint_rate = rate;
      rec.best_epoch = epoch;
      rec.params = theta;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return rec;
}

PolicyModel train_policy(const DoseResponse& mu, const DosageDensity& gps, const Dataset& ds,
                         const PolicyTrainConfig& cfg, unsigned long long seed) {
  cfg.validate();
  check_shapes(mu, gps, ds);
  const double threshold = resolve_threshold(cfg, gps, ds);
  const bool reliable = cfg.mode == PolicyMode::reliable;

  // Hyperparameter random search over (lr, lambda_init).
  std::vector<SearchTrial> search;
  double lr = cfg.fixed_lr.value_or(cfg.lr_grid.front());
  double lambda_init = cfg.fixed_lambda_init.value_or(cfg.lambda_init_min);
  const bool need_search = !(cfg.fixed_lr && (cfg.fixed_lambda_init || !reliable));
  if (need_search) {
    Rng rng(seed * 7919ULL + 17);
    boost::random::uniform_int_distribution<std::size_t> pick(0, cfg.lr_grid.size() - 1);
    std::vector<SearchTrial> draws;
    for (int b = 0; b < cfg.search_budget; ++b) {
      SearchTrial s;
      s.lr = cfg.fixed_lr.value_or(cfg.lr_grid[pick(rng)]);
      const double u = uniform01(rng);
      s.lambda_init = cfg.fixed_lambda_init.value_or(cfg.lambda_init_min + u * (cfg.lambda_init_max - cfg.lambda_init_min));
      if (!reliable) s.lambda_init = 0.0;
      // lambda_init has no effect in naive mode: evaluate each lr once.
      const bool dup = !reliable && std::any_of(draws.begin(), draws.end(), [&](const SearchTrial& o) { return o.lr == s.lr; });
      if (!dup) draws.push_back(s);
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < draws.size(); ++b) {
      auto s = draws[b];
      s.val_score = train_policy_run(mu, gps, ds, cfg, threshold, s.lr, s.lambda_init, seed * 1000ULL + 500 + b).val_score;
      if (s.val_score > best) {
        best = s.val_score;
        lr = s.lr;
        lambda_init = s.lambda_init;
      }
      search.push_back(s);
    }
  }
  if (!reliable) lambda_init = 0.0;

  PolicyModel model(PolicyNet(ds.d(), ds.p(), cfg.width), cfg.mode, threshold);
  model.set_search(std::move(search), lr, lambda_init);
  for (int k = 0; k < cfg.restarts; ++k) {
    model.restarts().push_back(
        train_policy_run(mu, gps, ds, cfg, threshold, lr, lambda_init, seed * 1000ULL + static_cast<unsigned long long>(k)));
  }
  model.select();
  return model;
}

}  // namespace doseopt
