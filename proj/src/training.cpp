#include "doseopt/training.hpp"

#include "doseopt/dataset.hpp"

#include <cmath>
#include <limits>

namespace doseopt {

double json_number(const nlohmann::json& v, double fallback) { return v.is_null() ? fallback : v.get<double>(); }

namespace {

double number_or_inf(const nlohmann::json& v) { return json_number(v, std::numeric_limits<double>::infinity()); }

}  // namespace

nlohmann::json TrainMeta::to_json() const {
  auto trials_j = nlohmann::json::array();
  for (const auto& t : trials) {
    trials_j.push_back({{"lr", t.lr},
                        {"epochs_run", t.epochs_run},
                        {"best_epoch", t.best_epoch},
                        {"best_val", t.best_val},
                        {"failed", t.failed}});
  }
  return {{"seed", seed},         {"lr", lr},           {"epochs_run", epochs_run}, {"best_val", best_val},
          {"failed", failed},     {"failure", failure}, {"trials", trials_j},       {"val_curve", val_curve}};
}

TrainMeta TrainMeta::from_json(const nlohmann::json& j) {
  TrainMeta m;
  m.seed = j.at("seed").get<unsigned long long>();
  m.lr = j.at("lr").get<double>();
  m.epochs_run = j.at("epochs_run").get<int>();
  m.best_val = number_or_inf(j.at("best_val"));
  m.failed = j.at("failed").get<bool>();
  m.failure = j.at("failure").get<std::string>();
  for (const auto& t : j.at("trials")) {
    m.trials.push_back({t.at("lr").get<double>(), t.at("epochs_run").get<int>(), t.at("best_epoch").get<int>(),
                        number_or_inf(t.at("best_val")), t.at("failed").get<bool>()});
  }
  for (const auto& v : j.at("val_curve")) m.val_curve.push_back(number_or_inf(v));
  return m;
}

ParamSet fit_with_lr_grid(const ParamSet& init, std::size_t n_train, const BatchLoss& batch_loss,
                          const ValLoss& val_loss, const EarlyStopping& opts, unsigned long long seed,
                          TrainMeta& meta) {
  if (n_train == 0) throw DataError("training split is empty");
  if (opts.lr_grid.empty()) throw std::invalid_argument("learning-rate grid is empty");
  if (opts.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  meta = TrainMeta{};
  meta.seed = seed;

  ParamSet best_overall;
  double best_overall_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_curve;

  for (std::size_t trial = 0; trial < opts.lr_grid.size(); ++trial) {
    const double lr = opts.lr_grid[trial];
    ParamSet params = init;
    Adam adam(AdamConfig{.lr = lr});
    Rng rng(seed * 1000003ULL + trial);
    LrTrial rec{lr, 0, -1, std::numeric_limits<double>::infinity(), false};
    ParamSet best = params;
    std::vector<double> curve;
    int since_best = 0;
    for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
      const auto order = shuffled_indices(n_train, rng);
      for (std::size_t start = 0; start < n_train; start += opts.batch_size) {
        const auto stop = std::min(n_train, start + opts.batch_size);
        std::span<const std::size_t> batch(order.data() + start, stop - start);
        Tape tape;
        params.zero_grad();
        Var loss = batch_loss(tape, params, batch);
        if (!std::isfinite(loss.value()(0, 0))) {
          rec.failed = true;
          break;
        }
        tape.backward(loss);
        adam.step(params);
      }
      if (rec.failed) break;
      ++rec.epochs_run;
      const double v = val_loss(params);
      curve.push_back(v);
      if (!std::isfinite(v)) {
        rec.failed = true;
        break;
      }
      if (v < rec.best_val) {
        rec.best_val = v;
        rec.best_epoch = epoch;
        best = params;
        since_best = 0;
      } else if (++since_best >= opts.patience) {
        break;
      }
    }
    // A trial that diverged after a finite best still contributes that best.
    if (rec.best_epoch >= 0 && rec.best_val < best_overall_val) {
      best_overall_val = rec.best_val;
      best_overall = best;
      best_curve = curve;
      meta.lr = lr;
      meta.epochs_run = rec.epochs_run;
    }
    meta.trials.push_back(rec);
  }
  if (!std::isfinite(best_overall_val)) {
    meta.failed = true;
    meta.failure = "no learning rate produced a finite validation loss";
    meta.best_val = best_overall_val;
    return init;
  }
  meta.best_val = best_overall_val;
  meta.val_curve = std::move(best_curve);
  return best_overall;
}

}  // namespace doseopt
