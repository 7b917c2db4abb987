#pragma once

#include "doseopt/nn.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <span>
#include <vector>

namespace doseopt {

inline const std::vector<double> kDefaultLrGrid{1e-4, 5e-4, 1e-3, 5e-3, 1e-2};

// JSON stores non-finite numbers as null; reads them back as `fallback`.
double json_number(const nlohmann::json& v, double fallback);

struct EarlyStopping {
  int max_epochs = 800;
  int patience = 50;
  std::size_t batch_size = 1000;
  std::vector<double> lr_grid = kDefaultLrGrid;
};

struct LrTrial {
  double lr = 0.0;
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val = 0.0;
  bool failed = false;
};

struct TrainMeta {
  unsigned long long seed = 0;
  double lr = 0.0;
  int epochs_run = 0;
  double best_val = 0.0;
  bool failed = false;
  std::string failure;
  std::vector<LrTrial> trials;
  std::vector<double> val_curve;  // selected trial, one entry per epoch

  nlohmann::json to_json() const;
  static TrainMeta from_json(const nlohmann::json& j);
};

// Loss over a mini-batch of training-row positions, built on `tape` from
// trainable parameters.
using BatchLoss = std::function<Var(Tape&, ParamSet&, std::span<const std::size_t>)>;
// Scalar validation criterion (lower is better) for a parameter snapshot.
using ValLoss = std::function<double(const ParamSet&)>;

// Mini-batch Adam over every learning rate in the grid, early stopping on the
// validation criterion; returns the best snapshot of the best trial. Each
// trial starts from `init` and shuffles with a stream derived from `seed`.
ParamSet fit_with_lr_grid(const ParamSet& init, std::size_t n_train, const BatchLoss& batch_loss,
                          const ValLoss& val_loss, const EarlyStopping& opts, unsigned long long seed,
                          TrainMeta& meta);

}  // namespace doseopt
