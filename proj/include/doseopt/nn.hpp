#pragma once

#include "doseopt/diffcore.hpp"

#include <nlohmann/json.hpp>

#include <boost/random/mersenne_twister.hpp>

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

namespace doseopt {

using Rng = boost::random::mt19937_64;

// Platform-independent draws (boost distributions are fully specified).
double uniform01(Rng& rng);
double standard_normal(Rng& rng);
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

// Named, stable-address parameter storage. Parameters live in a deque so that
// Var handles bound on a tape stay valid while more parameters are added.
class ParamSet {
 public:
  Parameter& add(std::string name, Matrix value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t scalar_count() const;

  // [{"name":..., "shape":[r,c], "values":[row-major...]}, ...]
  nlohmann::json to_json() const;
  static ParamSet from_json(const nlohmann::json& j);

  // Copies values (not grads) from a set with identical names and shapes.
  void assign_values(const ParamSet& other);

  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

 private:
  std::deque<Parameter> params_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
Matrix kaiming_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

struct DenseSpec {
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  Activation act = Activation::relu;
};

// Plain feed-forward network stored in a ParamSet as <prefix>.W<i>, <prefix>.b<i>.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, std::vector<Eigen::Index> widths, Activation hidden, Activation output);

  void init(ParamSet& params, Rng& rng) const;
  Var forward(Tape& tape, ParamSet& params, Var input) const;

  Eigen::Index in_dim() const { return widths_.front(); }
  Eigen::Index out_dim() const { return widths_.back(); }
  const std::vector<DenseSpec>& layers() const { return layers_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  std::vector<Eigen::Index> widths_;
  std::vector<DenseSpec> layers_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. One state per ParamSet; moments are keyed by the
// parameter's position in the set.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update to every parameter from its accumulated grad. A
  // parameter whose grad holds a non-finite entry is left untouched and
  // counted in skipped().
  void step(ParamSet& params);

  // Lazy update of selected entries of a single column vector parameter.
  // Each entry keeps its own step count so untouched entries do not drift.
  void step_entries(Parameter& p, std::span<const std::size_t> rows);

  std::int64_t steps() const { return step_; }
  std::int64_t skipped() const { return skipped_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::int64_t skipped_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  Vector entry_m_, entry_v_;
  std::vector<std::int64_t> entry_steps_;
};

}  // namespace doseopt
