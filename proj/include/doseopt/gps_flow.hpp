#pragma once

// Conditional density of dosages given covariates from a single-layer
// autoregressive flow. Each dosage coordinate is pushed through a monotone
// piecewise-quadratic spline s_j : [0, 1] -> [0, 1] whose parameters come from
// a masked network of (x, t_1..t_{j-1}). The base density is uniform on the
// unit cube, so f(t | x) = prod_j s_j'(t_j).

#include "doseopt/dataset.hpp"
#include "doseopt/nn.hpp"
#include "doseopt/nuisance.hpp"
#include "doseopt/spline_basis.hpp"
#include "doseopt/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>

namespace doseopt {

// Piecewise-quadratic monotone map on [0, 1]. Bin widths are a softmax of
// the raw widths; the derivative at the bin edges is a softplus of the raw
// vertex values, normalized so the piecewise-linear derivative integrates to
// one. The map is C1 with a strictly positive derivative.
class QuadraticSpline {
 public:
  // raw_widths: K values, raw_vertices: K + 1 values.
  QuadraticSpline(std::span<const double> raw_widths, std::span<const double> raw_vertices);
  static QuadraticSpline identity(int bins);

  int bins() const { return static_cast<int>(widths_.size()); }
  const std::vector<double>& widths() const { return widths_; }
  const std::vector<double>& vertices() const { return vertices_; }

  double forward(double u) const;
  double derivative(double u) const;
  double log_derivative(double u) const;
  double inverse(double z) const;

 private:
  int bin_of(double u) const;

  std::vector<double> widths_;
  std::vector<double> vertices_;
  std::vector<double> knots_;    // x positions of bin edges, K + 1
  std::vector<double> cum_;      // s(knots_), K + 1
};

struct SplineValue {
  double value;
  double log_derivative;
};

// Applies the spline; throws DomainError for u outside [0, 1].
SplineValue spline_transform(const QuadraticSpline& spline, double u);

// Softplus inverse at 1 so that identity parameters give unit vertices.
double identity_vertex_raw();

// Tape primitive: log s'(u) for row-wise normalized widths (n x K), vertex
// derivatives (n x K+1) and inputs u (n x 1).
Var spline_log_derivative(Var widths, Var vertices, Var u);

struct FlowConfig {
  Eigen::Index d = 0;
  Eigen::Index p = 0;
  int bins = 5;
  Eigen::Index width = 50;
  double noise_std = 0.1;
  EarlyStopping training{800, 50, 512, kDefaultLrGrid};

  Eigen::Index params_per_dim() const { return 2 * bins + 1; }

  nlohmann::json to_json() const;
  static FlowConfig from_json(const nlohmann::json& j);
};

inline constexpr double kBoundaryClamp = 1e-9;

class GpsModel : public DosageDensity {
 public:
  GpsModel() = default;
  explicit GpsModel(FlowConfig cfg) : cfg_(std::move(cfg)) {}

  // Random conditioner hidden layers, zero output layer: the flow starts as
  // the identity map (uniform density).
  static GpsModel initialized(const FlowConfig& cfg, unsigned long long seed);

  const FlowConfig& config() const { return cfg_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  const TrainMeta& meta() const { return meta_; }
  bool ready() const { return params_.size() > 0; }

  Eigen::Index d() const override { return cfg_.d; }
  Eigen::Index p() const override { return cfg_.p; }
  // t entries are clamped into [1e-9, 1 - 1e-9] before evaluation.
  Var log_density(Tape& tape, Var t, const Matrix& x) const override;
  Var forward(Tape& tape, ParamSet& params, Var t, Var x) const;

  // Raw spline parameters for dimension j (0-based) at one sample.
  QuadraticSpline conditional_spline(std::span<const double> t, std::span<const double> x, Eigen::Index j) const;

  double log_prob(std::span<const double> t, std::span<const double> x) const;
  double density(std::span<const double> t, std::span<const double> x) const;
  Vector log_prob_batch(const Matrix& t, const Matrix& x) const;
  Vector grad_log_prob_t(std::span<const double> t, std::span<const double> x) const;

  // Masks of the conditioner layers (1 = connection allowed).
  std::vector<Matrix> masks() const;

  void set_meta(TrainMeta m) { meta_ = std::move(m); }
  nlohmann::json to_json() const;
  static GpsModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static GpsModel load(const std::filesystem::path& path);

 private:
  void require_ready() const;
  Var conditioner(Tape& tape, const ParamSet& params, bool trainable, Var t, Var x) const;
  Var forward_impl(Tape& tape, const ParamSet& params, bool trainable, Var t, Var x) const;

  FlowConfig cfg_;
  ParamSet params_;
  TrainMeta meta_;
};

double mean_nll(const GpsModel& model, const Dataset& ds, Split split);

// Reflects v into [0, 1] (…, -0.1 -> 0.1, 1.2 -> 0.8, …).
double reflect_unit(double v);

// Minimizes negative log-likelihood of noise-perturbed training dosages; early
// stopping and learning-rate selection on clean validation NLL.
GpsModel train_gps(const Dataset& ds, const FlowConfig& cfg, unsigned long long seed);

}  // namespace doseopt
