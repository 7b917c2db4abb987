#pragma once

// Dose-response estimators: DCNet (varying-coefficient head whose parameters
// are eta(t) = B Psi(t)) and a plain MLP baseline on (x, t).
//
// Head parameter layout inside eta (and therefore the rows of B): layer by
// layer, each layer's weights first (row-major, shape in x out), then its
// bias. Column k of B pairs with entry k of the tensor-product basis.

#include "doseopt/dataset.hpp"
#include "doseopt/nn.hpp"
#include "doseopt/nuisance.hpp"
#include "doseopt/spline_basis.hpp"
#include "doseopt/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace doseopt {

enum class MuKind { dcnet, mlp };

const char* to_string(MuKind k);
MuKind parse_mu_kind(const std::string& s);

struct DcnetConfig {
  MuKind kind = MuKind::dcnet;
  Eigen::Index d = 0;
  Eigen::Index p = 0;
  Eigen::Index width = 50;
  SplineSpec spline{};
  EarlyStopping training{800, 50, 1000, kDefaultLrGrid};
  double coefficient_noise = 0.01;

  TensorBasisSpec basis() const { return TensorBasisSpec::uniform(static_cast<std::size_t>(p), spline); }
  // Widths of the varying-coefficient head: width -> width -> width -> 1.
  std::vector<Eigen::Index> head_widths() const { return {width, width, width, 1}; }
  Eigen::Index head_param_count() const;

  nlohmann::json to_json() const;
  static DcnetConfig from_json(const nlohmann::json& j);
};

// Tape primitive: one dense layer whose weights vary with the dosage, i.e.
// row b computes a_b W(t_b) + c(t_b) with [W; c] = B[offset .. offset + in*out + out) Psi(t_b).
// a: n x in, t: n x p. Only each row's active basis columns are expanded.
Var varying_dense(Var a, Var t, const TensorBasisSpec& basis, Var coef, Eigen::Index offset, Eigen::Index in,
                  Eigen::Index out);
// Same, with the support plan of t precomputed (kt = total basis size).
Var varying_dense(Var a, Var t, const std::vector<SupportGroup>& plan, Eigen::Index kt, Var coef, Eigen::Index offset,
                  Eigen::Index in, Eigen::Index out);

// Assembles eta(t) = B Psi(t) (d_eta entries) for a single dosage vector.
Vector head_params(const Matrix& coefficients, const TensorBasisSpec& basis, std::span<const double> t);

class DoseResponseModel : public DoseResponse {
 public:
  DoseResponseModel() = default;
  explicit DoseResponseModel(DcnetConfig cfg) : cfg_(std::move(cfg)) {}

  // Fresh random parameters; the model is usable (not yet trained).
  static DoseResponseModel initialized(const DcnetConfig& cfg, unsigned long long seed);

  const DcnetConfig& config() const { return cfg_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  const TrainMeta& meta() const { return meta_; }
  bool ready() const { return params_.size() > 0; }

  Eigen::Index d() const override { return cfg_.d; }
  Eigen::Index p() const override { return cfg_.p; }
  Var mu(Tape& tape, Var t, const Matrix& x) const override;

  // Differentiable forward with params bound as trainable.
  Var forward(Tape& tape, ParamSet& params, Var t, Var x) const;

  double predict(std::span<const double> t, std::span<const double> x) const;
  Vector predict_batch(const Matrix& t, const Matrix& x) const;
  // d mu / d t for one sample, via the backward pass.
  Vector grad_t(std::span<const double> t, std::span<const double> x) const;

  void set_meta(TrainMeta m) { meta_ = std::move(m); }

  nlohmann::json to_json() const;
  static DoseResponseModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static DoseResponseModel load(const std::filesystem::path& path);

 private:
  void require_ready() const;
  Var forward_impl(Tape& tape, const ParamSet& params, bool trainable, Var t, Var x) const;

  DcnetConfig cfg_;
  ParamSet params_;
  TrainMeta meta_;
};

double factual_mse(const DoseResponseModel& model, const Dataset& ds, Split split);

// Minimizes mean squared error with early stopping and learning-rate grid
// search on validation MSE.
DoseResponseModel train_mu(const Dataset& ds, const DcnetConfig& cfg, unsigned long long seed);

}  // namespace doseopt
