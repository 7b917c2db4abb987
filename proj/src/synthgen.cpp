#include "doseopt/synthgen.hpp"

#include "doseopt/gps_flow.hpp"
#include "doseopt/nn.hpp"

#include <boost/math/constants/constants.hpp>
#include <boost/math/distributions/beta.hpp>

#include <cmath>
#include <fstream>

namespace doseopt {

void SimConfig::validate() const {
  if (n == 0) throw std::invalid_argument("sim.n must be positive");
  if (d <= 0) throw std::invalid_argument("sim.d must be positive");
  if (p < 1) throw std::invalid_argument("sim.p must be at least 1");
  if (!(alpha >= 0.0)) throw std::invalid_argument("sim.alpha must be nonnegative");
  if (!(kappa >= 0.0)) throw std::invalid_argument("sim.kappa must be nonnegative");
  if (!(sigma > 0.0)) throw std::invalid_argument("sim.sigma must be positive");
}

nlohmann::json SimConfig::to_json() const {
  nlohmann::json j{{"n", n},         {"d", d},         {"p", p},      {"alpha", alpha},
                   {"kappa", kappa}, {"sigma", sigma}, {"seed", seed}};
  j["covariate_csv"] = covariate_csv ? nlohmann::json(covariate_csv->string()) : nlohmann::json(nullptr);
  return j;
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
  SimConfig c;
  c.n = j.at("n").get<std::size_t>();
  c.d = j.at("d").get<Eigen::Index>();
  c.p = j.at("p").get<Eigen::Index>();
  c.alpha = j.at("alpha").get<double>();
  c.kappa = j.at("kappa").get<double>();
  c.sigma = j.at("sigma").get<double>();
  c.seed = j.at("seed").get<unsigned long long>();
  if (j.contains("covariate_csv") && !j.at("covariate_csv").is_null()) {
    c.covariate_csv = j.at("covariate_csv").get<std::string>();
  }
  return c;
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double eta_ratio(std::span<const double> v1, std::span<const double> v2, std::span<const double> x) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += v1[i] * x[i];
    den += v2[i] * x[i];
  }
  if (std::abs(den) < 1e-8) {
    if (num == 0.0) return 0.0;
    return std::copysign(kEtaClamp, num) * (den < 0.0 ? -1.0 : 1.0);
  }
  return std::clamp(num / (2.0 * den), -kEtaClamp, kEtaClamp);
}

double compute_tilde_t(double eta) { return 1.0 / (20.0 + 20.0 * std::exp(-eta)) + 0.2; }

BetaParams beta_params(double alpha, double tilde_t) {
  const double a = alpha + 1.0;
  return {a, (a - 1.0) / tilde_t - a + 2.0};
}

double beta_pdf(const BetaParams& bp, double t) {
  const double tc = std::clamp(t, kBoundaryClamp, 1.0 - kBoundaryClamp);
  return boost::math::pdf(boost::math::beta_distribution<double>(bp.a, bp.b), tc);
}

SimOracle::SimOracle(SimConfig cfg, Matrix v1, Matrix v2) : cfg_(std::move(cfg)), v1_(std::move(v1)), v2_(std::move(v2)) {
  if (v1_.rows() != cfg_.p || v2_.rows() != cfg_.p || v1_.cols() != cfg_.d || v2_.cols() != cfg_.d) {
    throw DimensionError("oracle vectors must be p x d; got " + shape_str(v1_) + " and " + shape_str(v2_));
  }
}

double SimOracle::compute_eta(std::span<const double> x, Eigen::Index j) const {
  if (static_cast<Eigen::Index>(x.size()) != cfg_.d) {
    throw DimensionError("covariate vector has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(cfg_.d));
  }
  return eta_ratio(std::span<const double>(v1_.row(j).data(), x.size()),
                   std::span<const double>(v2_.row(j).data(), x.size()), x);
}

std::vector<double> SimOracle::tilde_t(std::span<const double> x) const {
  std::vector<double> out(static_cast<std::size_t>(cfg_.p));
  for (Eigen::Index j = 0; j < cfg_.p; ++j) out[j] = compute_tilde_t(compute_eta(x, j));
  return out;
}

double SimOracle::mu(std::span<const double> t, std::span<const double> x) const {
  if (static_cast<Eigen::Index>(t.size()) != cfg_.p) {
    throw DimensionError("dosage vector has " + std::to_string(t.size()) + " entries, expected " +
                         std::to_string(cfg_.p));
  }
  const double pi = boost::math::constants::pi<double>();
  double marginal = 0.0, joint = 1.0;
  for (Eigen::Index j = 0; j < cfg_.p; ++j) {
    const double eta = compute_eta(x, j);
    const double diff = t[j] - compute_tilde_t(eta);
    marginal += (logistic(eta) + 0.5) * std::cos(3.0 * pi * diff) - 0.01 * diff * diff;
    joint *= diff * diff;
  }
  return 2.0 + 2.0 / static_cast<double>(cfg_.p) * marginal - 0.1 * cfg_.kappa * joint;
}

double SimOracle::gps(std::span<const double> t, std::span<const double> x) const {
  double f = 1.0;
  for (Eigen::Index j = 0; j < cfg_.p; ++j) {
    f *= beta_pdf(beta_params(cfg_.alpha, compute_tilde_t(compute_eta(x, j))), t[j]);
  }
  return f;
}

Vector SimOracle::mu_batch(const Matrix& t, const Matrix& x) const {
  Vector out(t.rows());
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    out(i) = mu(std::span<const double>(t.row(i).data(), static_cast<std::size_t>(t.cols())),
                std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
  }
  return out;
}

Matrix SimOracle::tilde_t_batch(const Matrix& x) const {
  Matrix out(x.rows(), cfg_.p);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto tt = tilde_t(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
    for (Eigen::Index j = 0; j < cfg_.p; ++j) out(i, j) = tt[static_cast<std::size_t>(j)];
  }
  return out;
}

nlohmann::json SimOracle::to_json() const {
  auto rows = [](const Matrix& m) {
    std::vector<std::vector<double>> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).data(), m.row(i).data() + m.cols());
    return out;
  };
  return {{"config", cfg_.to_json()}, {"v1", rows(v1_)}, {"v2", rows(v2_)}};
}

SimOracle SimOracle::from_json(const nlohmann::json& j) {
  auto cfg = SimConfig::from_json(j.at("config"));
  auto mat = [&](const nlohmann::json& a) {
    const auto rows = a.get<std::vector<std::vector<double>>>();
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<Eigen::Index>(rows[i].size()) != m.cols()) throw DataError("ragged oracle vector rows");
      for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return m;
  };
  return SimOracle(cfg, mat(j.at("v1")), mat(j.at("v2")));
}

void SimOracle::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_json().dump(2) << '\n';
}

SimOracle SimOracle::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  return from_json(nlohmann::json::parse(is));
}

namespace {

Matrix unit_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).norm();
  return m;
}

}  // namespace

Simulation generate(const SimConfig& cfg) {
  cfg.validate();
  // Separate deterministic streams so that e.g. changing n leaves v1/v2 fixed.
  Rng param_rng(cfg.seed * 4 + 0);
  Rng cov_rng(cfg.seed * 4 + 1);
  Rng dose_rng(cfg.seed * 4 + 2);
  Rng noise_rng(cfg.seed * 4 + 3);

  Matrix x;
  if (cfg.covariate_csv) {
    x = read_numeric_csv(*cfg.covariate_csv);
    if (x.cols() != cfg.d) {
      throw DataError(cfg.covariate_csv->string() + " has " + std::to_string(x.cols()) + " columns, sim.d is " +
                      std::to_string(cfg.d));
    }
    if (static_cast<std::size_t>(x.rows()) < cfg.n) {
      throw DataError(cfg.covariate_csv->string() + " has " + std::to_string(x.rows()) + " rows, sim.n is " +
                      std::to_string(cfg.n));
    }
    x.conservativeResize(static_cast<Eigen::Index>(cfg.n), cfg.d);
  } else {
    x.resize(static_cast<Eigen::Index>(cfg.n), cfg.d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform01(cov_rng);
  }

  Matrix v1 = unit_rows(cfg.p, cfg.d, param_rng);
  Matrix v2 = unit_rows(cfg.p, cfg.d, param_rng);
  SimOracle oracle(cfg, std::move(v1), std::move(v2));

  Dataset ds;
  ds.x = std::move(x);
  ds.t.resize(static_cast<Eigen::Index>(cfg.n), cfg.p);
  ds.y.resize(static_cast<Eigen::Index>(cfg.n));
  for (Eigen::Index i = 0; i < ds.x.rows(); ++i) {
    const std::span<const double> xi(ds.x.row(i).data(), static_cast<std::size_t>(cfg.d));
    for (Eigen::Index j = 0; j < cfg.p; ++j) {
      const auto bp = beta_params(cfg.alpha, compute_tilde_t(oracle.compute_eta(xi, j)));
      // Inverse-CDF sampling keeps one uniform draw per dosage.
      const double u = uniform01(dose_rng);
      ds.t(i, j) = boost::math::quantile(boost::math::beta_distribution<double>(bp.a, bp.b), u);
    }
    const std::span<const double> ti(ds.t.row(i).data(), static_cast<std::size_t>(cfg.p));
    ds.y(i) = oracle.mu(ti, xi) + cfg.sigma * standard_normal(noise_rng);
  }
  ds.split = assign_splits(cfg.n, cfg.seed * 4 + 5);
  ds.validate();
  return {std::move(ds), std::move(oracle)};
}

}  // namespace doseopt
