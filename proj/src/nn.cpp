#include "doseopt/nn.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <cmath>
#include <numeric>

namespace doseopt {

double uniform01(Rng& rng) {
  boost::random::uniform_01<double> u;
  return u(rng);
}

double standard_normal(Rng& rng) {
  boost::random::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

Parameter& ParamSet::add(std::string name, Matrix value) {
  for (const auto& p : params_) {
    if (p.name == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
  }
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

Parameter& ParamSet::at(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

const Parameter& ParamSet::at(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

nlohmann::json ParamSet::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& p : params_) {
    std::vector<double> values(p.value.data(), p.value.data() + p.value.size());
    arr.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"values", values}});
  }
  return arr;
}

ParamSet ParamSet::from_json(const nlohmann::json& j) {
  ParamSet set;
  for (const auto& item : j) {
    const auto rows = item.at("shape").at(0).get<Eigen::Index>();
    const auto cols = item.at("shape").at(1).get<Eigen::Index>();
    const auto values = item.at("values").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
      throw DimensionError("parameter '" + item.at("name").get<std::string>() + "' has " +
                           std::to_string(values.size()) + " values for shape " + std::to_string(rows) +
                           "x" + std::to_string(cols));
    }
    Matrix m = Eigen::Map<const Matrix>(values.data(), rows, cols);
    set.add(item.at("name").get<std::string>(), std::move(m));
  }
  return set;
}

void ParamSet::assign_values(const ParamSet& other) {
  if (other.size() != size()) throw DimensionError("assign_values: parameter count mismatch");
  auto it = other.params_.begin();
  for (auto& p : params_) {
    if (p.name != it->name || p.value.rows() != it->value.rows() || p.value.cols() != it->value.cols()) {
      throw DimensionError("assign_values: '" + p.name + "' does not match '" + it->name + "'");
    }
    p.value = it->value;
    ++it;
  }
}

ParamSet::ParamSet(const ParamSet& other) : params_(other.params_) {}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  params_ = other.params_;
  return *this;
}

Matrix kaiming_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  return w;
}

Mlp::Mlp(std::string prefix, std::vector<Eigen::Index> widths, Activation hidden, Activation output)
    : prefix_(std::move(prefix)), widths_(std::move(widths)) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers_.push_back({widths_[i], widths_[i + 1], i + 2 == widths_.size() ? output : hidden});
  }
}

void Mlp::init(ParamSet& params, Rng& rng) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    params.add(prefix_ + ".W" + std::to_string(i), kaiming_uniform(layers_[i].in, layers_[i].out, rng));
    params.add(prefix_ + ".b" + std::to_string(i), Matrix::Zero(1, layers_[i].out));
  }
}

Var Mlp::forward(Tape& tape, ParamSet& params, Var input) const {
  Var h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Var w = tape.param(params.at(prefix_ + ".W" + std::to_string(i)));
    Var b = tape.param(params.at(prefix_ + ".b" + std::to_string(i)));
    h = forward_dense(h, w, b, layers_[i].act);
  }
  return h;
}

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

void Adam::step(ParamSet& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (m_.size() != params.size()) throw DimensionError("Adam state does not match parameter set");
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  std::size_t i = 0;
  for (auto& p : params) {
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw DimensionError("Adam moments for '" + p.name + "' have shape " + shape_str(m));
    }
    if (!all_finite(p.grad)) {
      ++skipped_;
      continue;
    }
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p.grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= cfg_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
  }
}

void Adam::step_entries(Parameter& p, std::span<const std::size_t> rows) {
  if (p.value.cols() != 1) throw DimensionError("step_entries needs a column vector, got " + shape_str(p.value));
  const auto n = p.value.rows();
  if (entry_m_.size() == 0) {
    entry_m_ = Vector::Zero(n);
    entry_v_ = Vector::Zero(n);
    entry_steps_.assign(static_cast<std::size_t>(n), 0);
  }
  if (entry_m_.size() != n) throw DimensionError("Adam entry state does not match '" + p.name + "'");
  ++step_;
  for (const auto r : rows) {
    const auto k = static_cast<Eigen::Index>(r);
    const double g = p.grad(k, 0);
    if (!std::isfinite(g)) {
      ++skipped_;
      continue;
    }
    const auto t = static_cast<double>(++entry_steps_[r]);
    entry_m_(k) = cfg_.beta1 * entry_m_(k) + (1.0 - cfg_.beta1) * g;
    entry_v_(k) = cfg_.beta2 * entry_v_(k) + (1.0 - cfg_.beta2) * g * g;
    const double mh = entry_m_(k) / (1.0 - std::pow(cfg_.beta1, t));
    const double vh = entry_v_(k) / (1.0 - std::pow(cfg_.beta2, t));
    p.value(k, 0) -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
  }
}

}  // namespace doseopt
