#include "doseopt/gps_flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace doseopt {

namespace {

double softplus_scalar(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void check_unit(double u) {
  if (!(u >= 0.0 && u <= 1.0)) {
    std::ostringstream os;
    os << "spline argument " << u << " outside [0, 1]";
    throw DomainError(os.str());
  }
}

}  // namespace

double identity_vertex_raw() { return std::log(std::exp(1.0) - 1.0); }

QuadraticSpline::QuadraticSpline(std::span<const double> raw_widths, std::span<const double> raw_vertices) {
  const auto k = raw_widths.size();
  if (k == 0 || raw_vertices.size() != k + 1) {
    throw DimensionError("quadratic spline needs K widths and K+1 vertices, got " + std::to_string(k) + " and " +
                         std::to_string(raw_vertices.size()));
  }
  const double m = *std::max_element(raw_widths.begin(), raw_widths.end());
  widths_.resize(k);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += (widths_[i] = std::exp(raw_widths[i] - m));
  for (auto& w : widths_) w /= z;
  vertices_.resize(k + 1);
  for (std::size_t i = 0; i <= k; ++i) vertices_[i] = softplus_scalar(raw_vertices[i]);
  double area = 0.0;
  for (std::size_t i = 0; i < k; ++i) area += 0.5 * (vertices_[i] + vertices_[i + 1]) * widths_[i];
  for (auto& v : vertices_) v /= area;
  knots_.assign(k + 1, 0.0);
  cum_.assign(k + 1, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    knots_[i + 1] = knots_[i] + widths_[i];
    cum_[i + 1] = cum_[i] + 0.5 * (vertices_[i] + vertices_[i + 1]) * widths_[i];
  }
  knots_[k] = 1.0;
  cum_[k] = 1.0;
}

QuadraticSpline QuadraticSpline::identity(int bins) {
  std::vector<double> w(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> v(static_cast<std::size_t>(bins + 1), identity_vertex_raw());
  return QuadraticSpline(w, v);
}

int QuadraticSpline::bin_of(double u) const {
  const auto it = std::upper_bound(knots_.begin() + 1, knots_.end() - 1, u);
  return static_cast<int>(it - knots_.begin()) - 1;
}

double QuadraticSpline::forward(double u) const {
  check_unit(u);
  const int b = bin_of(u);
  const double a = (u - knots_[b]) / widths_[b];
  return cum_[b] + widths_[b] * (a * vertices_[b] + 0.5 * a * a * (vertices_[b + 1] - vertices_[b]));
}

double QuadraticSpline::derivative(double u) const {
  check_unit(u);
  const int b = bin_of(u);
  const double a = (u - knots_[b]) / widths_[b];
  return vertices_[b] + a * (vertices_[b + 1] - vertices_[b]);
}

double QuadraticSpline::log_derivative(double u) const { return std::log(derivative(u)); }

double QuadraticSpline::inverse(double z) const {
  check_unit(z);
  const auto it = std::upper_bound(cum_.begin() + 1, cum_.end() - 1, z);
  const int b = static_cast<int>(it - cum_.begin()) - 1;
  // w * (V_b a + (V_{b+1} - V_b) a^2 / 2) = z - cum_b, solved in the stable form
  const double qa = 0.5 * widths_[b] * (vertices_[b + 1] - vertices_[b]);
  const double qb = widths_[b] * vertices_[b];
  const double rhs = z - cum_[b];
  const double a = 2.0 * rhs / (qb + std::sqrt(std::max(0.0, qb * qb + 4.0 * qa * rhs)));
  return std::clamp(knots_[b] + a * widths_[b], 0.0, 1.0);
}

SplineValue spline_transform(const QuadraticSpline& spline, double u) {
  return {spline.forward(u), spline.log_derivative(u)};
}

Var spline_log_derivative(Var widths, Var vertices, Var u) {
  const auto n = widths.rows();
  const auto k = widths.cols();
  if (vertices.rows() != n || vertices.cols() != k + 1 || u.rows() != n || u.cols() != 1) {
    throw DimensionError("spline_log_derivative: widths " + shape_str(widths.value()) + ", vertices " +
                         shape_str(vertices.value()) + ", u " + shape_str(u.value()));
  }
  const Matrix& W = widths.value();
  const Matrix& V = vertices.value();
  Matrix out(n, 1);
  std::vector<int> bin(static_cast<std::size_t>(n));
  Vector alpha(n), deriv(n), left(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ui = u.value()(i, 0);
    check_unit(ui);
    double edge = 0.0;
    Eigen::Index b = 0;
    while (b + 1 < k && ui >= edge + W(i, b)) edge += W(i, b++);
    const double a = std::clamp((ui - edge) / W(i, b), 0.0, 1.0);
    bin[static_cast<std::size_t>(i)] = static_cast<int>(b);
    alpha(i) = a;
    left(i) = edge;
    deriv(i) = V(i, b) + a * (V(i, b + 1) - V(i, b));
    out(i, 0) = std::log(deriv(i));
  }
  const int iw = widths.id, iv = vertices.id, iu = u.id;
  return widths.tape->record(std::move(out), {widths, vertices, u},
                             [=, bin = std::move(bin)](Tape& t, const Matrix& g) {
                               const Matrix& Wv = t.value(iw);
                               const Matrix& Vv = t.value(iv);
                               Matrix gw = Matrix::Zero(n, k), gv = Matrix::Zero(n, k + 1), gu = Matrix::Zero(n, 1);
                               for (Eigen::Index i = 0; i < n; ++i) {
                                 const auto b = static_cast<Eigen::Index>(bin[static_cast<std::size_t>(i)]);
                                 const double gi = g(i, 0) / deriv(i);
                                 const double a = alpha(i);
                                 gv(i, b) += gi * (1.0 - a);
                                 gv(i, b + 1) += gi * a;
                                 // d log s' / d alpha, then alpha = (u - left) / w_b
                                 const double ga = gi * (Vv(i, b + 1) - Vv(i, b));
                                 const double wb = Wv(i, b);
                                 gu(i, 0) = ga / wb;
                                 for (Eigen::Index m = 0; m < b; ++m) gw(i, m) -= ga / wb;
                                 gw(i, b) -= ga * a / wb;
                               }
                               if (t.requires_grad(iw)) t.accumulate(iw, gw);
                               if (t.requires_grad(iv)) t.accumulate(iv, gv);
                               if (t.requires_grad(iu)) t.accumulate(iu, gu);
                             });
}

nlohmann::json FlowConfig::to_json() const {
  return {{"d", d},
          {"p", p},
          {"bins", bins},
          {"width", width},
          {"noise_std", noise_std},
          {"max_epochs", training.max_epochs},
          {"patience", training.patience},
          {"batch_size", training.batch_size},
          {"lr_grid", training.lr_grid}};
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j) {
  FlowConfig c;
  c.d = j.at("d").get<Eigen::Index>();
  c.p = j.at("p").get<Eigen::Index>();
  c.bins = j.at("bins").get<int>();
  c.width = j.at("width").get<Eigen::Index>();
  c.noise_std = j.at("noise_std").get<double>();
  c.training.max_epochs = j.at("max_epochs").get<int>();
  c.training.patience = j.at("patience").get<int>();
  c.training.batch_size = j.at("batch_size").get<std::size_t>();
  c.training.lr_grid = j.at("lr_grid").get<std::vector<double>>();
  return c;
}

std::vector<Matrix> GpsModel::masks() const {
  // Degrees: covariates 0, dosage j (1-based) j, hidden units cycle 0..p-1,
  // outputs of dosage j see hidden units of degree < j.
  const auto d = cfg_.d, p = cfg_.p, h = cfg_.width;
  std::vector<Eigen::Index> in_deg(static_cast<std::size_t>(d + p), 0);
  for (Eigen::Index j = 0; j < p; ++j) in_deg[static_cast<std::size_t>(d + j)] = j + 1;
  std::vector<Eigen::Index> hid_deg(static_cast<std::size_t>(h));
  for (Eigen::Index u = 0; u < h; ++u) hid_deg[static_cast<std::size_t>(u)] = u % p;
  const auto per = cfg_.params_per_dim();

  Matrix m0(d + p, h), m1(h, h), m2(h, p * per);
  for (Eigen::Index i = 0; i < d + p; ++i) {
    for (Eigen::Index u = 0; u < h; ++u) m0(i, u) = in_deg[i] <= hid_deg[u] ? 1.0 : 0.0;
  }
  for (Eigen::Index a = 0; a < h; ++a) {
    for (Eigen::Index b = 0; b < h; ++b) m1(a, b) = hid_deg[a] <= hid_deg[b] ? 1.0 : 0.0;
  }
  for (Eigen::Index a = 0; a < h; ++a) {
    for (Eigen::Index o = 0; o < p * per; ++o) m2(a, o) = hid_deg[a] < (o / per) + 1 ? 1.0 : 0.0;
  }
  return {m0, m1, m2};
}

GpsModel GpsModel::initialized(const FlowConfig& cfg, unsigned long long seed) {
  if (cfg.d <= 0 || cfg.p <= 0 || cfg.bins <= 0) throw std::invalid_argument("flow needs d, p, bins > 0");
  GpsModel m(cfg);
  Rng rng(seed);
  const auto h = cfg.width;
  m.params_.add("made.W0", kaiming_uniform(cfg.d + cfg.p, h, rng));
  m.params_.add("made.b0", Matrix::Zero(1, h));
  m.params_.add("made.W1", kaiming_uniform(h, h, rng));
  m.params_.add("made.b1", Matrix::Zero(1, h));
  m.params_.add("made.W2", Matrix::Zero(h, cfg.p * cfg.params_per_dim()));
  Matrix b2 = Matrix::Zero(1, cfg.p * cfg.params_per_dim());
  for (Eigen::Index j = 0; j < cfg.p; ++j) {
    b2.middleCols(j * cfg.params_per_dim() + cfg.bins, cfg.bins + 1).setConstant(identity_vertex_raw());
  }
  m.params_.add("made.b2", std::move(b2));
  return m;
}

void GpsModel::require_ready() const {
  if (!ready()) throw StateError("GPS model has no parameters (train or load it first)");
}

Var GpsModel::conditioner(Tape& tape, const ParamSet& params, bool trainable, Var t, Var x) const {
  auto bind = [&](const std::string& name) -> Var {
    const auto& p = params.at(name);
    return trainable ? tape.param(const_cast<Parameter&>(p)) : tape.constant(p.value);
  };
  const auto ms = masks();
  Var h = concat_cols({x, t});
  for (int l = 0; l < 3; ++l) {
    const auto idx = std::to_string(l);
    Var w = bind("made.W" + idx);
    // Frozen weights are masked directly; trainable ones through the tape.
    w = trainable ? mul(w, tape.constant(ms[static_cast<std::size_t>(l)]))
                  : tape.constant(w.value().cwiseProduct(ms[static_cast<std::size_t>(l)]));
    h = forward_dense(h, w, bind("made.b" + idx), l < 2 ? Activation::relu : Activation::identity);
  }
  return h;
}

Var GpsModel::forward_impl(Tape& tape, const ParamSet& params, bool trainable, Var t, Var x) const {
  if (t.cols() != cfg_.p || x.cols() != cfg_.d || t.rows() != x.rows()) {
    throw DimensionError("flow input: t " + shape_str(t.value()) + ", x " + shape_str(x.value()) +
                         ", expected p=" + std::to_string(cfg_.p) + ", d=" + std::to_string(cfg_.d));
  }
  if (t.value().size() > 0 && (t.value().minCoeff() < 0.0 || t.value().maxCoeff() > 1.0)) {
    throw DomainError("flow dosages must lie in [0, 1]");
  }
  Var tc = clamp(t, kBoundaryClamp, 1.0 - kBoundaryClamp);
  Var raw = conditioner(tape, params, trainable, tc, x);
  const auto per = cfg_.params_per_dim();
  const auto k = static_cast<Eigen::Index>(cfg_.bins);
  Var total;
  for (Eigen::Index j = 0; j < cfg_.p; ++j) {
    Var w = softmax_rows(slice_cols(raw, j * per, k));
    Var e = softplus(slice_cols(raw, j * per + k, k + 1));
    Var mid = scale(add(slice_cols(e, 0, k), slice_cols(e, 1, k)), 0.5);
    Var area = row_sum(mul(w, mid));
    Var v = mul_col(e, exp(scale(log(area), -1.0)));
    Var ld = spline_log_derivative(w, v, slice_cols(tc, j, 1));
    total = (j == 0) ? ld : add(total, ld);
  }
  return total;
}

Var GpsModel::forward(Tape& tape, ParamSet& params, Var t, Var x) const {
  return forward_impl(tape, params, true, t, x);
}

Var GpsModel::log_density(Tape& tape, Var t, const Matrix& x) const {
  require_ready();
  return forward_impl(tape, params_, false, t, tape.constant(x));
}

QuadraticSpline GpsModel::conditional_spline(std::span<const double> t, std::span<const double> x,
                                             Eigen::Index j) const {
  require_ready();
  Tape tape;
  Matrix tm = Eigen::Map<const Matrix>(t.data(), 1, static_cast<Eigen::Index>(t.size()));
  tm = tm.cwiseMax(kBoundaryClamp).cwiseMin(1.0 - kBoundaryClamp);
  const Matrix xm = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  Var raw = conditioner(tape, params_, false, tape.constant(tm), tape.constant(xm));
  const auto per = cfg_.params_per_dim();
  const Eigen::RowVectorXd row = raw.value().row(0).segment(j * per, per);
  return QuadraticSpline(std::span<const double>(row.data(), static_cast<std::size_t>(cfg_.bins)),
                         std::span<const double>(row.data() + cfg_.bins, static_cast<std::size_t>(cfg_.bins + 1)));
}

Vector GpsModel::log_prob_batch(const Matrix& t, const Matrix& x) const {
  Tape tape;
  return log_density(tape, tape.constant(t), x).value().col(0);
}

double GpsModel::log_prob(std::span<const double> t, std::span<const double> x) const {
  const Matrix tm = Eigen::Map<const Matrix>(t.data(), 1, static_cast<Eigen::Index>(t.size()));
  const Matrix xm = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return log_prob_batch(tm, xm)(0);
}

double GpsModel::density(std::span<const double> t, std::span<const double> x) const {
  return std::exp(log_prob(t, x));
}

Vector GpsModel::grad_log_prob_t(std::span<const double> t, std::span<const double> x) const {
  require_ready();
  Tape tape;
  Var tv = tape.variable(Eigen::Map<const Matrix>(t.data(), 1, static_cast<Eigen::Index>(t.size())));
  const Matrix xm = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  tape.backward(sum(log_density(tape, tv, xm)));
  return tape.grad(tv).row(0).transpose();
}

nlohmann::json GpsModel::to_json() const {
  return {{"config", cfg_.to_json()}, {"params", params_.to_json()}, {"meta", meta_.to_json()}};
}

GpsModel GpsModel::from_json(const nlohmann::json& j) {
  GpsModel m(FlowConfig::from_json(j.at("config")));
  m.params_ = ParamSet::from_json(j.at("params"));
  m.meta_ = TrainMeta::from_json(j.at("meta"));
  return m;
}

void GpsModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_json().dump() << '\n';
}

GpsModel GpsModel::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  return from_json(nlohmann::json::parse(is));
}

double mean_nll(const GpsModel& model, const Dataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw DataError(std::string("split '") + to_string(split) + "' is empty");
  return -model.log_prob_batch(ds.t_rows(idx), ds.x_rows(idx)).mean();
}

double reflect_unit(double v) {
  double r = std::fmod(std::abs(v), 2.0);
  return r > 1.0 ? 2.0 - r : r;
}

GpsModel train_gps(const Dataset& ds, const FlowConfig& cfg, unsigned long long seed) {
  ds.validate();
  if (ds.d() != cfg.d || ds.p() != cfg.p) {
    throw std::invalid_argument("dataset shape (d=" + std::to_string(ds.d()) + ", p=" + std::to_string(ds.p()) +
                                ") does not match flow config (d=" + std::to_string(cfg.d) +
                                ", p=" + std::to_string(cfg.p) + ")");
  }
  const auto train = ds.indices(Split::train);
  const auto val = ds.indices(Split::val);
  if (train.empty() || val.empty()) throw DataError("train_gps needs nonempty train and validation splits");

  GpsModel model = GpsModel::initialized(cfg, seed);
  const Matrix xt = ds.x_rows(train), tt = ds.t_rows(train);
  const Matrix xv = ds.x_rows(val), tv = ds.t_rows(val);
  // Noise stream independent of the shuffling streams inside the trainer.
  Rng noise_rng(seed ^ 0x9e3779b97f4a7c15ULL);

  BatchLoss batch_loss = [&](Tape& tape, ParamSet& params, std::span<const std::size_t> rows) {
    const std::vector<std::size_t> r(rows.begin(), rows.end());
    Matrix tb = gather_rows(tt, r);
    if (cfg.noise_std > 0.0) {
      for (Eigen::Index i = 0; i < tb.size(); ++i) {
        tb.data()[i] = reflect_unit(tb.data()[i] + cfg.noise_std * standard_normal(noise_rng));
      }
    }
    Var lp = model.forward(tape, params, tape.constant(std::move(tb)), tape.constant(gather_rows(xt, r)));
    return scale(mean(lp), -1.0);
  };
  ValLoss val_loss = [&](const ParamSet& params) {
    GpsModel probe(cfg);
    probe.params() = params;
    return -probe.log_prob_batch(tv, xv).mean();
  };
  TrainMeta meta;
  model.params() = fit_with_lr_grid(model.params(), train.size(), batch_loss, val_loss, cfg.training, seed, meta);
  model.set_meta(std::move(meta));
  return model;
}

}  // namespace doseopt
