#include "doseopt/dcnet.hpp"

#include <fstream>
#include <memory>

namespace doseopt {

const char* to_string(MuKind k) { return k == MuKind::dcnet ? "dcnet" : "mlp"; }

MuKind parse_mu_kind(const std::string& s) {
  if (s == "dcnet") return MuKind::dcnet;
  if (s == "mlp") return MuKind::mlp;
  throw std::invalid_argument("unknown dose-response model kind '" + s + "'");
}

Eigen::Index DcnetConfig::head_param_count() const {
  const auto w = head_widths();
  Eigen::Index n = 0;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) n += w[i] * w[i + 1] + w[i + 1];
  return n;
}

nlohmann::json DcnetConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"d", d},
          {"p", p},
          {"width", width},
          {"spline_degree", spline.degree()},
          {"spline_knots", spline.interior_knots()},
          {"max_epochs", training.max_epochs},
          {"patience", training.patience},
          {"batch_size", training.batch_size},
          {"lr_grid", training.lr_grid},
          {"coefficient_noise", coefficient_noise}};
}

DcnetConfig DcnetConfig::from_json(const nlohmann::json& j) {
  DcnetConfig c;
  c.kind = parse_mu_kind(j.at("kind").get<std::string>());
  c.d = j.at("d").get<Eigen::Index>();
  c.p = j.at("p").get<Eigen::Index>();
  c.width = j.at("width").get<Eigen::Index>();
  c.spline = SplineSpec(j.at("spline_degree").get<int>(), j.at("spline_knots").get<std::vector<double>>());
  c.training.max_epochs = j.at("max_epochs").get<int>();
  c.training.patience = j.at("patience").get<int>();
  c.training.batch_size = j.at("batch_size").get<std::size_t>();
  c.training.lr_grid = j.at("lr_grid").get<std::vector<double>>();
  c.coefficient_noise = j.at("coefficient_noise").get<double>();
  return c;
}

Var varying_dense(Var a, Var t, const TensorBasisSpec& basis, Var coef, Eigen::Index offset, Eigen::Index in,
                  Eigen::Index out) {
  if (t.cols() != static_cast<Eigen::Index>(basis.p())) {
    throw DimensionError("varying_dense: dosage " + shape_str(t.value()) + " for p=" + std::to_string(basis.p()));
  }
  return varying_dense(a, t, plan_support(basis, t.value()), basis.total_size(), coef, offset, in, out);
}

Var varying_dense(Var a, Var t, const std::vector<SupportGroup>& plan, Eigen::Index kt, Var coef, Eigen::Index offset,
                  Eigen::Index in, Eigen::Index out) {
  const auto n = a.rows();
  if (a.cols() != in || t.rows() != n || coef.cols() != kt || coef.rows() < offset + in * out + out) {
    throw DimensionError("varying_dense: input " + shape_str(a.value()) + ", dosage " + shape_str(t.value()) +
                         ", coefficients " + shape_str(coef.value()) + " for layer " + std::to_string(in) + "->" +
                         std::to_string(out) + " at offset " + std::to_string(offset));
  }
  const Matrix& A = a.value();
  const Matrix& B = coef.value();

  struct Block {
    SupportGroup group;
    Matrix expanded;  // face-splitting product of the rows' inputs with their active basis values
    Matrix stacked;   // weights of the active columns, (m * in) x out
    Matrix bias;      // m x out
  };
  auto blocks = std::make_shared<std::vector<Block>>();
  Matrix z(n, out);
  for (const auto& g : plan) {
    const auto ng = static_cast<Eigen::Index>(g.rows.size());
    const auto m = static_cast<Eigen::Index>(g.cols.size());
    Block blk;
    const Matrix ag = gather_rows(A, g.rows);
    blk.expanded.resize(ng, m * in);
    blk.stacked.resize(m * in, out);
    blk.bias.resize(m, out);
    for (Eigen::Index c = 0; c < m; ++c) {
      const auto k = g.cols[static_cast<std::size_t>(c)];
      blk.expanded.middleCols(c * in, in) = ag.array().colwise() * g.psi.col(c).array();
      for (Eigen::Index i = 0; i < in; ++i) {
        blk.stacked.row(c * in + i) = B.col(k).segment(offset + i * out, out).transpose();
      }
      blk.bias.row(c) = B.col(k).segment(offset + in * out, out).transpose();
    }
    const Matrix zg = blk.expanded * blk.stacked + g.psi * blk.bias;
    for (Eigen::Index r = 0; r < ng; ++r) z.row(g.rows[static_cast<std::size_t>(r)]) = zg.row(r);
    blk.group = g;
    blocks->push_back(std::move(blk));
  }

  const int ia = a.id, it = t.id, ic = coef.id;
  const auto brows = B.rows();
  const auto p = t.cols();
  return a.tape->record(std::move(z), {a, t, coef}, [=](Tape& tape, const Matrix& g) {
    const bool need_c = tape.requires_grad(ic), need_a = tape.requires_grad(ia), need_t = tape.requires_grad(it);
    Matrix gc, ga, gt;
    if (need_c) gc = Matrix::Zero(brows, kt);
    if (need_a) ga = Matrix::Zero(n, in);
    if (need_t) gt = Matrix::Zero(n, p);
    for (const auto& blk : *blocks) {
      const auto& grp = blk.group;
      const Matrix gg = gather_rows(g, grp.rows);
      const auto m = static_cast<Eigen::Index>(grp.cols.size());
      if (need_c) {
        const Matrix gs = blk.expanded.transpose() * gg;
        const Matrix gb = grp.psi.transpose() * gg;
        for (Eigen::Index c = 0; c < m; ++c) {
          const auto k = grp.cols[static_cast<std::size_t>(c)];
          for (Eigen::Index i = 0; i < in; ++i) {
            gc.col(k).segment(offset + i * out, out) += gs.row(c * in + i).transpose();
          }
          gc.col(k).segment(offset + in * out, out) += gb.row(c).transpose();
        }
      }
      if (!need_a && !need_t) continue;
      const Matrix ge = gg * blk.stacked.transpose();
      if (need_a) {
        Matrix gag = Matrix::Zero(gg.rows(), in);
        for (Eigen::Index c = 0; c < m; ++c) {
          gag.array() += ge.middleCols(c * in, in).array().colwise() * grp.psi.col(c).array();
        }
        for (Eigen::Index r = 0; r < gg.rows(); ++r) ga.row(grp.rows[static_cast<std::size_t>(r)]) += gag.row(r);
      }
      if (need_t) {
        // h(r, c): sensitivity of the output to active basis column c
        const Matrix ag = gather_rows(tape.value(ia), grp.rows);
        Matrix h = gg * blk.bias.transpose();
        for (Eigen::Index c = 0; c < m; ++c) h.col(c) += ge.middleCols(c * in, in).cwiseProduct(ag).rowwise().sum();
        for (Eigen::Index j = 0; j < p; ++j) {
          const Vector gj = h.cwiseProduct(grp.dpsi[static_cast<std::size_t>(j)]).rowwise().sum();
          for (Eigen::Index r = 0; r < gg.rows(); ++r) gt(grp.rows[static_cast<std::size_t>(r)], j) += gj(r);
        }
      }
    }
    if (need_c) tape.accumulate(ic, gc);
    if (need_a) tape.accumulate(ia, ga);
    if (need_t) tape.accumulate(it, gt);
  });
}

Vector head_params(const Matrix& coefficients, const TensorBasisSpec& basis, std::span<const double> t) {
  const auto psi = tensor_product(basis, t);
  if (coefficients.cols() != static_cast<Eigen::Index>(psi.size())) {
    throw std::invalid_argument("coefficient matrix has " + std::to_string(coefficients.cols()) +
                                " columns but the basis has " + std::to_string(psi.size()));
  }
  return coefficients * Eigen::Map<const Vector>(psi.data(), static_cast<Eigen::Index>(psi.size()));
}

namespace {

Mlp phi_net(const DcnetConfig& c) { return Mlp("phi", {c.d, c.width, c.width}, Activation::relu, Activation::relu); }

Mlp baseline_net(const DcnetConfig& c) {
  return Mlp("mlp", {c.d + c.p, c.width, c.width, c.width, c.width, 1}, Activation::relu, Activation::identity);
}

}  // namespace

DoseResponseModel DoseResponseModel::initialized(const DcnetConfig& cfg, unsigned long long seed) {
  if (cfg.d <= 0 || cfg.p <= 0) throw std::invalid_argument("dose-response model needs d > 0 and p > 0");
  DoseResponseModel m(cfg);
  Rng rng(seed);
  if (cfg.kind == MuKind::mlp) {
    baseline_net(cfg).init(m.params_, rng);
    return m;
  }
  phi_net(cfg).init(m.params_, rng);
  // Standard initialization of the head, replicated across every basis column
  // plus small noise.
  const auto widths = cfg.head_widths();
  Vector eta0(cfg.head_param_count());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Matrix w = kaiming_uniform(widths[l], widths[l + 1], rng);
    eta0.segment(off, w.size()) = Eigen::Map<const Vector>(w.data(), w.size());
    off += w.size();
    eta0.segment(off, widths[l + 1]).setZero();
    off += widths[l + 1];
  }
  const auto kt = cfg.basis().total_size();
  Matrix b(eta0.size(), kt);
  for (Eigen::Index k = 0; k < kt; ++k) {
    for (Eigen::Index r = 0; r < eta0.size(); ++r) b(r, k) = eta0(r) + cfg.coefficient_noise * standard_normal(rng);
  }
  m.params_.add("head.B", std::move(b));
  return m;
}

void DoseResponseModel::require_ready() const {
  if (!ready()) throw StateError("dose-response model has no parameters (train or load it first)");
}

Var DoseResponseModel::forward_impl(Tape& tape, const ParamSet& params, bool trainable, Var t, Var x) const {
  if (t.cols() != cfg_.p || x.cols() != cfg_.d || t.rows() != x.rows()) {
    throw DimensionError("dose-response input: t " + shape_str(t.value()) + ", x " + shape_str(x.value()) +
                         ", expected p=" + std::to_string(cfg_.p) + ", d=" + std::to_string(cfg_.d));
  }
  auto bind = [&](const std::string& name) -> Var {
    const auto& p = params.at(name);
    return trainable ? tape.param(const_cast<Parameter&>(p)) : tape.constant(p.value);
  };
  auto dense_stack = [&](const Mlp& net, Var h) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      const auto idx = std::to_string(i);
      h = forward_dense(h, bind(net.prefix() + ".W" + idx), bind(net.prefix() + ".b" + idx), net.layers()[i].act);
    }
    return h;
  };
  if (cfg_.kind == MuKind::mlp) return dense_stack(baseline_net(cfg_), concat_cols({x, t}));

  Var h = dense_stack(phi_net(cfg_), x);
  const auto basis = cfg_.basis();
  const auto plan = plan_support(basis, t.value());
  Var coef = bind("head.B");
  const auto widths = cfg_.head_widths();
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    h = varying_dense(h, t, plan, basis.total_size(), coef, off, widths[l], widths[l + 1]);
    if (l + 2 < widths.size()) h = relu(h);
    off += widths[l] * widths[l + 1] + widths[l + 1];
  }
  return h;
}

Var DoseResponseModel::forward(Tape& tape, ParamSet& params, Var t, Var x) const {
  return forward_impl(tape, params, true, t, x);
}

Var DoseResponseModel::mu(Tape& tape, Var t, const Matrix& x) const {
  require_ready();
  return forward_impl(tape, params_, false, t, tape.constant(x));
}

double DoseResponseModel::predict(std::span<const double> t, std::span<const double> x) const {
  const Matrix tm = Eigen::Map<const Matrix>(t.data(), 1, static_cast<Eigen::Index>(t.size()));
  const Matrix xm = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return predict_batch(tm, xm)(0);
}

Vector DoseResponseModel::predict_batch(const Matrix& t, const Matrix& x) const { return eval_mu(*this, t, x); }

Vector DoseResponseModel::grad_t(std::span<const double> t, std::span<const double> x) const {
  require_ready();
  Tape tape;
  Var tv = tape.variable(Eigen::Map<const Matrix>(t.data(), 1, static_cast<Eigen::Index>(t.size())));
  const Matrix xm = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  tape.backward(sum(mu(tape, tv, xm)));
  return tape.grad(tv).row(0).transpose();
}

nlohmann::json DoseResponseModel::to_json() const {
  return {{"config", cfg_.to_json()}, {"params", params_.to_json()}, {"meta", meta_.to_json()}};
}

DoseResponseModel DoseResponseModel::from_json(const nlohmann::json& j) {
  DoseResponseModel m(DcnetConfig::from_json(j.at("config")));
  m.params_ = ParamSet::from_json(j.at("params"));
  m.meta_ = TrainMeta::from_json(j.at("meta"));
  return m;
}

void DoseResponseModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_json().dump() << '\n';
}

DoseResponseModel DoseResponseModel::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  return from_json(nlohmann::json::parse(is));
}

double factual_mse(const DoseResponseModel& model, const Dataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw DataError(std::string("split '") + to_string(split) + "' is empty");
  const Vector pred = model.predict_batch(ds.t_rows(idx), ds.x_rows(idx));
  return (pred - ds.y_rows(idx)).squaredNorm() / static_cast<double>(idx.size());
}

DoseResponseModel train_mu(const Dataset& ds, const DcnetConfig& cfg, unsigned long long seed) {
  ds.validate();
  if (ds.d() != cfg.d || ds.p() != cfg.p) {
    throw std::invalid_argument("dataset shape (d=" + std::to_string(ds.d()) + ", p=" + std::to_string(ds.p()) +
                                ") does not match model config (d=" + std::to_string(cfg.d) +
                                ", p=" + std::to_string(cfg.p) + ")");
  }
  const auto train = ds.indices(Split::train);
  const auto val = ds.indices(Split::val);
  if (train.empty() || val.empty()) throw DataError("train_mu needs nonempty train and validation splits");

  DoseResponseModel model = DoseResponseModel::initialized(cfg, seed);
  const Matrix xt = ds.x_rows(train), tt = ds.t_rows(train);
  const Vector yt = ds.y_rows(train);
  const Matrix xv = ds.x_rows(val), tv = ds.t_rows(val);
  const Vector yv = ds.y_rows(val);

  BatchLoss batch_loss = [&](Tape& tape, ParamSet& params, std::span<const std::size_t> rows) {
    const std::vector<std::size_t> r(rows.begin(), rows.end());
    Var pred = model.forward(tape, params, tape.constant(gather_rows(tt, r)), tape.constant(gather_rows(xt, r)));
    Matrix target(static_cast<Eigen::Index>(r.size()), 1);
    for (std::size_t i = 0; i < r.size(); ++i) target(static_cast<Eigen::Index>(i), 0) = yt(static_cast<Eigen::Index>(r[i]));
    return mean(square(sub(pred, tape.constant(std::move(target)))));
  };
  ValLoss val_loss = [&](const ParamSet& params) {
    DoseResponseModel probe(cfg);
    probe.params() = params;
    return (probe.predict_batch(tv, xv) - yv).squaredNorm() / static_cast<double>(val.size());
  };
  TrainMeta meta;
  model.params() = fit_with_lr_grid(model.params(), train.size(), batch_loss, val_loss, cfg.training, seed, meta);
  model.set_meta(std::move(meta));
  return model;
}

}  // namespace doseopt
