// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include "doseopt/cli.hpp"
#include "doseopt/eval.hpp"
#include "fd_oracle.hpp"
#include "toy_policy.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace doseopt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a named check; the first few failures are listed in the detail.
  void check(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail << " failed:";
    detail << " [" << what << "]";
    pass = false;
  }
};

using Clock = std::chrono::steady_clock;

double minutes_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
}

void log_progress(const std::string& msg) { std::cerr << "  " << msg << std::endl; }

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * uniform01(rng);
  return m;
}

std::span<const double> row_span(const Matrix& m, Eigen::Index i) {
  return {m.row(i).data(), static_cast<std::size_t>(m.cols())};
}

// ---- 1: generator fidelity -------------------------------------------------

double ks_uniform(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) d = std::max({d, (i + 1) / n - v[i], v[i] - i / n});
  return d;
}

Outcome generator_fidelity() {
  Outcome o;
  const auto uniform = generate(SimConfig{.n = 5000, .d = 10, .p = 2, .alpha = 0.0, .seed = 101});
  const double critical = 1.6276 / std::sqrt(5000.0);
  double worst_ks = 0.0;
  for (Eigen::Index j = 0; j < 2; ++j) {
    const Vector col = uniform.data.t.col(j);
    worst_ks = std::max(worst_ks, ks_uniform({col.data(), col.data() + col.size()}));
  }
  o.check(worst_ks < critical, "KS vs Uniform(0,1)");

  const auto biased = generate(SimConfig{.n = 5000, .d = 10, .p = 2, .alpha = 2.0, .seed = 102});
  double worst_mode = 0.0;
  for (Eigen::Index i = 0; i < biased.data.n(); ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double tt = compute_tilde_t(biased.oracle.compute_eta(row_span(biased.data.x, i), j));
      const auto bp = beta_params(2.0, tt);
      worst_mode = std::max(worst_mode, std::abs((bp.a - 1.0) / (bp.a + bp.b - 2.0) - tt));
    }
  }
  o.check(worst_mode <= 1e-12, "Beta mode equals t~");

  // Grid argmax of the oracle over 101^2 nodes lands on a node adjacent to t~.
  const int res = 101;
  Matrix grid(res * res, 2);
  for (int a = 0; a < res; ++a) {
    for (int b = 0; b < res; ++b) grid.row(a * res + b) << a / (res - 1.0), b / (res - 1.0);
  }
  double worst_gap = 0.0;
  for (Eigen::Index i = 0; i < 50; ++i) {
    const Matrix x = biased.data.x.row(i).replicate(grid.rows(), 1);
    Eigen::Index best = 0;
    biased.oracle.mu_batch(grid, x).maxCoeff(&best);
    const auto tt = biased.oracle.tilde_t(row_span(biased.data.x, i));
    for (Eigen::Index j = 0; j < 2; ++j) worst_gap = std::max(worst_gap, std::abs(grid(best, j) - tt[j]));
  }
  o.check(worst_gap <= 1.0 / (res - 1) + 1e-12, "grid argmax within one node of t~");
  o.detail << " ks=" << worst_ks << " (critical " << critical << "), mode_err=" << worst_mode
           << ", argmax_gap=" << worst_gap;
  return o;
}

// ---- 2: numerics ------------------------------------------------------------

double check_unary(const std::function<Var(Var)>& op, const Matrix& x, Rng& rng) {
  Tape probe;
  const Matrix shape = op(probe.constant(x)).value();
  const Matrix w = random_matrix(shape.rows(), shape.cols(), rng);
  Tape tape;
  Var xv = tape.variable(x);
  tape.backward(sum(mul(op(xv), tape.constant(w))));
  auto value = [&](const Matrix& in) {
    Tape t;
    return op(t.constant(in)).value().cwiseProduct(w).sum();
  };
  return fd::relative_error(tape.grad(xv), fd::gradient(value, x));
}

// Gradient of sum(op(inputs) .* w) with respect to every input.
double check_nary(const std::function<Var(Tape&, const std::vector<Var>&)>& op, const std::vector<Matrix>& inputs,
                  Rng& rng) {
  auto build = [&](Tape& t, const std::vector<Matrix>& in, bool vars) {
    std::vector<Var> v;
    for (const auto& m : in) v.push_back(vars ? t.variable(m) : t.constant(m));
    return std::pair{op(t, v), v};
  };
  Tape probe;
  const Matrix shape = build(probe, inputs, false).first.value();
  const Matrix w = random_matrix(shape.rows(), shape.cols(), rng);
  Tape tape;
  auto [out, vars] = build(tape, inputs, true);
  tape.backward(sum(mul(out, tape.constant(w))));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto value = [&](const Matrix& m) {
      auto in = inputs;
      in[k] = m;
      Tape t;
      return build(t, in, false).first.value().cwiseProduct(w).sum();
    };
    worst = std::max(worst, fd::relative_error(tape.grad(vars[k]), fd::gradient(value, inputs[k])));
  }
  return worst;
}

Outcome numerics() {
  Outcome o;
  Rng rng(201);
  const Matrix a = random_matrix(4, 3, rng), b = random_matrix(4, 3, rng);
  const Matrix pos = random_matrix(4, 3, rng, 0.5, 2.0);
  Matrix away = random_matrix(4, 3, rng, 0.1, 1.0);
  for (Eigen::Index i = 0; i < away.size(); i += 2) away.data()[i] *= -1.0;

  std::map<std::string, double> errors;
  auto binary = [&](const std::string& name, auto op, const Matrix& x, const Matrix& y) {
    errors[name] = check_nary([op](Tape&, const std::vector<Var>& v) { return op(v[0], v[1]); }, {x, y}, rng);
  };
  binary("matmul", [](Var x, Var y) { return matmul(x, y); }, a, random_matrix(3, 2, rng));
  binary("add", [](Var x, Var y) { return add(x, y); }, a, b);
  binary("sub", [](Var x, Var y) { return sub(x, y); }, a, b);
  binary("mul", [](Var x, Var y) { return mul(x, y); }, a, b);
  binary("add_row", [](Var x, Var y) { return add_row(x, y); }, a, random_matrix(1, 3, rng));
  binary("mul_col", [](Var x, Var y) { return mul_col(x, y); }, a, random_matrix(4, 1, rng));
  binary("concat_cols", [](Var x, Var y) { return concat_cols({x, y}); }, a, random_matrix(4, 2, rng));
  errors["scale"] = check_unary([](Var x) { return scale(x, -2.5); }, a, rng);
  errors["add_scalar"] = check_unary([](Var x) { return add_scalar(x, 0.7); }, a, rng);
  errors["relu"] = check_unary([](Var x) { return relu(x); }, away, rng);
  errors["sigmoid"] = check_unary([](Var x) { return sigmoid(x); }, a, rng);
  errors["exp"] = check_unary([](Var x) { return exp(x); }, a, rng);
  errors["log"] = check_unary([](Var x) { return log(x); }, pos, rng);
  errors["softplus"] = check_unary([](Var x) { return softplus(x); }, a, rng);
  errors["square"] = check_unary([](Var x) { return square(x); }, a, rng);
  errors["clamp"] = check_unary([](Var x) { return clamp(x, -0.05, 0.05); }, away, rng);
  errors["softmax_rows"] = check_unary([](Var x) { return softmax_rows(x); }, a, rng);
  errors["sum"] = check_unary([](Var x) { return sum(x); }, a, rng);
  errors["mean"] = check_unary([](Var x) { return mean(x); }, a, rng);
  errors["row_sum"] = check_unary([](Var x) { return row_sum(x); }, a, rng);
  errors["slice_cols"] = check_unary([](Var x) { return slice_cols(x, 1, 2); }, a, rng);
  errors["forward_dense"] = check_nary(
      [](Tape&, const std::vector<Var>& v) { return forward_dense(v[0], v[1], v[2], Activation::sigmoid); },
      {a, random_matrix(3, 5, rng), random_matrix(1, 5, rng)}, rng);

  const auto basis = TensorBasisSpec::uniform(2);
  const Matrix t = random_matrix(6, 2, rng, 0.05, 0.95);
  errors["tensor_basis"] =
      check_nary([&](Tape&, const std::vector<Var>& v) { return tensor_basis(basis, v[0]); }, {t}, rng);
  const Eigen::Index in = 3, out = 2;
  errors["varying_dense"] = check_nary(
      [&](Tape&, const std::vector<Var>& v) { return varying_dense(v[0], v[1], basis, v[2], 1, in, out); },
      {random_matrix(6, in, rng), t, random_matrix(1 + in * out + out, basis.total_size(), rng)}, rng);

  const Eigen::Index k = 5;
  Matrix widths(6, k), vertices(6, k + 1), u(6, 1);
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index c = 0; c < k; ++c) widths(i, c) = 0.5 + uniform01(rng);
    widths.row(i) /= widths.row(i).sum();
    for (Eigen::Index c = 0; c <= k; ++c) vertices(i, c) = 0.3 + uniform01(rng);
    u(i, 0) = 0.02 + 0.96 * uniform01(rng);
  }
  // Differentiating u alone: moving the widths would shift bin edges across u.
  errors["spline_log_derivative"] = check_nary(
      [&](Tape& tp, const std::vector<Var>& v) {
        return spline_log_derivative(tp.constant(widths), tp.constant(vertices), v[0]);
      },
      {u}, rng);
  errors["spline_log_derivative/vertices"] = check_nary(
      [&](Tape& tp, const std::vector<Var>& v) {
        return spline_log_derivative(tp.constant(widths), v[0], tp.constant(u));
      },
      {vertices}, rng);

  // Model derivatives with respect to the dosage.
  double dcnet_err = 0.0;
  for (Eigen::Index p : {1, 2, 3}) {
    DcnetConfig c;
    c.d = 5;
    c.p = p;
    c.width = 12;
    c.coefficient_noise = 0.5;
    const auto m = DoseResponseModel::initialized(c, 210 + static_cast<unsigned long long>(p));
    for (int r = 0; r < 10; ++r) {
      const Matrix x = random_matrix(1, 5, rng), tt = random_matrix(1, p, rng, 0.05, 0.95);
      const Vector g = m.grad_t(row_span(tt, 0), row_span(x, 0));
      const Matrix num =
          fd::gradient([&](const Matrix& q) { return m.predict(row_span(q, 0), row_span(x, 0)); }, tt);
      dcnet_err = std::max(dcnet_err, fd::relative_error(Matrix(g.transpose()), num));
    }
  }
  errors["dcnet d mu/dt"] = dcnet_err;

  double flow_err = 0.0;
  for (Eigen::Index p : {1, 2, 3}) {
    FlowConfig c;
    c.d = 4;
    c.p = p;
    c.width = 16;
    auto m = GpsModel::initialized(c, 220 + static_cast<unsigned long long>(p));
    auto& w2 = m.params().at("made.W2").value;
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = 0.6 * (2.0 * uniform01(rng) - 1.0);
    int checked = 0;
    while (checked < 10) {
      const Matrix x = random_matrix(1, 4, rng), tt = random_matrix(1, p, rng, 0.05, 0.95);
      // Skip points within the step of a spline bin edge, where s' has a kink.
      bool edge = false;
      for (Eigen::Index j = 0; j < p && !edge; ++j) {
        const auto s = m.conditional_spline(row_span(tt, 0), row_span(x, 0), j);
        double e = 0.0;
        for (double w : s.widths()) {
          e += w;
          edge = edge || std::abs(tt(0, j) - e) < 1e-4;
        }
      }
      if (edge) continue;
      const Vector g = m.grad_log_prob_t(row_span(tt, 0), row_span(x, 0));
      const Matrix num =
          fd::gradient([&](const Matrix& q) { return m.log_prob(row_span(q, 0), row_span(x, 0)); }, tt);
      flow_err = std::max(flow_err, fd::relative_error(Matrix(g.transpose()), num));
      ++checked;
    }
  }
  errors["flow d log f/dt"] = flow_err;

  double worst = 0.0;
  for (const auto& [name, err] : errors) {
    o.check(err <= 1e-5, name);
    worst = std::max(worst, err);
  }
  o.detail << " " << errors.size() << " gradient checks, worst relative error " << worst;
  return o;
}

// ---- 3: spline and flow structure --------------------------------------------

double quadrature(const GpsModel& m, std::span<const double> x, int grid) {
  const Eigen::Index p = m.p();
  const Eigen::Index nodes = p == 1 ? grid : static_cast<Eigen::Index>(grid) * grid;
  Matrix t(nodes, p);
  for (Eigen::Index n = 0; n < nodes; ++n) {
    t(n, 0) = ((p == 1 ? n : n / grid) + 0.5) / grid;
    if (p == 2) t(n, 1) = (n % grid + 0.5) / grid;
  }
  const Matrix xm = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size())).replicate(nodes, 1);
  return m.log_prob_batch(t, xm).array().exp().sum() / static_cast<double>(nodes);
}

Outcome structure() {
  Outcome o;
  const SplineSpec spec;
  double pu = 0.0;
  for (int g = 0; g <= 10000; ++g) {
    const auto v = eval_basis(spec, g / 10000.0);
    double s = 0.0;
    for (double e : v) s += e;
    pu = std::max(pu, std::abs(s - 1.0));
  }
  o.check(pu <= 1e-12, "partition of unity");
  const auto at0 = eval_basis(spec, 0.0), at1 = eval_basis(spec, 1.0);
  bool onehot = at0.front() == 1.0 && at1.back() == 1.0;
  for (std::size_t k = 1; k < at0.size(); ++k) onehot = onehot && at0[k] == 0.0 && at1[k - 1] == 0.0;
  o.check(onehot, "endpoint one-hots");

  Rng rng(301);
  double identity_max = 0.0;
  for (Eigen::Index p : {1, 2, 3}) {
    FlowConfig c;
    c.d = 10;
    c.p = p;
    const auto m = GpsModel::initialized(c, 302);
    const Matrix x = random_matrix(500, 10, rng), t = random_matrix(500, p, rng, 0.0, 1.0);
    identity_max = std::max(identity_max, m.log_prob_batch(t, x).cwiseAbs().maxCoeff());
  }
  o.check(identity_max <= 1e-12, "identity flow log-density 0");

  std::map<Eigen::Index, double> worst;
  for (Eigen::Index p : {1, 2}) {
    const auto sim = generate(SimConfig{.n = 5000, .d = 10, .p = p, .alpha = 2.0, .seed = 303});
    FlowConfig c;
    c.d = 10;
    c.p = p;
    const auto m = train_gps(sim.data, c, 304);
    o.check(!m.meta().failed, "flow training p=" + std::to_string(p));
    const auto test = sim.data.indices(Split::test);
    for (std::size_t k = 0; k < 5; ++k) {
      const double q = quadrature(m, row_span(sim.data.x, static_cast<Eigen::Index>(test[k])), p == 1 ? 2048 : 256);
      worst[p] = std::max(worst[p], std::abs(q - 1.0));
    }
  }
  o.check(worst[1] <= 0.02, "trained p=1 integral");
  o.check(worst[2] <= 0.05, "trained p=2 integral");
  o.detail << " partition_err=" << pu << ", identity_max=" << identity_max << ", |integral-1| p=1 " << worst[1]
           << ", p=2 " << worst[2];
  return o;
}

// ---- 4: dose-response quality --------------------------------------------------

Outcome dose_response_quality() {
  Outcome o;
  const auto sim = generate(SimConfig{.n = 5000, .d = 10, .p = 2, .alpha = 0.0, .seed = 401});
  DcnetConfig c;
  c.d = 10;
  c.p = 2;
  const auto m = train_mu(sim.data, c, 402);
  const double mse = factual_mse(m, sim.data, Split::test);
  o.check(!m.meta().failed, "training");
  o.check(mse <= 0.375, "test MSE <= 0.375");
  o.detail << " test_mse=" << mse << " (lr " << m.meta().lr << ", " << m.meta().epochs_run << " epochs)";
  return o;
}

// ---- 5: constrained-optimum correctness ---------------------------------------

Outcome constrained_optimum() {
  Outcome o;
  const toy::Mu mu(2);
  const toy::Density f(2);
  double worst_rel = 0.0, worst_naive = 0.0;
  for (unsigned long long seed = 1; seed <= 5; ++seed) {
    const auto ds = toy::dataset(1000, 2, 500 + seed);
    const Matrix xt = ds.x_rows(ds.indices(Split::test));
    const auto rel = train_policy(mu, f, ds, toy::config(PolicyMode::reliable), seed);
    const auto naive = train_policy(mu, f, ds, toy::config(PolicyMode::naive), seed);
    worst_rel = std::max(worst_rel, (rel.predict_dosage(xt).array() - toy::kReliableOptimum).abs().mean());
    worst_naive = std::max(worst_naive, (naive.predict_dosage(xt).array() - toy::kMuPeak).abs().mean());
  }
  o.check(worst_rel <= 0.05, "reliable within 0.05 of 0.5");
  o.check(worst_naive <= 0.05, "naive within 0.05 of 0.8");
  o.detail << " worst mean |pi - optimum| over 5 seeds: reliable " << worst_rel << ", naive " << worst_naive;
  return o;
}

// ---- 6: ordering on the benchmark table -----------------------------------------

const CellResult* find_cell(const EvalReport& r, unsigned long long seed, MuKind method, PolicyMode mode,
                            Eigen::Index d) {
  for (const auto* c : r.sweep("table")) {
    if (c->data.seed == seed && c->method == method && c->mode == mode && c->data.d == d) return c;
  }
  return nullptr;
}

Outcome table_ordering(const std::vector<unsigned long long>& seeds, const fs::path& report_dir) {
  Outcome o;
  EvalConfig cfg;
  cfg.seeds = seeds;
  cfg.run_alpha_sweep = cfg.run_p_sweep = cfg.run_quantile_sweep = false;
  const auto report = run_benchmark(cfg, log_progress);
  if (!report_dir.empty()) write_report(report, report_dir);
  for (const auto& f : report.failures()) o.check(false, f);

  double rel100 = 0.0, naive100 = 0.0;
  int std_ok = 0, std_total = 0;
  double min_rate = 1.0;
  std::ostringstream cells;
  for (auto seed : seeds) {
    for (auto d : cfg.table_dims) {
      for (auto method : cfg.methods) {
        const auto* rel = find_cell(report, seed, method, PolicyMode::reliable, d);
        const auto* naive = find_cell(report, seed, method, PolicyMode::naive, d);
        if (!rel || !naive || rel->failed || naive->failed) continue;
        ++std_total;
        if (rel->std_regret <= naive->std_regret) ++std_ok;
        min_rate = std::min(min_rate, rel->constraint_rate);
        if (method == MuKind::dcnet && d == 100) {
          rel100 += rel->selected_regret / static_cast<double>(seeds.size());
          naive100 += naive->selected_regret / static_cast<double>(seeds.size());
        }
        cells << "\n    seed " << seed << " d=" << d << " " << to_string(method) << ": regret reliable "
              << rel->selected_regret << " naive " << naive->selected_regret << ", std reliable " << rel->std_regret
              << " naive " << naive->std_regret << ", rate " << rel->constraint_rate;
      }
    }
  }
  const int expected = static_cast<int>(seeds.size() * cfg.table_dims.size() * cfg.methods.size());
  o.check(std_total == expected, "all cells completed");
  o.check(rel100 < naive100, "(a) d=100 DCNet reliable < naive regret");
  o.check(8 * std_ok >= 7 * std_total, "(b) reliable std <= naive std in >= 7/8 of cells");
  o.check(min_rate >= 0.95, "(c) reliable constraint rate >= 0.95");
  const double per_seed = report.seconds / 60.0 / static_cast<double>(seeds.size());
  o.check(per_seed < 30.0, "runtime < 30 min per seed");
  o.detail << " (a) DCNet d=100 mean selected regret reliable " << rel100 << " vs naive " << naive100 << "; (b) "
           << std_ok << "/" << std_total << " cells; (c) min rate " << min_rate << "; " << per_seed
           << " min/seed" << cells.str();
  return o;
}

// ---- 7: robustness sweeps ---------------------------------------------------------

Outcome robustness(unsigned long long seed, const fs::path& report_dir) {
  Outcome o;
  EvalConfig cfg;
  cfg.seeds = {seed};
  cfg.run_table = cfg.run_p_sweep = false;
  cfg.alpha_grid = {1.0, 2.0, 4.0};
  const auto report = run_benchmark(cfg, log_progress);
  if (!report_dir.empty()) write_report(report, report_dir);
  for (const auto& f : report.failures()) o.check(false, f);

  std::map<double, std::map<PolicyMode, double>> by_alpha;
  for (const auto* c : report.sweep("alpha")) {
    if (!c->failed) by_alpha[c->data.alpha][c->mode] = c->range_regret;
  }
  for (double a : cfg.alpha_grid) {
    const auto& m = by_alpha[a];
    const bool ok = m.count(PolicyMode::reliable) && m.count(PolicyMode::naive) &&
                    m.at(PolicyMode::reliable) <= m.at(PolicyMode::naive);
    std::ostringstream name;
    name << "range at alpha=" << a;
    o.check(ok, name.str());
    if (m.size() == 2) {
      o.detail << " alpha=" << a << " range reliable " << m.at(PolicyMode::reliable) << " naive "
               << m.at(PolicyMode::naive) << ";";
    }
  }

  std::map<double, double> by_q;
  for (const auto* c : report.sweep("quantile")) {
    if (!c->failed) by_q[c->quantile] = c->range_regret;
  }
  o.check(by_q.size() == cfg.quantile_grid.size(), "quantile sweep completed");
  if (by_q.count(0.05)) {
    for (const auto& [q, range] : by_q) {
      if (q < 0.05) {
        std::ostringstream name;
        name << "range at q=" << q << " <= 2x baseline";
        o.check(range <= 2.0 * by_q.at(0.05), name.str());
      }
    }
  }
  o.detail << " quantile ranges:";
  for (const auto& [q, range] : by_q) o.detail << " q=" << q << " " << range;
  o.check(report.seconds / 60.0 < 45.0, "runtime < 45 min");
  o.detail << "; " << report.seconds / 60.0 << " min";
  return o;
}

// ---- 8: reproducibility ------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    files[fs::relative(e.path(), dir).string()] = os.str();
  }
  return files;
}

Outcome reproducibility() {
  Outcome o;
  const auto dir = fs::temp_directory_path() / "doseopt_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto out = dir / "out";
  nlohmann::json cfg = {
      {"seed", 801},
      {"out", out.string()},
      {"verbosity", "quiet"},
      {"sim", {{"n", 1500}, {"d", 5}, {"p", 2}, {"alpha", 2.0}}},
      {"dcnet", {{"width", 16}, {"max_epochs", 40}, {"patience", 10}, {"batch_size", 256}, {"lr_grid", {5e-3, 1e-2}}}},
      {"gps", {{"width", 16}, {"max_epochs", 40}, {"patience", 10}, {"batch_size", 256}, {"lr_grid", {5e-3, 1e-2}}}},
      {"policy", {{"width", 16}, {"restarts", 3}, {"search_budget", 3}, {"max_epochs", 30}, {"patience", 10}}},
      {"eval", {{"table_dims", {5}}, {"alpha_grid", {1.0, 2.0}}, {"p_grid", {2}}, {"quantile_grid", {0.05, 0.1}},
                {"surface_resolution", 41}}}};
  std::ofstream(dir / "cfg.json") << cfg.dump(2);
  auto mlp = cfg;
  mlp["dcnet"]["kind"] = "mlp";
  std::ofstream(dir / "cfg_mlp.json") << mlp.dump(2);
  auto naive = cfg;
  naive["policy"]["mode"] = "naive";
  std::ofstream(dir / "cfg_naive.json") << naive.dump(2);

  const std::vector<std::vector<std::string>> stages = {
      {"generate", "cfg.json"},
      {"train", "--stage", "mu", "cfg.json"},
      {"train", "--stage", "mu", "cfg_mlp.json"},
      {"train", "--stage", "gps", "cfg.json"},
      {"train", "--stage", "policy", "cfg.json"},
      {"train", "--stage", "policy", "cfg_naive.json"},
      {"evaluate", "cfg.json"},
      {"surface", "cfg.json"},
      {"sweep", "cfg.json"}};
  auto run_all = [&]() {
    std::vector<std::map<std::string, std::string>> after;
    for (const auto& s : stages) {
      std::vector<std::string> args{"doseopt"};
      args.insert(args.end(), s.begin(), s.end() - 1);
      args.insert(args.end(), {"--config", (dir / s.back()).string()});
      std::ostringstream sink_out, sink_err;
      const int code = run_cli(args, sink_out, sink_err);
      o.check(code == kExitOk, s.front() + " exit code " + std::to_string(code) + " " + sink_err.str());
      after.push_back(snapshot(out));
    }
    return after;
  };
  const auto first = run_all();
  fs::remove_all(out);
  const auto second = run_all();

  std::size_t compared = 0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (const auto& [name, bytes] : first[s]) {
      // Wall-clock timings are the one intentionally non-deterministic artifact.
      if (fs::path(name).filename() == "timing.json") continue;
      const auto it = second[s].find(name);
      o.check(it != second[s].end() && it->second == bytes, "stage " + std::to_string(s) + " " + name);
      ++compared;
    }
  }
  o.detail << " " << stages.size() << " stages, " << compared << " artifact snapshots compared";
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the dosage-policy pipeline"};
  std::vector<int> only;
  std::vector<unsigned long long> table_seeds{0, 1, 2};
  unsigned long long sweep_seed = 0;
  std::string report_dir;
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--table-seeds", table_seeds, "Benchmark seeds for criterion 6");
  app.add_option("--sweep-seed", sweep_seed, "Benchmark seed for criterion 7");
  app.add_option("--report-dir", report_dir, "Write the benchmark reports of criteria 6 and 7 here");
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7, 8};

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {1, {"generator fidelity", generator_fidelity}},
      {2, {"numerics", numerics}},
      {3, {"spline and flow structure", structure}},
      {4, {"dose-response quality", dose_response_quality}},
      {5, {"constrained-optimum correctness", constrained_optimum}},
      {6, {"benchmark ordering",
           [&] { return table_ordering(table_seeds, report_dir.empty() ? fs::path{} : fs::path(report_dir) / "table"); }}},
      {7, {"robustness sweeps",
           [&] { return robustness(sweep_seed, report_dir.empty() ? fs::path{} : fs::path(report_dir) / "sweeps"); }}},
      {8, {"reproducibility", reproducibility}}};

  bool all = true;
  for (int id : only) {
    const auto& [name, run] = criteria.at(id);
    std::cerr << "criterion " << id << ": " << name << std::endl;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    std::printf("%s %d %s (%.1f min):%s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), minutes_since(t0),
                o.detail.str().c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
