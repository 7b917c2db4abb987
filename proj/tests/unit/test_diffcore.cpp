#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "doseopt/diffcore.hpp"
#include "doseopt/nn.hpp"
#include "fd_oracle.hpp"

#include <cmath>

using namespace doseopt;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * uniform01(rng);
  return m;
}

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

// Checks d/dx sum(op(x) .* weights) against central differences.
void check_unary(const std::function<Var(Var)>& op, const Matrix& x, unsigned long long seed) {
  Rng rng(seed);
  Tape probe_tape;
  const Matrix out_shape = op(probe_tape.constant(x)).value();
  const Matrix w = random_matrix(out_shape.rows(), out_shape.cols(), rng);
  auto value = [&](const Matrix& in) {
    Tape t;
    return op(t.constant(in)).value().cwiseProduct(w).sum();
  };
  Tape tape;
  Var xv = tape.variable(x);
  tape.backward(sum(mul(op(xv), tape.constant(w))));
  const double err = fd::relative_error(tape.grad(xv), fd::gradient(value, x));
  CHECK(err <= 1e-5);
}

void check_binary(const std::function<Var(Var, Var)>& op, const Matrix& a, const Matrix& b, unsigned long long seed) {
  Rng rng(seed);
  Tape probe_tape;
  const Matrix out_shape = op(probe_tape.constant(a), probe_tape.constant(b)).value();
  const Matrix w = random_matrix(out_shape.rows(), out_shape.cols(), rng);
  Tape tape;
  Var av = tape.variable(a);
  Var bv = tape.variable(b);
  tape.backward(sum(mul(op(av, bv), tape.constant(w))));
  auto va = [&](const Matrix& in) {
    Tape t;
    return op(t.constant(in), t.constant(b)).value().cwiseProduct(w).sum();
  };
  auto vb = [&](const Matrix& in) {
    Tape t;
    return op(t.constant(a), t.constant(in)).value().cwiseProduct(w).sum();
  };
  CHECK(fd::relative_error(tape.grad(av), fd::gradient(va, a)) <= 1e-5);
  CHECK(fd::relative_error(tape.grad(bv), fd::gradient(vb, b)) <= 1e-5);
}

}  // namespace

TEST_CASE("forward_dense examples") {
  Tape t;
  SUBCASE("sigmoid of zero") {
    Var out = forward_dense(t.constant(m1(0)), t.constant(m1(1)), t.constant(m1(0)), Activation::sigmoid);
    CHECK(out.value()(0, 0) == doctest::Approx(0.5));
  }
  SUBCASE("identity weights with relu") {
    Matrix in(1, 2);
    in << 1, 2;
    Var out = forward_dense(t.constant(in), t.constant(Matrix::Identity(2, 2)), t.constant(Matrix::Zero(1, 2)),
                            Activation::relu);
    CHECK(out.value()(0, 0) == 1.0);
    CHECK(out.value()(0, 1) == 2.0);
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      forward_dense(t.constant(Matrix::Zero(1, 3)), t.constant(Matrix::Zero(2, 2)), t.constant(Matrix::Zero(1, 2)),
                    Activation::relu);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("1x3") != std::string::npos);
      CHECK(msg.find("2x2") != std::string::npos);
    }
  }
}

TEST_CASE("random dense layer gradient matches finite differences") {
  Rng rng(7);
  const Matrix x = random_matrix(3, 4, rng);
  const Matrix w = random_matrix(4, 5, rng);
  const Matrix b = random_matrix(1, 5, rng);
  for (auto act : {Activation::identity, Activation::sigmoid, Activation::relu}) {
    auto value = [&](const Matrix& wi) {
      Tape t;
      return sum(forward_dense(t.constant(x), t.constant(wi), t.constant(b), act)).value()(0, 0);
    };
    Tape tape;
    Var wv = tape.variable(w);
    tape.backward(sum(forward_dense(tape.constant(x), wv, tape.constant(b), act)));
    CHECK(fd::relative_error(tape.grad(wv), fd::gradient(value, w)) <= 1e-6);
  }
}

TEST_CASE("backward on scalar examples") {
  SUBCASE("x^2 at 3") {
    Tape t;
    Var x = t.variable(m1(3));
    t.backward(sum(square(x)));
    CHECK(t.grad(x)(0, 0) == doctest::Approx(6.0));
  }
  SUBCASE("sigmoid at 0") {
    Tape t;
    Var x = t.variable(m1(0));
    t.backward(sum(sigmoid(x)));
    CHECK(t.grad(x)(0, 0) == doctest::Approx(0.25));
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tape t;
    Var x = t.variable(Matrix::Zero(2, 1));
    CHECK_THROWS_AS(t.backward(x), ContractError);
  }
  SUBCASE("unreachable leaves hold zero") {
    ParamSet ps;
    auto& a = ps.add("a", m1(2));
    auto& b = ps.add("b", m1(5));
    Tape t;
    Var av = t.param(a);
    t.param(b);
    t.backward(sum(square(av)));
    CHECK(a.grad(0, 0) == doctest::Approx(4.0));
    CHECK(b.grad(0, 0) == 0.0);
  }
}

TEST_CASE("every primitive passes a finite-difference check") {
  Rng rng(11);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix b = random_matrix(4, 3, rng);
  const Matrix pos = random_matrix(4, 3, rng, 0.5, 2.0);
  // relu/clamp: keep inputs away from the kinks
  Matrix away = random_matrix(4, 3, rng, 0.1, 1.0);
  for (Eigen::Index i = 0; i < away.size(); i += 2) away.data()[i] *= -1.0;

  check_binary([](Var x, Var y) { return matmul(x, y); }, a, random_matrix(3, 2, rng), 1);
  check_binary([](Var x, Var y) { return add(x, y); }, a, b, 2);
  check_binary([](Var x, Var y) { return sub(x, y); }, a, b, 3);
  check_binary([](Var x, Var y) { return mul(x, y); }, a, b, 4);
  check_binary([](Var x, Var y) { return add_row(x, y); }, a, random_matrix(1, 3, rng), 5);
  check_binary([](Var x, Var y) { return mul_col(x, y); }, a, random_matrix(4, 1, rng), 6);
  check_binary([](Var x, Var y) { return concat_cols({x, y}); }, a, random_matrix(4, 2, rng), 7);
  check_unary([](Var x) { return scale(x, -2.5); }, a, 8);
  check_unary([](Var x) { return add_scalar(x, 0.7); }, a, 9);
  check_unary([](Var x) { return relu(x); }, away, 10);
  check_unary([](Var x) { return sigmoid(x); }, a, 11);
  check_unary([](Var x) { return exp(x); }, a, 12);
  check_unary([](Var x) { return log(x); }, pos, 13);
  check_unary([](Var x) { return softplus(x); }, a, 14);
  check_unary([](Var x) { return square(x); }, a, 15);
  check_unary([](Var x) { return clamp(x, -0.05, 0.05); }, away, 16);
  check_unary([](Var x) { return softmax_rows(x); }, a, 17);
  check_unary([](Var x) { return sum(x); }, a, 18);
  check_unary([](Var x) { return mean(x); }, a, 19);
  check_unary([](Var x) { return row_sum(x); }, a, 20);
  check_unary([](Var x) { return slice_cols(x, 1, 2); }, a, 21);
}

TEST_CASE("composed MLP loss gradient matches finite differences") {
  Rng rng(3);
  Mlp net("net", {4, 6, 6, 2}, Activation::sigmoid, Activation::identity);
  ParamSet ps;
  net.init(ps, rng);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix y = random_matrix(5, 2, rng);
  Tape tape;
  tape.backward(mean(square(sub(net.forward(tape, ps, tape.constant(x)), tape.constant(y)))));
  for (auto& p : ps) {
    auto value = [&](const Matrix& v) {
      ParamSet copy = ps;
      copy.at(p.name).value = v;
      Tape t;
      return mean(square(sub(net.forward(t, copy, t.constant(x)), t.constant(y)))).value()(0, 0);
    };
    CHECK(fd::relative_error(p.grad, fd::gradient(value, p.value)) <= 1e-5);
  }
}

TEST_CASE("tape linearity: gradient of a sum equals the sum of gradients") {
  Rng rng(5);
  const Matrix x0 = random_matrix(3, 3, rng);
  auto loss_a = [](Var x) { return sum(sigmoid(x)); };
  auto loss_b = [](Var x) { return mean(square(x)); };
  Tape t1;
  Var x1 = t1.variable(x0);
  t1.backward(add(loss_a(x1), loss_b(x1)));
  Tape t2;
  Var x2 = t2.variable(x0);
  t2.backward(loss_a(x2));
  Tape t3;
  Var x3 = t3.variable(x0);
  t3.backward(loss_b(x3));
  CHECK((t1.grad(x1) - t2.grad(x2) - t3.grad(x3)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("parameters accumulate gradients across backward passes") {
  ParamSet ps;
  auto& w = ps.add("w", m1(1.5));
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.backward(sum(square(t.param(w))));
  }
  CHECK(w.grad(0, 0) == doctest::Approx(6.0));
  ps.zero_grad();
  CHECK(w.grad(0, 0) == 0.0);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamSet ps;
    ps.add("w", Matrix::Constant(2, 2, 0.3));
    Adam adam(AdamConfig{.lr = 0.1});
    adam.step(ps);
    CHECK(ps.at("w").value.isApproxToConstant(0.3, 0.0));
  }
  SUBCASE("first step moves by about lr") {
    ParamSet ps;
    auto& w = ps.add("w", m1(1.0));
    w.grad(0, 0) = 1.0;
    Adam adam(AdamConfig{.lr = 0.1});
    adam.step(ps);
    // bias-corrected moments are exactly g and g^2 at t = 1
    CHECK(w.value(0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(adam.steps() == 1);
  }
  SUBCASE("identical parameters with identical gradients update identically") {
    ParamSet ps;
    auto& a = ps.add("a", Matrix::Constant(1, 3, 0.2));
    auto& b = ps.add("b", Matrix::Constant(1, 3, 0.2));
    Adam adam;
    for (int i = 0; i < 5; ++i) {
      a.grad.setConstant(0.1 * i - 0.2);
      b.grad.setConstant(0.1 * i - 0.2);
      adam.step(ps);
    }
    CHECK((a.value - b.value).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("non-finite gradient skips the parameter and counts a warning") {
    ParamSet ps;
    auto& a = ps.add("a", m1(1.0));
    auto& b = ps.add("b", m1(1.0));
    a.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    b.grad(0, 0) = 1.0;
    Adam adam(AdamConfig{.lr = 0.1});
    adam.step(ps);
    CHECK(a.value(0, 0) == 1.0);
    CHECK(b.value(0, 0) < 1.0);
    CHECK(adam.skipped() == 1);
  }
  SUBCASE("lazy entry updates leave other entries alone") {
    Parameter p("lambda", Matrix::Constant(4, 1, 2.0));
    p.grad.setConstant(1.0);
    Adam adam(AdamConfig{.lr = 0.01});
    const std::vector<std::size_t> rows{1, 3};
    adam.step_entries(p, rows);
    CHECK(p.value(0, 0) == 2.0);
    CHECK(p.value(2, 0) == 2.0);
    CHECK(p.value(1, 0) < 2.0);
    CHECK(p.value(3, 0) == p.value(1, 0));
  }
}

TEST_CASE("identical seeds give bit-identical trajectories") {
  auto run = [] {
    Rng rng(99);
    Mlp net("net", {3, 8, 1}, Activation::relu, Activation::identity);
    ParamSet ps;
    net.init(ps, rng);
    Adam adam(AdamConfig{.lr = 1e-2});
    const Matrix x = random_matrix(16, 3, rng);
    const Matrix y = random_matrix(16, 1, rng);
    for (int i = 0; i < 20; ++i) {
      ps.zero_grad();
      Tape t;
      t.backward(mean(square(sub(net.forward(t, ps, t.constant(x)), t.constant(y)))));
      adam.step(ps);
    }
    return ps;
  };
  const auto a = run();
  const auto b = run();
  auto ib = b.begin();
  for (const auto& p : a) {
    CHECK((p.value - ib->value).cwiseAbs().maxCoeff() == 0.0);
    ++ib;
  }
}

TEST_CASE("parameter JSON round trip is bit-exact") {
  Rng rng(1);
  ParamSet ps;
  ps.add("w", random_matrix(3, 4, rng, -1e3, 1e3));
  ps.add("tiny", Matrix::Constant(1, 2, 1e-300));
  ps.add("third", m1(1.0 / 3.0));
  const auto text = ps.to_json().dump();
  const auto back = ParamSet::from_json(nlohmann::json::parse(text));
  auto it = back.begin();
  for (const auto& p : ps) {
    CHECK(p.name == it->name);
    CHECK(p.value.rows() == it->value.rows());
    CHECK(std::memcmp(p.value.data(), it->value.data(), sizeof(double) * p.value.size()) == 0);
    ++it;
  }
}
