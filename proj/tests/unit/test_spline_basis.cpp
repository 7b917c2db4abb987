#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "doseopt/nn.hpp"
#include "doseopt/spline_basis.hpp"
#include "fd_oracle.hpp"

#include <numeric>

using namespace doseopt;

namespace {

// Textbook recursion N_{i,p}(t) with 0/0 := 0; the right endpoint belongs to
// the last non-degenerate span.
double cox_de_boor(const std::vector<double>& u, int i, int p, double t) {
  if (p == 0) {
    const double lo = u[static_cast<std::size_t>(i)], hi = u[static_cast<std::size_t>(i + 1)];
    if (t >= lo && t < hi) return 1.0;
    if (t == 1.0 && hi == 1.0 && lo < hi) return 1.0;
    return 0.0;
  }
  double out = 0.0;
  const double d1 = u[static_cast<std::size_t>(i + p)] - u[static_cast<std::size_t>(i)];
  const double d2 = u[static_cast<std::size_t>(i + p + 1)] - u[static_cast<std::size_t>(i + 1)];
  if (d1 > 0) out += (t - u[static_cast<std::size_t>(i)]) / d1 * cox_de_boor(u, i, p - 1, t);
  if (d2 > 0) out += (u[static_cast<std::size_t>(i + p + 1)] - t) / d2 * cox_de_boor(u, i + 1, p - 1, t);
  return out;
}

const std::vector<double> kKnots{0, 0, 0, 1.0 / 3.0, 2.0 / 3.0, 1, 1, 1};

}  // namespace

TEST_CASE("default SplineSpec: degree 2, knots {1/3, 2/3}, five functions") {
  SplineSpec s;
  CHECK(s.degree() == 2);
  CHECK(s.basis_count() == 5);
  CHECK(s.knots() == kKnots);
}

TEST_CASE("invalid knot vectors are rejected") {
  CHECK_THROWS_AS(SplineSpec(2, {0.5, 0.4}), std::invalid_argument);
  CHECK_THROWS_AS(SplineSpec(2, {0.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(SplineSpec(2, {0.5, 1.0}), std::invalid_argument);
}

TEST_CASE("eval_basis endpoints are one-hot") {
  SplineSpec s;
  CHECK(eval_basis(s, 0.0) == std::vector<double>{1, 0, 0, 0, 0});
  CHECK(eval_basis(s, 1.0) == std::vector<double>{0, 0, 0, 0, 1});
}

TEST_CASE("eval_basis at 0.5 matches the recursion oracle") {
  SplineSpec s;
  const auto b = eval_basis(s, 0.5);
  double total = 0.0;
  for (int i = 0; i < 5; ++i) {
    CHECK(b[i] == doctest::Approx(cox_de_boor(kKnots, i, 2, 0.5)).epsilon(1e-14));
    total += b[i];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  // support on functions 2..4 (1-indexed)
  CHECK(b[0] == 0.0);
  CHECK(b[4] == 0.0);
  CHECK(b[1] > 0.0);
  CHECK(b[2] > 0.0);
  CHECK(b[3] > 0.0);
}

TEST_CASE("eval_basis matches the oracle on a dense grid, with partition of unity and local support") {
  SplineSpec s;
  for (int g = 0; g <= 1000; ++g) {
    const double t = g / 1000.0;
    const auto b = eval_basis(s, t);
    int nonzero = 0;
    double total = 0.0;
    for (int i = 0; i < 5; ++i) {
      CHECK(b[i] == doctest::Approx(cox_de_boor(kKnots, i, 2, t)).epsilon(1e-12));
      CHECK(b[i] >= 0.0);
      nonzero += b[i] != 0.0;
      total += b[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
    CHECK(nonzero <= 3);
  }
}

TEST_CASE("domain errors outside [0, 1]") {
  SplineSpec s;
  CHECK_THROWS_AS(eval_basis(s, -1e-12), DomainError);
  CHECK_THROWS_AS(eval_basis(s, 1.0 + 1e-12), DomainError);
  CHECK_THROWS_AS(eval_basis_grad(s, 1.5), DomainError);
}

TEST_CASE("eval_basis_grad") {
  SplineSpec s;
  SUBCASE("derivatives sum to zero") {
    for (int g = 0; g <= 200; ++g) {
      const auto d = eval_basis_grad(s, g / 200.0);
      CHECK(std::abs(std::accumulate(d.begin(), d.end(), 0.0)) <= 1e-12);
    }
  }
  SUBCASE("matches finite differences away from knots") {
    for (double t : {0.1, 0.25, 0.5, 0.6, 0.9}) {
      const auto d = eval_basis_grad(s, t);
      for (int i = 0; i < 5; ++i) {
        const double num = fd::derivative([&](double v) { return eval_basis(s, v)[static_cast<std::size_t>(i)]; }, t);
        CHECK(d[i] == doctest::Approx(num).epsilon(1e-6).scale(1.0));
      }
    }
  }
  SUBCASE("continuous across the interior knots") {
    for (double knot : {1.0 / 3.0, 2.0 / 3.0}) {
      const auto left = eval_basis_grad(s, std::nextafter(knot, 0.0));
      const auto right = eval_basis_grad(s, knot);
      for (int i = 0; i < 5; ++i) CHECK(std::abs(left[i] - right[i]) <= 1e-9);
    }
  }
}

TEST_CASE("tensor_product") {
  SplineSpec s;
  SUBCASE("p = 1 is the plain basis") {
    const auto spec = TensorBasisSpec::uniform(1);
    const std::vector<double> t{0.37};
    CHECK(tensor_product(spec, t) == eval_basis(s, 0.37));
  }
  SUBCASE("p = 2 endpoint one-hot, first dimension slowest") {
    const auto spec = TensorBasisSpec::uniform(2);
    CHECK(spec.total_size() == 25);
    const std::vector<double> t{0.0, 1.0};
    const auto psi = tensor_product(spec, t);
    for (int k = 0; k < 25; ++k) CHECK(psi[k] == (k == 4 ? 1.0 : 0.0));
    const std::vector<double> t2{1.0, 0.0};
    CHECK(tensor_product(spec, t2)[20] == 1.0);
  }
  SUBCASE("p = 2 sums to one at random points") {
    const auto spec = TensorBasisSpec::uniform(2);
    Rng rng(4);
    for (int r = 0; r < 100; ++r) {
      const std::vector<double> t{uniform01(rng), uniform01(rng)};
      const auto psi = tensor_product(spec, t);
      CHECK(std::abs(std::accumulate(psi.begin(), psi.end(), 0.0) - 1.0) <= 1e-12);
    }
  }
  SUBCASE("length mismatch") {
    const auto spec = TensorBasisSpec::uniform(2);
    const std::vector<double> t{0.5};
    CHECK_THROWS_AS(tensor_product(spec, t), DimensionError);
  }
}

TEST_CASE("tensor_basis tape primitive: values and gradient") {
  const auto spec = TensorBasisSpec::uniform(3);
  Rng rng(8);
  Matrix t(4, 3);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 0.05 + 0.9 * uniform01(rng);
  Matrix w(4, spec.total_size());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform01(rng) - 0.5;

  Tape tape;
  Var tv = tape.variable(t);
  Var psi = tensor_basis(spec, tv);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const auto ref = tensor_product(spec, std::span<const double>(t.row(i).data(), 3));
    for (int k = 0; k < spec.total_size(); ++k) CHECK(psi.value()(i, k) == doctest::Approx(ref[k]).epsilon(1e-14));
  }
  tape.backward(sum(mul(psi, tape.constant(w))));
  auto value = [&](const Matrix& tin) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < tin.rows(); ++i) {
      const auto ref = tensor_product(spec, std::span<const double>(tin.row(i).data(), 3));
      for (int k = 0; k < spec.total_size(); ++k) s += w(i, k) * ref[k];
    }
    return s;
  };
  CHECK(fd::relative_error(tape.grad(tv), fd::gradient(value, t)) <= 1e-6);
}
