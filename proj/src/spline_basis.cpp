#include "doseopt/spline_basis.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace doseopt {

SplineSpec::SplineSpec(int degree, std::vector<double> interior_knots)
    : degree_(degree), interior_(std::move(interior_knots)) {
  if (degree_ < 0) throw std::invalid_argument("spline degree must be nonnegative");
  for (std::size_t i = 0; i < interior_.size(); ++i) {
    if (!(interior_[i] > 0.0 && interior_[i] < 1.0)) {
      throw std::invalid_argument("interior knots must lie strictly inside (0, 1)");
    }
    if (i > 0 && !(interior_[i] > interior_[i - 1])) {
      throw std::invalid_argument("interior knots must be strictly increasing");
    }
  }
  knots_.assign(static_cast<std::size_t>(degree_ + 1), 0.0);
  knots_.insert(knots_.end(), interior_.begin(), interior_.end());
  knots_.insert(knots_.end(), static_cast<std::size_t>(degree_ + 1), 1.0);
}

namespace {

void check_domain(double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    std::ostringstream os;
    os << "spline argument " << t << " outside [0, 1]";
    throw DomainError(os.str());
  }
}

// Index s of the knot span [u_s, u_{s+1}) containing t; t = 1 maps to the last
// non-degenerate span.
int find_span(const SplineSpec& spec, double t) {
  const auto& u = spec.knots();
  const int n = spec.basis_count() - 1;
  if (t >= u[static_cast<std::size_t>(n + 1)]) return n;
  const auto it = std::upper_bound(u.begin() + spec.degree(), u.begin() + n + 1, t);
  return static_cast<int>(it - u.begin()) - 1;
}

// Non-vanishing basis functions of degree `deg` on span s (triangular table).
std::vector<double> local_basis(const std::vector<double>& u, int s, int deg, double t) {
  std::vector<double> out(static_cast<std::size_t>(deg + 1), 0.0);
  std::vector<double> left(static_cast<std::size_t>(deg + 1)), right(static_cast<std::size_t>(deg + 1));
  out[0] = 1.0;
  for (int j = 1; j <= deg; ++j) {
    left[j] = t - u[static_cast<std::size_t>(s + 1 - j)];
    right[j] = u[static_cast<std::size_t>(s + j)] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double tmp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    out[j] = saved;
  }
  return out;
}

}  // namespace

std::vector<double> eval_basis(const SplineSpec& spec, double t) {
  check_domain(t);
  const int p = spec.degree();
  const int s = find_span(spec, t);
  const auto local = local_basis(spec.knots(), s, p, t);
  std::vector<double> out(static_cast<std::size_t>(spec.basis_count()), 0.0);
  for (int r = 0; r <= p; ++r) out[static_cast<std::size_t>(s - p + r)] = local[r];
  return out;
}

std::vector<double> eval_basis_grad(const SplineSpec& spec, double t) {
  check_domain(t);
  const int p = spec.degree();
  std::vector<double> out(static_cast<std::size_t>(spec.basis_count()), 0.0);
  if (p == 0) return out;
  const auto& u = spec.knots();
  const int s = find_span(spec, t);
  // degree p-1 functions N_{s-p+1..s, p-1} on the same span
  const auto lower = local_basis(u, s, p - 1, t);
  auto lower_at = [&](int i) -> double {
    const int r = i - (s - p + 1);
    return (r >= 0 && r < p) ? lower[static_cast<std::size_t>(r)] : 0.0;
  };
  for (int i = s - p; i <= s; ++i) {
    double d = 0.0;
    const double den1 = u[static_cast<std::size_t>(i + p)] - u[static_cast<std::size_t>(i)];
    const double den2 = u[static_cast<std::size_t>(i + p + 1)] - u[static_cast<std::size_t>(i + 1)];
    if (den1 > 0.0) d += p / den1 * lower_at(i);
    if (den2 > 0.0) d -= p / den2 * lower_at(i + 1);
    out[static_cast<std::size_t>(i)] = d;
  }
  return out;
}

TensorBasisSpec TensorBasisSpec::uniform(std::size_t p, const SplineSpec& spec) {
  if (p == 0) throw std::invalid_argument("tensor basis needs at least one dimension");
  return TensorBasisSpec{std::vector<SplineSpec>(p, spec)};
}

int TensorBasisSpec::total_size() const {
  int n = 1;
  for (const auto& d : dims) n *= d.basis_count();
  return n;
}

namespace {

// out = a (x) b with a's index slowest.
std::vector<double> kron(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out;
  out.reserve(a.size() * b.size());
  for (double x : a) {
    for (double y : b) out.push_back(x * y);
  }
  return out;
}

}  // namespace

std::vector<double> tensor_product(const TensorBasisSpec& spec, std::span<const double> t) {
  if (t.size() != spec.p()) {
    throw DimensionError("tensor_product: got " + std::to_string(t.size()) + " dosages for p=" +
                         std::to_string(spec.p()));
  }
  std::vector<double> out{1.0};
  for (std::size_t j = 0; j < spec.p(); ++j) out = kron(out, eval_basis(spec.dims[j], t[j]));
  return out;
}

Var tensor_basis(const TensorBasisSpec& spec, Var t) {
  const auto n = t.rows();
  const auto p = static_cast<Eigen::Index>(spec.p());
  if (t.cols() != p) {
    throw DimensionError("tensor_basis: t is " + shape_str(t.value()) + ", expected p=" + std::to_string(p));
  }
  const int total = spec.total_size();
  Matrix out(n, total);
  // Per-dimension values and derivatives, kept for the backward pass.
  std::vector<Matrix> vals(static_cast<std::size_t>(p)), ders(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& sj = spec.dims[static_cast<std::size_t>(j)];
    vals[j].resize(n, sj.basis_count());
    ders[j].resize(n, sj.basis_count());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> row{1.0};
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& sj = spec.dims[static_cast<std::size_t>(j)];
      const auto v = eval_basis(sj, t.value()(i, j));
      const auto d = eval_basis_grad(sj, t.value()(i, j));
      for (int k = 0; k < sj.basis_count(); ++k) {
        vals[j](i, k) = v[k];
        ders[j](i, k) = d[k];
      }
      row = kron(row, v);
    }
    out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), total);
  }
  const int it = t.id;
  return t.tape->record(std::move(out), {t}, [it, vals = std::move(vals), ders = std::move(ders)](Tape& tape,
                                                                                                const Matrix& g) {
    const auto n = g.rows();
    const auto p = static_cast<Eigen::Index>(vals.size());
    Matrix gt = Matrix::Zero(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) {
        // d Psi / d t_j: kron with the derivative in slot j
        std::vector<double> row{1.0};
        for (Eigen::Index m = 0; m < p; ++m) {
          const Matrix& src = (m == j) ? ders[m] : vals[m];
          std::vector<double> v(src.row(i).data(), src.row(i).data() + src.cols());
          row = kron(row, v);
        }
        gt(i, j) = g.row(i).dot(Eigen::Map<const Eigen::RowVectorXd>(row.data(), g.cols()));
      }
    }
    tape.accumulate(it, gt);
  });
}

std::vector<SupportGroup> plan_support(const TensorBasisSpec& spec, const Matrix& t) {
  const auto n = t.rows();
  const auto p = static_cast<Eigen::Index>(spec.p());
  if (t.cols() != p) {
    throw DimensionError("plan_support: t is " + shape_str(t) + ", expected p=" + std::to_string(p));
  }
  struct RowBasis {
    std::vector<std::vector<int>> active;
    std::vector<std::vector<double>> vals, ders;
  };
  std::map<std::vector<std::vector<int>>, std::vector<std::size_t>> by_key;
  std::vector<RowBasis> rows(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& rb = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& sj = spec.dims[static_cast<std::size_t>(j)];
      auto v = eval_basis(sj, t(i, j));
      auto d = eval_basis_grad(sj, t(i, j));
      std::vector<int> act;
      for (int k = 0; k < sj.basis_count(); ++k) {
        if (v[k] != 0.0 || d[k] != 0.0) act.push_back(k);
      }
      rb.active.push_back(std::move(act));
      rb.vals.push_back(std::move(v));
      rb.ders.push_back(std::move(d));
    }
    by_key[rb.active].push_back(static_cast<std::size_t>(i));
  }

  std::vector<SupportGroup> groups;
  for (const auto& [key, members] : by_key) {
    SupportGroup g;
    g.rows = members;
    // Tensor-product column indices, first dimension slowest.
    std::vector<std::vector<int>> combos{{}};
    for (Eigen::Index j = 0; j < p; ++j) {
      std::vector<std::vector<int>> next;
      for (const auto& c : combos) {
        for (int k : key[static_cast<std::size_t>(j)]) {
          auto e = c;
          e.push_back(k);
          next.push_back(std::move(e));
        }
      }
      combos = std::move(next);
    }
    for (const auto& c : combos) {
      Eigen::Index flat = 0;
      for (Eigen::Index j = 0; j < p; ++j) flat = flat * spec.dims[static_cast<std::size_t>(j)].basis_count() + c[j];
      g.cols.push_back(flat);
    }
    const auto ng = static_cast<Eigen::Index>(members.size());
    const auto m = static_cast<Eigen::Index>(combos.size());
    g.psi.resize(ng, m);
    g.dpsi.assign(static_cast<std::size_t>(p), Matrix(ng, m));
    for (Eigen::Index r = 0; r < ng; ++r) {
      const auto& rb = rows[static_cast<std::size_t>(members[static_cast<std::size_t>(r)])];
      for (Eigen::Index c = 0; c < m; ++c) {
        const auto& combo = combos[static_cast<std::size_t>(c)];
        double prod = 1.0;
        for (Eigen::Index j = 0; j < p; ++j) prod *= rb.vals[j][combo[j]];
        g.psi(r, c) = prod;
        for (Eigen::Index j = 0; j < p; ++j) {
          double dp = 1.0;
          for (Eigen::Index l = 0; l < p; ++l) dp *= (l == j) ? rb.ders[l][combo[l]] : rb.vals[l][combo[l]];
          g.dpsi[static_cast<std::size_t>(j)](r, c) = dp;
        }
      }
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

}  // namespace doseopt
