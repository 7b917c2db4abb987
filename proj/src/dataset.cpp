#include "doseopt/dataset.hpp"

#include "doseopt/nn.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace doseopt {

const char* to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split label '" + s + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

Matrix Dataset::x_rows(const std::vector<std::size_t>& idx) const { return gather_rows(x, idx); }
Matrix Dataset::t_rows(const std::vector<std::size_t>& idx) const { return gather_rows(t, idx); }

Vector Dataset::y_rows(const std::vector<std::size_t>& idx) const {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(idx[i]));
  return out;
}

void Dataset::validate() const {
  const auto rows = x.rows();
  if (t.rows() != rows || y.size() != rows || static_cast<Eigen::Index>(split.size()) != rows) {
    throw DataError("dataset columns disagree on row count");
  }
  if ((t.array() < 0.0).any() || (t.array() > 1.0).any()) throw DataError("dosages must lie in [0, 1]");
}

std::vector<Split> assign_splits(std::size_t n, unsigned long long seed) {
  Rng rng(seed);
  const auto order = shuffled_indices(n, rng);
  const auto n_train = static_cast<std::size_t>(0.64 * static_cast<double>(n) + 0.5);
  const auto n_val = static_cast<std::size_t>(0.16 * static_cast<double>(n) + 0.5);
  std::vector<Split> out(n, Split::test);
  for (std::size_t r = 0; r < n; ++r) {
    out[order[r]] = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
  }
  return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + s + "' as a number");
  }
  return v;
}

void write_number(std::ostream& os, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  os.write(buf, res.ptr - buf);
}

}  // namespace

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  for (Eigen::Index j = 0; j < ds.d(); ++j) os << "x_" << j << ',';
  for (Eigen::Index j = 0; j < ds.p(); ++j) os << "t_" << j << ',';
  os << "y,split\n";
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index j = 0; j < ds.d(); ++j) {
      write_number(os, ds.x(i, j));
      os << ',';
    }
    for (Eigen::Index j = 0; j < ds.p(); ++j) {
      write_number(os, ds.t(i, j));
      os << ',';
    }
    write_number(os, ds.y(i));
    os << ',' << to_string(ds.split[static_cast<std::size_t>(i)]) << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + " is empty");
  const auto header = split_line(line);
  Eigen::Index d = 0, p = 0;
  for (const auto& h : header) {
    if (h.rfind("x_", 0) == 0) ++d;
    if (h.rfind("t_", 0) == 0) ++p;
  }
  if (static_cast<Eigen::Index>(header.size()) != d + p + 2 || header[header.size() - 2] != "y" ||
      header.back() != "split") {
    throw DataError(path.string() + ": header must be x_*, t_*, y, split");
  }
  std::vector<std::vector<double>> rows;
  std::vector<Split> splits;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, expected " + std::to_string(header.size()));
    }
    std::vector<double> r;
    for (std::size_t c = 0; c + 1 < cells.size(); ++c) r.push_back(parse_double(cells[c], line_no));
    rows.push_back(std::move(r));
    splits.push_back(parse_split(cells.back()));
  }
  Dataset ds;
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.x.resize(n, d);
  ds.t.resize(n, p);
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d; ++j) ds.x(i, j) = r[static_cast<std::size_t>(j)];
    for (Eigen::Index j = 0; j < p; ++j) ds.t(i, j) = r[static_cast<std::size_t>(d + j)];
    ds.y(i) = r[static_cast<std::size_t>(d + p)];
  }
  ds.split = std::move(splits);
  ds.validate();
  return ds;
}

Matrix read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + " is empty");
  const auto width = split_line(line).size();
  std::vector<double> values;
  std::size_t n = 0, line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != width) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, header has " + std::to_string(width));
    }
    for (const auto& c : cells) values.push_back(parse_double(c, line_no));
    ++n;
  }
  return Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
}

}  // namespace doseopt
