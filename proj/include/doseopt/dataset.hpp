#pragma once

#include "doseopt/diffcore.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace doseopt {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Split { train, val, test };

const char* to_string(Split s);
Split parse_split(const std::string& s);

struct Dataset {
  Matrix x;  // n x d
  Matrix t;  // n x p, entries in [0, 1]
  Vector y;  // n
  std::vector<Split> split;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index d() const { return x.cols(); }
  Eigen::Index p() const { return t.cols(); }

  std::vector<std::size_t> indices(Split s) const;
  Matrix x_rows(const std::vector<std::size_t>& idx) const;
  Matrix t_rows(const std::vector<std::size_t>& idx) const;
  Vector y_rows(const std::vector<std::size_t>& idx) const;

  void validate() const;
};

// Seeded 64/16/20 assignment.
std::vector<Split> assign_splits(std::size_t n, unsigned long long seed);

// CSV schema: x_0..x_{d-1}, t_0..t_{p-1}, y, split
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

// Plain numeric CSV with a header row; used for user-supplied covariates.
Matrix read_numeric_csv(const std::filesystem::path& path);

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx);

}  // namespace doseopt
