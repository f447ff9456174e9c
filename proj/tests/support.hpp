#pragma once

// Small builders shared by the unit tests and the acceptance binary.

#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "supcbm/supcbm.hpp"

namespace testing_support {

inline supcbm::InterventionMatrix random_matrix(std::mt19937_64& rng, std::size_t M, std::size_t L, double density = 0.4) {
  std::bernoulli_distribution on(density);
  supcbm::InterventionMatrix m(M, L);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < L; ++j) m.set(i, j, on(rng));
  return m;
}

inline std::vector<std::set<std::size_t>> column_sets(const supcbm::InterventionMatrix& m) {
  std::vector<std::set<std::size_t>> cols(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (m(i, j)) cols[j].insert(i);
  return cols;
}

inline std::vector<std::vector<double>> rows_of(const supcbm::Matrix& m) {
  std::vector<std::vector<double>> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

/// Flattened [W row-major, b] for finite differences, and back.
inline std::vector<double> pack(const supcbm::CBLayer& layer) {
  std::vector<double> p(layer.weights.flat().begin(), layer.weights.flat().end());
  p.insert(p.end(), layer.bias.begin(), layer.bias.end());
  return p;
}

inline supcbm::CBLayer unpack(const std::vector<double>& p, std::size_t M, std::size_t d) {
  supcbm::CBLayer layer{supcbm::Matrix(M, d), std::vector<double>(M)};
  std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(M * d), layer.weights.flat().begin());
  std::copy(p.begin() + static_cast<std::ptrdiff_t>(M * d), p.end(), layer.bias.begin());
  return layer;
}

inline std::vector<double> binary_vector(std::mt19937_64& rng, std::size_t n) {
  std::bernoulli_distribution on(0.5);
  std::vector<double> v(n);
  for (double& x : v) x = on(rng) ? 1.0 : 0.0;
  return v;
}

/// Unique scratch directory removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("supcbm-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

}  // namespace testing_support
