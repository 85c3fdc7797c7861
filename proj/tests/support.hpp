#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "slfh/grid.hpp"
#include "slfh/optics.hpp"

namespace slfh::test {

inline OpticalConfig config(std::size_t rows, std::size_t cols,
                            std::vector<double> wavelengths = {nanometers(440)}) {
  OpticalConfig c;
  c.wavelengths = std::move(wavelengths);
  c.rows = rows;
  c.cols = cols;
  return c;
}

inline ComplexGrid random_field(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  ComplexGrid g(rows, cols);
  for (auto& v : g) v = {n(rng), n(rng)};
  return g;
}

inline RealGrid random_real(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = 0.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  RealGrid g(rows, cols);
  for (auto& v : g) v = u(rng);
  return g;
}

inline double rel_diff(Complex a, Complex b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("slfh_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace slfh::test
