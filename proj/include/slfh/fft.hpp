#pragma once

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "slfh/grid.hpp"

namespace slfh {

namespace detail {

// FFTW planning is not thread-safe; execution of an existing plan on new
// arrays is. Plans are created once per (shape, direction) with
// FFTW_ESTIMATE so the chosen algorithm (and therefore every output bit) does
// not depend on timing measurements.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan get(std::size_t rows, std::size_t cols, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(rows, cols, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    ComplexGrid scratch(rows, cols);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), buf, buf,
                                      sign, FFTW_ESTIMATE);
    plans_.emplace(key, plan);
    return plan;
  }

  ~FftPlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  FftPlanCache() = default;
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

inline void execute_unitary(ComplexGrid& g, int sign) {
  if (g.empty()) return;
  fftw_plan plan = FftPlanCache::instance().get(g.rows(), g.cols(), sign);
  auto* buf = reinterpret_cast<fftw_complex*>(g.data());
  fftw_execute_dft(plan, buf, buf);
  const double scale = 1.0 / std::sqrt(static_cast<double>(g.size()));
  for (auto& v : g) v *= scale;
}

}  // namespace detail

/// In-place unitary forward DFT (kernel exp(-j 2 pi k n / N)).
inline void fft2(ComplexGrid& g) { detail::execute_unitary(g, FFTW_FORWARD); }

/// In-place unitary inverse DFT; the exact adjoint of fft2.
inline void ifft2(ComplexGrid& g) { detail::execute_unitary(g, FFTW_BACKWARD); }

inline ComplexGrid fft2_copy(ComplexGrid g) {
  fft2(g);
  return g;
}

inline ComplexGrid ifft2_copy(ComplexGrid g) {
  ifft2(g);
  return g;
}

}  // namespace slfh
