#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <tuple>
#include <vector>

#include "slfh/fft.hpp"
#include "slfh/grid.hpp"
#include "slfh/optics.hpp"

namespace slfh {

/// Sampled complex amplitude at the SLM plane.
struct ComplexField {
  ComplexGrid values;
  double pitch = 0.0;
  double wavelength = 0.0;

  /// Phase-only field exp(j phi).
  static ComplexField from_phase(const RealGrid& phase, double pitch, double wavelength) {
    ComplexField u{ComplexGrid(phase.rows(), phase.cols()), pitch, wavelength};
    for (std::size_t i = 0; i < phase.size(); ++i) u.values[i] = std::polar(1.0, phase[i]);
    return u;
  }
};

/// Angular-spectrum transfer function exp(j 2 pi z / lambda * sqrt(1 - |lambda q|^2)),
/// zero for evanescent frequencies. FFT order.
inline ComplexGrid angular_spectrum_kernel(const FrequencyGrid& grid, double z, double wavelength) {
  ComplexGrid h(grid.rows, grid.cols);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  // Split the phase into the on-axis carrier (reduced mod 2 pi) and the
  // small excess sqrt(1 - a) - 1 = -a / (1 + sqrt(1 - a)) to keep precision.
  const double cycles = z / wavelength;
  const double carrier = two_pi * (cycles - std::round(cycles));
  const double l2 = wavelength * wavelength;
  for (std::size_t r = 0; r < grid.rows; ++r) {
    const double fy = grid.fy(r);
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const double fx = grid.fx(c);
      const double a = l2 * (fx * fx + fy * fy);
      if (a >= 1.0) continue;
      const double excess = -a / (1.0 + std::sqrt(1.0 - a));
      h(r, c) = std::polar(1.0, carrier + two_pi * cycles * excess);
    }
  }
  return h;
}

/// Optional low-pass applied on top of the pupil: frequencies with
/// |q| > relative_radius * band limit are discarded.
struct BandPass {
  bool enabled = false;
  double relative_radius = 1.0;

  friend bool operator==(const BandPass&, const BandPass&) = default;
};

struct KernelOptions {
  MaskOptions mask;
  BandPass bandpass;
};

/// Pupil aperture times defocus transfer function, in frequency space.
struct PropagationKernel {
  ComplexGrid values;
  PupilState pupil;
  double wavelength = 0.0;
  bool clipped = false;
};

inline PropagationKernel make_kernel(const FrequencyGrid& grid, const PupilState& p,
                                     double wavelength, double focal_length,
                                     const KernelOptions& options = {}) {
  const auto mask = pupil_mask(grid, p, wavelength, focal_length, options.mask);
  PropagationKernel kernel{angular_spectrum_kernel(grid, p.focus, wavelength), p, wavelength,
                           mask.clipped};
  const double cutoff = options.bandpass.relative_radius * grid.band_limit();
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      double m = mask.values(r, c);
      if (options.bandpass.enabled && std::hypot(grid.fx(c), grid.fy(r)) > cutoff) m = 0.0;
      kernel.values(r, c) *= m;
    }
  }
  return kernel;
}

/// v = IFFT(K * U) for a precomputed unitary spectrum U = FFT(u).
inline ComplexGrid apply_kernel_to_spectrum(const ComplexGrid& spectrum, const PropagationKernel& k) {
  require_same_shape(spectrum, k.values, "apply_kernel_to_spectrum");
  ComplexGrid v(spectrum.rows(), spectrum.cols());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = k.values[i] * spectrum[i];
  ifft2(v);
  return v;
}

/// Linear part of the wave projection: v = IFFT(K * FFT(u)).
inline ComplexGrid project_linear(const ComplexGrid& u, const PropagationKernel& k) {
  return apply_kernel_to_spectrum(fft2_copy(u), k);
}

/// Adjoint of project_linear: IFFT(conj(K) * FFT(g)).
inline ComplexGrid adjoint_linear(const ComplexGrid& g, const PropagationKernel& k) {
  require_same_shape(g, k.values, "adjoint_linear");
  ComplexGrid w = fft2_copy(g);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] *= std::conj(k.values[i]);
  ifft2(w);
  return w;
}

namespace detail {

inline void check_field(const ComplexGrid& u, double pitch, const OpticalConfig& config) {
  if (u.rows() != config.rows || u.cols() != config.cols)
    throw std::invalid_argument("field resolution does not match the optical configuration");
  if (pitch != config.slm_pitch)
    throw std::invalid_argument("field pitch does not match the SLM pitch");
}

}  // namespace detail

/// Perceived intensity |IFFT(K(q, p) * FFT(u))|^2 under pupil state p.
inline RealGrid project_wave(const ComplexField& u, const PupilState& p, const OpticalConfig& config,
                             const KernelOptions& options = {}) {
  detail::check_field(u.values, u.pitch, config);
  const auto k = make_kernel(FrequencyGrid::of(config), p, u.wavelength, config.focal_length, options);
  return intensity(project_linear(u.values, k));
}

inline ComplexField adjoint_project_wave(const ComplexGrid& g, const PupilState& p,
                                         const OpticalConfig& config, double wavelength,
                                         const KernelOptions& options = {}) {
  detail::check_field(g, config.slm_pitch, config);
  const auto k = make_kernel(FrequencyGrid::of(config), p, wavelength, config.focal_length, options);
  return {adjoint_linear(g, k), config.slm_pitch, wavelength};
}

/// Thread-safe memo of kernels keyed by parameters quantized to 1 nm
/// (wavelength to 1 pm).
class KernelCache {
 public:
  KernelCache(FrequencyGrid grid, double focal_length, KernelOptions options)
      : grid_(grid), focal_length_(focal_length), options_(options) {}

  std::shared_ptr<const PropagationKernel> get(const PupilState& p, double wavelength) {
    const auto q = [](double v, double scale) { return std::llround(v * scale); };
    const Key key{q(p.shift.x, 1e9), q(p.shift.y, 1e9), q(p.focus, 1e9), q(p.diameter, 1e9),
                  q(wavelength, 1e12)};
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    auto kernel = std::make_shared<const PropagationKernel>(
        make_kernel(grid_, p, wavelength, focal_length_, options_));
    std::lock_guard lock(mutex_);
    return cache_.emplace(key, std::move(kernel)).first->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  using Key = std::tuple<long long, long long, long long, long long, long long>;
  FrequencyGrid grid_;
  double focal_length_;
  KernelOptions options_;
  mutable std::mutex mutex_;
  std::map<Key, std::shared_ptr<const PropagationKernel>> cache_;
};

/// Non-overlapping block x block mean pooling.
inline RealGrid pool(const RealGrid& img, std::size_t block = 2) {
  if (block == 0 || img.rows() % block != 0 || img.cols() % block != 0)
    throw std::invalid_argument("pooling requires dimensions divisible by the block size");
  RealGrid out(img.rows() / block, img.cols() / block, 0.0);
  const double norm = 1.0 / static_cast<double>(block * block);
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c) out(r / block, c / block) += img(r, c);
  for (auto& v : out) v *= norm;
  return out;
}

/// Temporal mean over frames followed by block pooling (speckle averaging).
inline RealGrid average_intensity(std::span<const RealGrid> frames, std::size_t block = 2) {
  if (frames.empty()) throw std::invalid_argument("average_intensity needs at least one frame");
  RealGrid mean(frames[0].rows(), frames[0].cols(), 0.0);
  for (const auto& f : frames) {
    require_same_shape(mean, f, "average_intensity");
    for (std::size_t i = 0; i < f.size(); ++i) mean[i] += f[i];
  }
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (auto& v : mean) v *= inv;
  return pool(mean, block);
}

}  // namespace slfh
