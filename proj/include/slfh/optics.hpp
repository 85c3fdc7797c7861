#pragma once

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "slfh/error.hpp"
#include "slfh/grid.hpp"

namespace slfh {

// Lengths are meters everywhere inside the library.
constexpr double millimeters(double v) { return v * 1e-3; }
constexpr double micrometers(double v) { return v * 1e-6; }
constexpr double nanometers(double v) { return v * 1e-9; }
constexpr double to_millimeters(double meters) { return meters * 1e3; }
constexpr double to_micrometers(double meters) { return meters * 1e6; }
constexpr double to_nanometers(double meters) { return meters * 1e9; }

struct Vec2 {
  double x = 0.0;  // along columns
  double y = 0.0;  // along rows

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
  double norm() const { return std::hypot(x, y); }
};

struct OpticalConfig {
  std::vector<double> wavelengths;  // one per color channel
  double slm_pitch = micrometers(8.0);
  std::size_t rows = 256;
  std::size_t cols = 256;
  double focal_length = millimeters(400.0);
  double detector_pitch = micrometers(8.0);

  std::size_t channels() const noexcept { return wavelengths.size(); }

  void validate() const {
    if (wavelengths.empty()) throw ConfigError("wavelengths_nm", "at least one wavelength required");
    for (double w : wavelengths)
      if (!(w > 0.0)) throw ConfigError("wavelengths_nm", "wavelengths must be positive");
    if (!(slm_pitch > 0.0)) throw ConfigError("slm_pitch_um", "must be positive");
    if (!(focal_length > 0.0)) throw ConfigError("focal_length_mm", "must be positive");
    if (!(detector_pitch > 0.0)) throw ConfigError("detector_pitch_um", "must be positive");
    if (rows == 0 || cols == 0) throw ConfigError("resolution", "must be non-zero");
  }

  double wavelength(std::size_t channel) const {
    if (channel >= wavelengths.size()) throw std::out_of_range("channel index out of range");
    return wavelengths[channel];
  }
};

/// Eyebox width lambda * f / pitch for one color channel.
inline double eyebox_width(const OpticalConfig& config, std::size_t channel) {
  return config.wavelength(channel) * config.focal_length / config.slm_pitch;
}

inline double min_eyebox_width(const OpticalConfig& config) {
  double w = eyebox_width(config, 0);
  for (std::size_t c = 1; c < config.channels(); ++c) w = std::min(w, eyebox_width(config, c));
  return w;
}

inline double defocus_alpha(double z, double focal_length) {
  if (z + focal_length == 0.0) throw std::invalid_argument("defocus_alpha: z = -f is degenerate");
  return focal_length / (z + focal_length);
}

/// Viewing condition: lateral pupil shift, focus distance and aperture diameter.
struct PupilState {
  Vec2 shift;
  double focus = 0.0;
  double diameter = 0.0;

  friend bool operator==(const PupilState&, const PupilState&) = default;

  void validate() const {
    if (!(diameter > 0.0)) throw std::invalid_argument("pupil diameter must be positive");
  }
};

struct PupilRanges {
  double z_min = 0.0;
  double z_max = millimeters(15.0);
  double d_min = millimeters(2.0);
  double d_max = millimeters(20.0);
  std::optional<double> r_max;  // unset: (smallest eyebox - d) / 2 per sample

  void validate() const {
    if (!(z_min <= z_max)) throw ConfigError("z_min_mm", "z_min must not exceed z_max");
    if (!(d_min > 0.0)) throw ConfigError("d_min_mm", "must be positive");
    if (!(d_min <= d_max)) throw ConfigError("d_min_mm", "d_min must not exceed d_max");
    if (r_max && *r_max < 0.0) throw ConfigError("shift_max_mm", "must be non-negative");
  }
};

/// FFT-native frequency coordinates (cycles per meter) for a sampled field.
/// Index k maps to k / (n * pitch) for k < n/2 and (k - n) / (n * pitch) otherwise.
struct FrequencyGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double pitch = 0.0;

  static FrequencyGrid of(const OpticalConfig& config) {
    return {config.rows, config.cols, config.slm_pitch};
  }

  static double frequency(std::size_t k, std::size_t n, double pitch) {
    const auto signed_k = k < (n + 1) / 2 ? static_cast<double>(k)
                                          : static_cast<double>(k) - static_cast<double>(n);
    return signed_k / (static_cast<double>(n) * pitch);
  }

  double fx(std::size_t col) const { return frequency(col, cols, pitch); }
  double fy(std::size_t row) const { return frequency(row, rows, pitch); }
  double dfx() const { return 1.0 / (static_cast<double>(cols) * pitch); }
  double dfy() const { return 1.0 / (static_cast<double>(rows) * pitch); }
  double band_limit() const { return 0.5 / pitch; }
};

struct MaskOptions {
  double edge_width = 0.0;  // raised-cosine transition width in the pupil plane, meters
};

struct PupilMask {
  RealGrid values;          // FFT order
  bool clipped = false;     // disc extends past the representable band
  std::size_t support = 0;  // samples with non-zero weight
};

/// Circular pupil aperture in frequency space: center s/(lambda f), radius d/(2 lambda f).
inline PupilMask pupil_mask(const FrequencyGrid& grid, const PupilState& p, double wavelength,
                            double focal_length, const MaskOptions& options = {}) {
  p.validate();
  const double scale = 1.0 / (wavelength * focal_length);
  const double cx = p.shift.x * scale;
  const double cy = p.shift.y * scale;
  const double radius = 0.5 * p.diameter * scale;
  const double edge = options.edge_width * scale;

  PupilMask mask{RealGrid(grid.rows, grid.cols), false, 0};
  const double limit = grid.band_limit() * (1.0 + 1e-9);
  mask.clipped = std::abs(cx) + radius > limit || std::abs(cy) + radius > limit;

  for (std::size_t r = 0; r < grid.rows; ++r) {
    const double dy = grid.fy(r) - cy;
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const double rho = std::hypot(grid.fx(c) - cx, dy);
      double v;
      if (edge <= 0.0) {
        v = rho < radius * (1.0 - 1e-12) ? 1.0 : 0.0;  // samples on the rim stay outside
      } else if (rho <= radius - 0.5 * edge) {
        v = 1.0;
      } else if (rho >= radius + 0.5 * edge) {
        v = 0.0;
      } else {
        v = 0.5 * (1.0 + std::cos(std::numbers::pi * (rho - (radius - 0.5 * edge)) / edge));
      }
      mask.values(r, c) = v;
      if (v > 0.0) ++mask.support;
    }
  }
  if (mask.support == 0)
    throw EmptyPupilError("pupil mask is empty: shift (" + std::to_string(p.shift.x) + ", " +
                          std::to_string(p.shift.y) + ") m, diameter " +
                          std::to_string(p.diameter) + " m lies outside the sampled band");
  if (mask.clipped)
    spdlog::warn("pupil (shift {:.4g}, {:.4g} mm, d {:.4g} mm) exceeds the eyebox; clipped to band limit",
                 to_millimeters(p.shift.x), to_millimeters(p.shift.y), to_millimeters(p.diameter));
  return mask;
}

}  // namespace slfh
