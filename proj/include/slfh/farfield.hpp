#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>

#include "slfh/error.hpp"
#include "slfh/fft.hpp"
#include "slfh/grid.hpp"
#include "slfh/lightfield.hpp"
#include "slfh/optics.hpp"
#include "slfh/optimizer.hpp"
#include "slfh/supervision.hpp"

namespace slfh {

/// Fourier-CGH setup: the SLM sits in the eye pupil plane and the retina image
/// is one Fourier transform of the pupil-masked, defocused SLM field. Pupils
/// are evaluated on a tile x tile window around the pupil, so the retina grid
/// has tile x tile pixels of lambda f / (tile * pitch).
struct FarFieldConfig {
  OpticalConfig optics;  // rows / cols are the hologram resolution
  std::size_t tile = 256;
  std::optional<Window> retina_window;  // image pixels; even-aligned for 2x2 pooling

  void validate() const {
    optics.validate();
    if (optics.rows * optics.cols < 256 * 256)
      throw ConfigError("farfield.hologram_resolution", "must be at least 256 x 256");
    if (tile < 2 || tile % 2 != 0) throw ConfigError("farfield.tile", "must be a positive even number");
    if (optics.rows % tile != 0 || optics.cols % tile != 0)
      throw ConfigError("farfield.tile", "must divide the hologram resolution");
    if (retina_window) {
      const auto& w = *retina_window;
      if (w.rows == 0 || w.cols == 0 || w.row + w.rows > tile || w.col + w.cols > tile)
        throw ConfigError("farfield.retina_window", "must be a non-empty rectangle inside the tile");
      if (w.row % 2 || w.col % 2 || w.rows % 2 || w.cols % 2)
        throw ConfigError("farfield.retina_window", "offsets and sizes must be even");
    }
  }

  std::size_t rows() const noexcept { return optics.rows; }
  std::size_t cols() const noexcept { return optics.cols; }

  /// The SLM extent is the eyebox.
  double eyebox() const noexcept {
    return static_cast<double>(std::min(optics.rows, optics.cols)) * optics.slm_pitch;
  }
  double tile_extent() const noexcept { return static_cast<double>(tile) * optics.slm_pitch; }
  double retina_pitch(std::size_t channel) const {
    return optics.wavelength(channel) * optics.focal_length / tile_extent();
  }

  /// Geometry for light-field targets of one channel: tile x tile views at the retina pitch.
  OpticalConfig target_config(std::size_t channel) const {
    OpticalConfig c = optics;
    c.rows = c.cols = tile;
    c.detector_pitch = retina_pitch(channel);
    return c;
  }
};

/// A pupil placed on the hologram: the tile origin and the disc parameters.
struct TileBinding {
  PupilState pupil;
  double wavelength = 0.0;
  std::size_t row0 = 0, col0 = 0;
};

namespace detail {

/// First tile index so that the pixels inside a disc centered at `center`
/// (pixel units) with radius `radius` are centered in the tile, clamped to the
/// hologram. Throws if the disc does not fit.
inline std::size_t tile_origin(double center, double radius, std::size_t n, std::size_t tile,
                               bool& clipped, bool& empty) {
  const auto lo = static_cast<long long>(std::floor(center - radius)) + 1;
  const auto hi = static_cast<long long>(std::ceil(center + radius)) - 1;
  const auto span = hi - lo + 1;
  if (span > static_cast<long long>(tile))
    throw ConfigError("farfield.tile", "pupil diameter exceeds the tile extent");
  clipped = clipped || lo < 0 || hi >= static_cast<long long>(n);
  empty = empty || hi < 0 || lo >= static_cast<long long>(n) || span <= 0;
  const long long origin = lo - (static_cast<long long>(tile) - span) / 2;
  return static_cast<std::size_t>(std::clamp<long long>(origin, 0, static_cast<long long>(n - tile)));
}

}  // namespace detail

inline TileBinding bind_tile(const FarFieldConfig& cfg, const PupilState& p, std::size_t channel) {
  p.validate();
  const double pitch = cfg.optics.slm_pitch;
  const double radius = 0.5 * p.diameter / pitch;
  bool clipped = false, empty = false;
  TileBinding b{p, cfg.optics.wavelength(channel), 0, 0};
  b.col0 = detail::tile_origin(0.5 * cfg.cols() + p.shift.x / pitch, radius, cfg.cols(), cfg.tile, clipped, empty);
  b.row0 = detail::tile_origin(0.5 * cfg.rows() + p.shift.y / pitch, radius, cfg.rows(), cfg.tile, clipped, empty);
  if (empty)
    throw EmptyPupilError("pupil (shift " + std::to_string(to_millimeters(p.shift.x)) + ", " +
                          std::to_string(to_millimeters(p.shift.y)) + " mm) lies outside the hologram");
  if (clipped)
    spdlog::warn("pupil (shift {:.4g}, {:.4g} mm, d {:.4g} mm) extends past the hologram; clipped",
                 to_millimeters(p.shift.x), to_millimeters(p.shift.y), to_millimeters(p.diameter));
  return b;
}

namespace detail {

/// Visits tile pixels inside the pupil with the weight A * Q * c, where
/// c = (-1)^(i+j) moves DC to the tile center after the FFT (tile is even).
template <class Fn>
void for_each_pupil_pixel(const FarFieldConfig& cfg, const TileBinding& b, Fn&& fn) {
  const double pitch = cfg.optics.slm_pitch;
  const double r2 = std::pow(0.5 * b.pupil.diameter * (1.0 - 1e-12), 2);
  const double curvature = std::numbers::pi * b.pupil.focus / (b.wavelength * std::pow(cfg.optics.focal_length, 2));
  const double half_r = 0.5 * static_cast<double>(cfg.rows()), half_c = 0.5 * static_cast<double>(cfg.cols());
  for (std::size_t i = 0; i < cfg.tile; ++i) {
    const double y = (static_cast<double>(b.row0 + i) - half_r) * pitch;
    const double dy = y - b.pupil.shift.y;
    for (std::size_t j = 0; j < cfg.tile; ++j) {
      const double x = (static_cast<double>(b.col0 + j) - half_c) * pitch;
      const double dx = x - b.pupil.shift.x;
      if (dx * dx + dy * dy >= r2) continue;
      const double sign = ((i + j) & 1) ? -1.0 : 1.0;
      fn(i, j, sign * std::polar(1.0, curvature * (x * x + y * y)));
    }
  }
}

}  // namespace detail

/// Complex retina field v = fftshift(FFT(A Q u)) over the pupil's tile.
inline ComplexGrid farfield_linear(const ComplexGrid& u, const TileBinding& b, const FarFieldConfig& cfg) {
  if (u.rows() != cfg.rows() || u.cols() != cfg.cols())
    throw std::invalid_argument("field resolution does not match the hologram resolution");
  ComplexGrid v(cfg.tile, cfg.tile);
  detail::for_each_pupil_pixel(cfg, b, [&](std::size_t i, std::size_t j, Complex aq) {
    v(i, j) = aq * u(b.row0 + i, b.col0 + j);
  });
  fft2(v);
  return v;
}

/// Adjoint of farfield_linear: a hologram-sized field that is non-zero only on the pupil.
inline ComplexGrid farfield_adjoint(const ComplexGrid& g, const TileBinding& b, const FarFieldConfig& cfg) {
  if (g.rows() != cfg.tile || g.cols() != cfg.tile)
    throw std::invalid_argument("retina field must be tile x tile");
  ComplexGrid w = ifft2_copy(g);
  ComplexGrid out(cfg.rows(), cfg.cols());
  detail::for_each_pupil_pixel(cfg, b, [&](std::size_t i, std::size_t j, Complex aq) {
    out(b.row0 + i, b.col0 + j) = std::conj(aq) * w(i, j);
  });
  return out;
}

/// Perceived far-field intensity, restricted to the retina window when one is configured.
inline RealGrid project_farfield(const ComplexField& u, const PupilState& p, const FarFieldConfig& cfg,
                                 std::size_t channel = 0) {
  cfg.validate();
  if (u.pitch != cfg.optics.slm_pitch) throw std::invalid_argument("field pitch does not match the SLM pitch");
  auto image = intensity(farfield_linear(u.values, bind_tile(cfg, p, channel), cfg));
  if (!cfg.retina_window) return image;
  const auto& w = *cfg.retina_window;
  RealGrid crop(w.rows, w.cols);
  for (std::size_t r = 0; r < w.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) crop(r, c) = image(w.row + r, w.col + c);
  return crop;
}

/// Forward model for evaluate_batch. Only tile-sized complex buffers are ever
/// allocated; the backward pass writes the phase gradient directly.
class FarFieldModel {
 public:
  struct Frame {
    const RealGrid* phase = nullptr;
  };
  using Bound = TileBinding;
  using Accumulator = RealGrid;

  explicit FarFieldModel(FarFieldConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const FarFieldConfig& config() const noexcept { return cfg_; }
  std::size_t channels() const noexcept { return cfg_.optics.channels(); }
  std::size_t image_rows() const noexcept { return cfg_.tile; }
  std::size_t image_cols() const noexcept { return cfg_.tile; }
  std::size_t image_bytes() const noexcept { return cfg_.tile * cfg_.tile * sizeof(Complex); }
  bool cache_fields() const noexcept { return false; }
  double eyebox() const noexcept { return cfg_.eyebox(); }
  OpticalConfig target_config(std::size_t channel) const { return cfg_.target_config(channel); }

  std::optional<Window> window() const {
    if (!cfg_.retina_window) return std::nullopt;
    const auto& w = *cfg_.retina_window;
    return Window{w.row / 2, w.col / 2, w.rows / 2, w.cols / 2};
  }

  Frame prepare(const RealGrid& phase, std::size_t) const {
    if (phase.rows() != cfg_.rows() || phase.cols() != cfg_.cols())
      throw std::invalid_argument("phase resolution does not match the hologram resolution");
    return {&phase};
  }

  Bound bind(const PupilState& p, std::size_t channel) const { return bind_tile(cfg_, p, channel); }

  ComplexGrid propagate(const Bound& b, const Frame& f) const {
    ComplexGrid v(cfg_.tile, cfg_.tile);
    const RealGrid& phi = *f.phase;
    detail::for_each_pupil_pixel(cfg_, b, [&](std::size_t i, std::size_t j, Complex aq) {
      v(i, j) = aq * std::polar(1.0, phi(b.row0 + i, b.col0 + j));
    });
    fft2(v);
    return v;
  }

  Accumulator make_accumulator(std::size_t) const { return RealGrid(cfg_.rows(), cfg_.cols(), 0.0); }

  void backpropagate(const Bound& b, const Frame& f, ComplexGrid g, Accumulator& grad) const {
    ifft2(g);
    const RealGrid& phi = *f.phase;
    detail::for_each_pupil_pixel(cfg_, b, [&](std::size_t i, std::size_t j, Complex aq) {
      const std::size_t r = b.row0 + i, c = b.col0 + j;
      const Complex w = std::conj(aq) * g(i, j);
      grad(r, c) += 2.0 * std::imag(std::conj(std::polar(1.0, phi(r, c))) * w);
    });
  }

  RealGrid finish(Accumulator grad, const Frame&) const { return grad; }

 private:
  FarFieldConfig cfg_;
};

inline TargetRenderer farfield_targets(const LightField& lf, const FarFieldConfig& cfg) {
  return [&lf, cfg](const PupilState& p, std::size_t c) {
    return project_lightfield(lf, p, c, cfg.target_config(c));
  };
}

/// Far-field counterpart of optimize(): views must be tile x tile.
inline OptimizeResult optimize_farfield(const LightField& lf, const SupervisionPolicy& policy,
                                        const FarFieldConfig& cfg, const OptimizerConfig& opt,
                                        std::uint64_t seed, const ProgressCallback& progress = {}) {
  cfg.validate();
  if (lf.rows() != cfg.tile || lf.cols() != cfg.tile)
    throw ConfigError("farfield.tile", "light-field views must be tile x tile pixels");
  if (lf.channels() < cfg.optics.channels())
    throw ConfigError("wavelengths_nm", "light field has fewer channels than wavelengths");
  const double largest = policy.kind == PolicyKind::slfh        ? policy.ranges.d_max
                         : policy.kind == PolicyKind::stft_grid ? policy.stft_diameter(cfg.eyebox())
                                                                : cfg.eyebox();
  if (largest > cfg.tile_extent() * (1.0 + 1e-12))
    throw ConfigError("farfield.tile", "pupil diameters up to " + std::to_string(to_millimeters(largest)) +
                                           " mm exceed the tile extent of " +
                                           std::to_string(to_millimeters(cfg.tile_extent())) + " mm");
  FarFieldModel model(cfg);
  SupervisionSource source(policy, cfg.eyebox(), cfg.optics.channels(), farfield_targets(lf, cfg));
  auto phases = PhaseVariables::random(cfg.optics.channels(), opt.frames, cfg.rows(), cfg.cols(), seed);
  return run_optimization(
      model, [&](std::size_t it) -> const std::vector<SupervisionSample>& { return source.batch(it); },
      std::move(phases), opt, policy.seed, progress);
}

}  // namespace slfh
