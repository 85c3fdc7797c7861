#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "slfh/error.hpp"
#include "slfh/grid.hpp"
#include "slfh/optics.hpp"

namespace slfh {

/// Discrete 4D radiance: a regular grid of view images indexed by pupil-plane
/// position. Views are stored row-major by (view row, view column); each view
/// holds one linear, non-negative intensity image per color channel.
class LightField {
 public:
  LightField() = default;

  /// eyebox.x is the horizontal extent spanned by view centers, eyebox.y the vertical.
  static LightField make(std::size_t grid_rows, std::size_t grid_cols, Vec2 eyebox,
                         std::vector<std::vector<RealGrid>> views) {
    if (grid_rows == 0 || grid_cols == 0) throw LightFieldError("view grid must be non-empty");
    if (views.size() != grid_rows * grid_cols)
      throw LightFieldError("expected " + std::to_string(grid_rows * grid_cols) + " views, got " +
                            std::to_string(views.size()));
    if (!(eyebox.x >= 0.0 && eyebox.y >= 0.0)) throw LightFieldError("eyebox must be non-negative");
    const std::size_t channels = views.front().size();
    if (channels == 0) throw LightFieldError("views need at least one channel");
    const std::size_t rows = views.front().front().rows();
    const std::size_t cols = views.front().front().cols();
    for (std::size_t k = 0; k < views.size(); ++k) {
      if (views[k].size() != channels)
        throw InconsistentResolutionError("view " + std::to_string(k) + " channel count differs");
      for (const auto& img : views[k]) {
        if (img.rows() != rows || img.cols() != cols)
          throw InconsistentResolutionError("view " + std::to_string(k) + " resolution differs");
        for (double v : img)
          if (!(v >= 0.0)) throw LightFieldError("view " + std::to_string(k) + " has negative or non-finite intensity");
      }
    }
    LightField lf;
    lf.grid_rows_ = grid_rows;
    lf.grid_cols_ = grid_cols;
    lf.eyebox_ = eyebox;
    lf.views_ = std::move(views);
    lf.coords_.reserve(lf.views_.size());
    const auto axis = [](std::size_t i, std::size_t n, double extent) {
      if (n == 1) return 0.0;
      const double spacing = extent / static_cast<double>(n - 1);
      return (static_cast<double>(i) - 0.5 * static_cast<double>(n - 1)) * spacing;
    };
    for (std::size_t r = 0; r < grid_rows; ++r)
      for (std::size_t c = 0; c < grid_cols; ++c)
        lf.coords_.push_back({axis(c, grid_cols, eyebox.x), axis(r, grid_rows, eyebox.y)});
    return lf;
  }

  std::size_t grid_rows() const noexcept { return grid_rows_; }
  std::size_t grid_cols() const noexcept { return grid_cols_; }
  std::size_t view_count() const noexcept { return views_.size(); }
  std::size_t channels() const noexcept { return views_.empty() ? 0 : views_.front().size(); }
  std::size_t rows() const noexcept { return views_.empty() ? 0 : views_.front().front().rows(); }
  std::size_t cols() const noexcept { return views_.empty() ? 0 : views_.front().front().cols(); }
  Vec2 eyebox() const noexcept { return eyebox_; }

  const RealGrid& image(std::size_t view, std::size_t channel) const {
    return views_.at(view).at(channel);
  }
  std::size_t view_index(std::size_t row, std::size_t col) const { return row * grid_cols_ + col; }
  Vec2 coord(std::size_t view) const { return coords_.at(view); }
  const std::vector<Vec2>& coords() const noexcept { return coords_; }

 private:
  std::size_t grid_rows_ = 0;
  std::size_t grid_cols_ = 0;
  Vec2 eyebox_;
  std::vector<std::vector<RealGrid>> views_;
  std::vector<Vec2> coords_;
};

struct TargetImage {
  RealGrid intensity;
  PupilState pupil;
  std::size_t channel = 0;
};

/// Indices of views whose center lies strictly inside the pupil disc.
inline std::vector<std::size_t> views_in_pupil(const LightField& lf, const PupilState& p) {
  std::vector<std::size_t> out;
  const double radius = 0.5 * p.diameter;
  for (std::size_t k = 0; k < lf.view_count(); ++k)
    if ((lf.coord(k) - p.shift).norm() < radius) out.push_back(k);
  return out;
}

namespace detail {

/// Adds img translated by (dx, dy) pixels into sum and bumps count where the
/// bilinear sample lies inside the image footprint.
inline void accumulate_shifted(const RealGrid& img, double dx, double dy, RealGrid& sum,
                               RealGrid& count) {
  const std::size_t rows = img.rows(), cols = img.cols();
  const double max_y = static_cast<double>(rows - 1);
  const double max_x = static_cast<double>(cols - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = static_cast<double>(r) - dy;
    if (y < 0.0 || y > max_y) continue;
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const double fy = y - static_cast<double>(y0);
    const std::size_t y1 = fy > 0.0 ? y0 + 1 : y0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = static_cast<double>(c) - dx;
      if (x < 0.0 || x > max_x) continue;
      const auto x0 = static_cast<std::size_t>(std::floor(x));
      const double fx = x - static_cast<double>(x0);
      const std::size_t x1 = fx > 0.0 ? x0 + 1 : x0;
      const double v = (1.0 - fy) * ((1.0 - fx) * img(y0, x0) + fx * img(y0, x1)) +
                       fy * ((1.0 - fx) * img(y1, x0) + fx * img(y1, x1));
      sum(r, c) += v;
      count(r, c) += 1.0;
    }
  }
}

}  // namespace detail

/// Synthetic photograph through pupil p: the average of the views inside the
/// aperture, each translated by (z / f) * q_k on the detector.
inline TargetImage project_lightfield(const LightField& lf, const PupilState& p,
                                      std::size_t channel, const OpticalConfig& config) {
  p.validate();
  if (channel >= lf.channels()) throw std::out_of_range("light field channel out of range");
  const auto included = views_in_pupil(lf, p);
  if (included.empty())
    throw EmptyApertureError("no light-field view inside pupil (shift " +
                             std::to_string(to_millimeters(p.shift.x)) + ", " +
                             std::to_string(to_millimeters(p.shift.y)) + " mm, d " +
                             std::to_string(to_millimeters(p.diameter)) +
                             " mm); widen the pupil diameter");

  RealGrid sum(lf.rows(), lf.cols(), 0.0);
  RealGrid count(lf.rows(), lf.cols(), 0.0);
  const double shear = p.focus / config.focal_length / config.detector_pitch;
  for (std::size_t k : included) {
    const Vec2 q = lf.coord(k);
    detail::accumulate_shifted(lf.image(k, channel), shear * q.x, shear * q.y, sum, count);
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = count[i] > 0.0 ? sum[i] / count[i] : 0.0;
  return {std::move(sum), p, channel};
}

}  // namespace slfh
