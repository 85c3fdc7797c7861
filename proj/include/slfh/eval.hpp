#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "slfh/error.hpp"
#include "slfh/io/png.hpp"
#include "slfh/lightfield.hpp"
#include "slfh/optimizer.hpp"
#include "slfh/parallel.hpp"
#include "slfh/supervision.hpp"
#include "slfh/wavefield.hpp"

namespace slfh {

/// Returned by psnr() for identical images.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) with peak = max of the reference b.
inline double psnr(const RealGrid& a, const RealGrid& b) {
  require_same_shape(a, b, "psnr");
  if (a.size() == 0) throw std::invalid_argument("psnr of empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kInfinitePsnr;
  const double peak = max_value(b);
  return 10.0 * std::log10(peak * peak / mse);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  std::optional<double> dynamic_range;  // default: max of the reference
};

namespace detail {

inline std::vector<double> gaussian_taps(std::size_t n, double sigma) {
  std::vector<double> w(n);
  const double c = 0.5 * static_cast<double>(n - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) - c;
    w[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

/// Separable 'valid' filtering: output is (rows - n + 1) x (cols - n + 1).
inline RealGrid filter_valid(const RealGrid& img, const std::vector<double>& w) {
  const std::size_t n = w.size(), rows = img.rows() - n + 1, cols = img.cols() - n + 1;
  RealGrid horiz(img.rows(), cols, 0.0);
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += w[k] * img(r, c + k);
      horiz(r, c) = s;
    }
  RealGrid out(rows, cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += w[k] * horiz(r + k, c);
      out(r, c) = s;
    }
  return out;
}

}  // namespace detail

/// Mean local SSIM over the 'valid' region of a Gaussian window.
inline double ssim(const RealGrid& a, const RealGrid& b, const SsimParams& params = {}) {
  require_same_shape(a, b, "ssim");
  if (params.window == 0 || a.rows() < params.window || a.cols() < params.window)
    throw std::invalid_argument("ssim needs images at least as large as the window");
  const double range = params.dynamic_range.value_or(max_value(b));
  const double c1 = std::pow(params.k1 * range, 2), c2 = std::pow(params.k2 * range, 2);
  const auto w = detail::gaussian_taps(params.window, params.sigma);

  RealGrid aa(a.rows(), a.cols()), bb(a.rows(), a.cols()), ab(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = detail::filter_valid(a, w), mu_b = detail::filter_valid(b, w);
  const auto s_aa = detail::filter_valid(aa, w), s_bb = detail::filter_valid(bb, w),
             s_ab = detail::filter_valid(ab, w);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
    const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
    const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
    total += den > 0.0 ? num / den : 1.0;
  }
  return total / static_cast<double>(mu_a.size());
}

enum class SweepKind { varying_aperture, focal_stack, light_field, random };

inline const char* to_string(SweepKind k) {
  switch (k) {
    case SweepKind::varying_aperture: return "varying_aperture";
    case SweepKind::focal_stack: return "focal_stack";
    case SweepKind::light_field: return "light_field";
    case SweepKind::random: return "random";
  }
  return "?";
}

inline SweepKind parse_sweep_kind(const std::string& s) {
  for (auto k : {SweepKind::varying_aperture, SweepKind::focal_stack, SweepKind::light_field, SweepKind::random})
    if (s == to_string(k)) return k;
  throw ConfigError("sweep", "unknown sweep kind \"" + s + "\"");
}

/// Pupil states of one sweep. Structured sweeps freeze two of (d, z, s):
///   varying_aperture: s = 0, z = fixed_z, d from d_min to min(d_max, eyebox)
///   focal_stack:      s = 0, d = eyebox, z from z_min to z_max
///   light_field:      d = fixed_d, z = fixed_z, shifts on a g x g grid, g = floor(sqrt(n))
///   random:           n pupils drawn like slfh training, from an eval-only stream
struct SweepSpec {
  SweepKind kind = SweepKind::random;
  std::size_t n_states = 32;
  std::uint64_t seed = 0;
  PupilRanges ranges;
  std::optional<double> fixed_z;  // default z_min
  std::optional<double> fixed_d;  // default eyebox / 4
};

inline std::vector<PupilState> sweep_pupils(const SweepSpec& spec, double eyebox) {
  if (spec.n_states == 0) throw ConfigError("sweep.n", "must be at least 1");
  spec.ranges.validate();
  const std::size_t n = spec.n_states;
  const auto lin = [n](double a, double b, std::size_t i) {
    return n == 1 ? a : a + static_cast<double>(i) * (b - a) / static_cast<double>(n - 1);
  };
  const double z = spec.fixed_z.value_or(spec.ranges.z_min);
  std::vector<PupilState> out;
  switch (spec.kind) {
    case SweepKind::varying_aperture: {
      const double hi = std::min(spec.ranges.d_max, eyebox), lo = std::min(spec.ranges.d_min, hi);
      for (std::size_t i = 0; i < n; ++i) out.push_back({{0.0, 0.0}, z, lin(lo, hi, i)});
      break;
    }
    case SweepKind::focal_stack:
      for (std::size_t i = 0; i < n; ++i) out.push_back({{0.0, 0.0}, lin(spec.ranges.z_min, spec.ranges.z_max, i), eyebox});
      break;
    case SweepKind::light_field: {
      const double d = spec.fixed_d.value_or(0.25 * eyebox);
      if (!(d > 0.0) || d > eyebox * (1.0 + 1e-12)) throw ConfigError("sweep.d_mm", "must lie in (0, eyebox]");
      const auto g = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
      for (Vec2 s : pupil_shift_grid(g, eyebox, d)) out.push_back({s, z, d});
      break;
    }
    case SweepKind::random: {
      // Salted so an eval seed equal to the training seed still gives a different stream.
      std::mt19937_64 rng(batch_seed(spec.seed ^ 0xE7A1'5EED'0000'0001ull, 0));
      for (std::size_t i = 0; i < n; ++i) out.push_back(draw_pupil(rng, spec.ranges, eyebox));
      break;
    }
  }
  return out;
}

struct SweepRecord {
  PupilState pupil;
  std::size_t channel = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double kappa = 0.0;
  SweepKind kind = SweepKind::random;
};

struct SweepStats {
  std::size_t count = 0;
  double ssim_mean = 0.0, ssim_variance = 0.0, ssim_min = 0.0;
  double psnr_mean = 0.0, psnr_variance = 0.0, psnr_min = 0.0;  // over finite values
  std::size_t psnr_infinite = 0;
};

struct PupilSweepReport {
  std::vector<SweepRecord> records;  // generation order, channel-minor
  SsimParams ssim_params;
  std::vector<std::string> notes;

  SweepStats stats(SweepKind kind) const {
    SweepStats s;
    std::vector<double> ss, ps;
    for (const auto& r : records) {
      if (r.kind != kind) continue;
      ++s.count;
      ss.push_back(r.ssim);
      if (std::isfinite(r.psnr)) ps.push_back(r.psnr);
      else ++s.psnr_infinite;
    }
    const auto moments = [](const std::vector<double>& v, double& mean, double& var, double& mn) {
      if (v.empty()) return;
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      var /= static_cast<double>(v.size());
      mn = *std::min_element(v.begin(), v.end());
    };
    moments(ss, s.ssim_mean, s.ssim_variance, s.ssim_min);
    if (ps.empty() && s.psnr_infinite) s.psnr_mean = s.psnr_min = kInfinitePsnr;
    moments(ps, s.psnr_mean, s.psnr_variance, s.psnr_min);
    return s;
  }

  std::vector<SweepKind> kinds() const {
    std::vector<SweepKind> out;
    for (const auto& r : records)
      if (std::find(out.begin(), out.end(), r.kind) == out.end()) out.push_back(r.kind);
    return out;
  }

  void append(const PupilSweepReport& other) {
    records.insert(records.end(), other.records.begin(), other.records.end());
    notes.insert(notes.end(), other.notes.begin(), other.notes.end());
  }
};

struct Score {
  double psnr = 0.0, ssim = 0.0, kappa = 0.0;
  RealGrid reconstruction;  // gain-corrected, cropped to the window
  RealGrid target;
};

namespace detail {

inline RealGrid crop(const RealGrid& img, const std::optional<Window>& w) {
  if (!w) return img;
  RealGrid out(w->rows, w->cols);
  for (std::size_t r = 0; r < w->rows; ++r)
    for (std::size_t c = 0; c < w->cols; ++c) out(r, c) = img(w->row + r, w->col + c);
  return out;
}

}  // namespace detail

/// Removes the fitted gain (1 / kappa^2 for amplitude, 1 / kappa for intensity)
/// before comparing pooled images, the same gain the loss ignores.
inline Score score_images(const RealGrid& reconstruction, const RealGrid& target, LossDomain domain,
                          const std::optional<Window>& window = std::nullopt, const SsimParams& params = {}) {
  const auto fit = fit_residual(reconstruction, target, domain, window);
  Score s;
  s.kappa = fit.kappa;
  s.target = detail::crop(target, window);
  s.reconstruction = detail::crop(reconstruction, window);
  if (fit.kappa > 0.0) {
    const double gain = domain == LossDomain::amplitude ? fit.kappa * fit.kappa : fit.kappa;
    for (auto& v : s.reconstruction) v /= gain;
  }
  s.psnr = psnr(s.reconstruction, s.target);
  s.ssim = ssim(s.reconstruction, s.target, params);
  return s;
}

/// Frame-averaged, 2x2 pooled intensity of the hologram under pupil p.
template <class Model>
RealGrid render_reconstruction(const Model& model, const PhaseVariables& phases, const PupilState& p,
                               std::size_t channel) {
  const auto bound = model.bind(p, channel);
  std::vector<RealGrid> frames;
  for (std::size_t t = 0; t < phases.frames; ++t)
    frames.push_back(intensity(model.propagate(bound, model.prepare(phases.at(channel, t), channel))));
  return average_intensity(frames);
}

template <class Model>
RealGrid render_target(const Model& model, const LightField& lf, const PupilState& p, std::size_t channel) {
  return pool(project_lightfield(lf, p, channel, model.target_config(channel)).intensity);
}

/// Image sources for one pupil and channel, both already pooled.
using ImageFn = std::function<RealGrid(const PupilState&, std::size_t channel)>;

/// Receives each scored state (record index, images); called concurrently.
using ScoreSink = std::function<void(std::size_t record, const Score&)>;

/// Scores every (pupil, channel) pair concurrently; rows keep generation order.
inline PupilSweepReport score_pupils(const std::vector<PupilState>& pupils, std::size_t channels, SweepKind kind,
                                     const ImageFn& reconstruct, const ImageFn& target, LossDomain domain,
                                     const std::optional<Window>& window = std::nullopt,
                                     const SsimParams& params = {}, const ScoreSink& sink = {}) {
  PupilSweepReport report;
  report.ssim_params = params;
  report.records.resize(pupils.size() * channels);
  parallel_for(report.records.size(), [&](std::size_t job) {
    const std::size_t i = job / channels, c = job % channels;
    const auto s = score_images(reconstruct(pupils[i], c), target(pupils[i], c), domain, window, params);
    report.records[job] = {pupils[i], c, s.psnr, s.ssim, s.kappa, kind};
    if (sink) sink(job, s);
  });
  return report;
}

template <class Model>
PupilSweepReport run_sweep(const Model& model, const PhaseVariables& phases, const LightField& lf,
                           const SweepSpec& spec, LossDomain domain = LossDomain::amplitude,
                           const SsimParams& params = {}, const ScoreSink& sink = {}) {
  return score_pupils(
      sweep_pupils(spec, model.eyebox()), phases.channels, spec.kind,
      [&](const PupilState& p, std::size_t c) { return render_reconstruction(model, phases, p, c); },
      [&](const PupilState& p, std::size_t c) { return render_target(model, lf, p, c); }, domain, model.window(),
      params, sink);
}

struct EpipolarSlice {
  double focus = 0.0;
  std::size_t channel = 0;
  RealGrid reconstruction;  // n_positions x pooled columns, gain-corrected per position
  RealGrid target;
};

/// Horizontal pupil trajectory across the eyebox.
inline std::vector<PupilState> epipolar_pupils(std::size_t n_positions, double eyebox, double d, double z) {
  if (n_positions == 0) throw ConfigError("epipolar", "needs at least one position");
  if (!(d > 0.0) || d > eyebox * (1.0 + 1e-12)) throw ConfigError("epipolar.d_mm", "must lie in (0, eyebox]");
  std::vector<PupilState> out;
  const double half = 0.5 * (eyebox - d);
  for (std::size_t i = 0; i < n_positions; ++i) {
    const double x = n_positions == 1 ? 0.0 : -half + static_cast<double>(i) * 2.0 * half / static_cast<double>(n_positions - 1);
    out.push_back({{x, 0.0}, z, d});
  }
  return out;
}

/// Stacks the central pooled row over a left-to-right pupil trajectory, per focus and channel.
template <class Model>
std::vector<EpipolarSlice> epipolar_slice(const Model& model, const PhaseVariables& phases, const LightField& lf,
                                          std::size_t n_positions, double d, const std::vector<double>& z_values,
                                          LossDomain domain = LossDomain::amplitude) {
  std::vector<EpipolarSlice> out;
  for (double z : z_values)
    for (std::size_t c = 0; c < phases.channels; ++c) {
      const auto pupils = epipolar_pupils(n_positions, model.eyebox(), d, z);
      SsimParams unused;
      unused.window = 1;
      std::vector<Score> scores(pupils.size());
      parallel_for(pupils.size(), [&](std::size_t i) {
        scores[i] = score_images(render_reconstruction(model, phases, pupils[i], c),
                                 render_target(model, lf, pupils[i], c), domain, model.window(),
                                 unused);
      });
      const std::size_t cols = scores.front().target.cols(), row = scores.front().target.rows() / 2;
      EpipolarSlice s{z, c, RealGrid(n_positions, cols), RealGrid(n_positions, cols)};
      for (std::size_t i = 0; i < n_positions; ++i)
        for (std::size_t k = 0; k < cols; ++k) {
          s.reconstruction(i, k) = scores[i].reconstruction(row, k);
          s.target(i, k) = scores[i].target(row, k);
        }
      out.push_back(std::move(s));
    }
  return out;
}

/// Sub-pixel peak column of each row within [col_lo, col_hi), by a parabola
/// through the maximum and its neighbours.
inline std::vector<double> track_peaks(const RealGrid& strip, std::size_t col_lo, std::size_t col_hi) {
  if (col_lo >= col_hi || col_hi > strip.cols()) throw std::invalid_argument("bad peak search range");
  std::vector<double> peaks;
  for (std::size_t r = 0; r < strip.rows(); ++r) {
    std::size_t best = col_lo;
    for (std::size_t c = col_lo; c < col_hi; ++c)
      if (strip(r, c) > strip(r, best)) best = c;
    double offset = 0.0;
    if (best > 0 && best + 1 < strip.cols()) {
      const double l = strip(r, best - 1), m = strip(r, best), h = strip(r, best + 1);
      const double den = l - 2.0 * m + h;
      if (den < 0.0) offset = 0.5 * (l - h) / den;
    }
    peaks.push_back(static_cast<double>(best) + offset);
  }
  return peaks;
}

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_slope needs two or more points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

inline std::string format_psnr(double v) { return std::isfinite(v) ? std::to_string(v) : "inf"; }

inline void write_sweep_csv(const std::filesystem::path& path, const PupilSweepReport& report) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const auto& p = report.ssim_params;
  out << "# ssim window " << p.window << " sigma " << p.sigma << " k1 " << p.k1 << " k2 " << p.k2
      << " dynamic_range reference_max; psnr peak reference_max; reconstructions gain-corrected\n";
  for (const auto& n : report.notes) out << "# " << n << '\n';
  out << "kind,channel,shift_x_mm,shift_y_mm,z_mm,d_mm,psnr_db,ssim,kappa\n";
  out << std::setprecision(10);
  for (const auto& r : report.records)
    out << to_string(r.kind) << ',' << r.channel << ',' << to_millimeters(r.pupil.shift.x) << ','
        << to_millimeters(r.pupil.shift.y) << ',' << to_millimeters(r.pupil.focus) << ','
        << to_millimeters(r.pupil.diameter) << ',' << format_psnr(r.psnr) << ',' << r.ssim << ',' << r.kappa
        << '\n';
}

inline std::string summary_line(const PupilSweepReport& report, SweepKind kind) {
  const auto s = report.stats(kind);
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << to_string(kind) << " n=" << s.count << " ssim_mean=" << s.ssim_mean
      << " ssim_var=" << s.ssim_variance << " ssim_min=" << s.ssim_min << " psnr_mean=" << format_psnr(s.psnr_mean)
      << " psnr_var=" << s.psnr_variance << " psnr_min=" << format_psnr(s.psnr_min);
  return out.str();
}

/// 8-bit gray PNG of img / scale, clamped to [0, 1]; scale defaults to the image max.
inline void write_gray_png(const std::filesystem::path& path, const RealGrid& img, std::optional<double> scale = {}) {
  const double s = scale.value_or(max_value(img));
  std::vector<std::uint8_t> samples(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = s > 0.0 ? std::clamp(img[i] / s, 0.0, 1.0) : 0.0;
    samples[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  io::write_png8(path.string(), img.rows(), img.cols(), 1, samples);
}

}  // namespace slfh
