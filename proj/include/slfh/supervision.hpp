#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slfh/error.hpp"
#include "slfh/lightfield.hpp"
#include "slfh/optics.hpp"
#include "slfh/parallel.hpp"
#include "slfh/wavefield.hpp"

namespace slfh {

enum class PolicyKind { slfh, lf2fs, stft_grid };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::slfh: return "slfh";
    case PolicyKind::lf2fs: return "lf2fs";
    case PolicyKind::stft_grid: return "stft";
  }
  return "?";
}

enum class Preset { paper_hw, paper_sim };

/// paper-hw: z in [0, 15] mm, d in [2, 20] mm.
/// paper-sim: z in [0, 15] mm, d between 10% and 40% of the smallest eyebox.
inline PupilRanges preset_ranges(Preset preset, const OpticalConfig& config) {
  PupilRanges r;
  r.z_min = 0.0;
  r.z_max = millimeters(15.0);
  if (preset == Preset::paper_hw) {
    r.d_min = millimeters(2.0);
    r.d_max = millimeters(20.0);
  } else {
    const double w = min_eyebox_width(config);
    r.d_min = 0.1 * w;
    r.d_max = 0.4 * w;
  }
  return r;
}

struct SupervisionPolicy {
  PolicyKind kind = PolicyKind::slfh;
  PupilRanges ranges;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::size_t layers = 5;          // lf2fs focal slices
  std::size_t grid = 8;            // stft shifts per axis
  std::optional<double> fixed_d;   // stft diameter, default smallest eyebox / 4
  std::optional<double> fixed_z;   // stft focus, default z_min
  std::optional<BandPass> bandpass;  // default: on for baselines, off for slfh

  bool fixed_pupils() const noexcept { return kind != PolicyKind::slfh; }

  BandPass effective_bandpass() const {
    if (bandpass) return *bandpass;
    return BandPass{kind != PolicyKind::slfh, 1.0};
  }

  double stft_diameter(double eyebox) const { return fixed_d.value_or(0.25 * eyebox); }
  double stft_diameter(const OpticalConfig& config) const { return stft_diameter(min_eyebox_width(config)); }
  double stft_focus() const { return fixed_z.value_or(ranges.z_min); }

  void validate(const OpticalConfig& config) const { validate(min_eyebox_width(config)); }

  /// w is the (smallest) eyebox width pupils must fit in.
  void validate(double w) const {
    ranges.validate();
    switch (kind) {
      case PolicyKind::slfh:
        if (batch_size == 0) throw ConfigError("policy.batch", "must be at least 1");
        if (ranges.d_min > w)
          throw ConfigError("pupils.d_min_mm", "every sampled pupil would exceed the eyebox");
        if (ranges.r_max && *ranges.r_max + 0.5 * ranges.d_min > 0.5 * w)
          throw ConfigError("pupils.shift_max_mm",
                            "shift range moves even the smallest pupil outside the eyebox");
        break;
      case PolicyKind::lf2fs:
        if (layers == 0) throw ConfigError("policy.layers", "must be at least 1");
        break;
      case PolicyKind::stft_grid: {
        if (grid == 0) throw ConfigError("policy.grid", "must be at least 1");
        const double d = stft_diameter(w);
        if (!(d > 0.0)) throw ConfigError("policy.fixed_d_mm", "must be positive");
        if (d > w * (1.0 + 1e-12)) throw ConfigError("policy.fixed_d_mm", "pupil grid exceeds the eyebox");
        break;
      }
    }
  }
};

struct SupervisionSample {
  PupilState pupil;
  std::vector<TargetImage> targets;  // one per channel
};

/// Seed of the random stream for one iteration; a pure function of (seed, iteration).
inline std::uint64_t batch_seed(std::uint64_t seed, std::uint64_t iteration) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (iteration + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Uniform draw on [a, b] from the top 53 bits; exact a when a == b.
inline double uniform(std::mt19937_64& rng, double a, double b) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return a + (b - a) * u;
}

/// Focus values of the lf2fs stack, equally spaced on [z_min, z_max].
inline std::vector<double> focal_stack_depths(const PupilRanges& ranges, std::size_t layers) {
  std::vector<double> z(layers);
  for (std::size_t j = 0; j < layers; ++j)
    z[j] = layers == 1 ? ranges.z_min
                       : ranges.z_min + static_cast<double>(j) * (ranges.z_max - ranges.z_min) /
                                            static_cast<double>(layers - 1);
  return z;
}

/// Regular n x n grid of pupil centers keeping a pupil of diameter d inside a
/// square eyebox of width w; row-major (y outer).
inline std::vector<Vec2> pupil_shift_grid(std::size_t n, double w, double d) {
  std::vector<Vec2> out;
  const double half = 0.5 * (w - d);
  const auto axis = [&](std::size_t i) {
    return n == 1 ? 0.0 : -half + static_cast<double>(i) * (w - d) / static_cast<double>(n - 1);
  };
  for (std::size_t iy = 0; iy < n; ++iy)
    for (std::size_t ix = 0; ix < n; ++ix) out.push_back({axis(ix), axis(iy)});
  return out;
}

/// Draws one slfh pupil: d first, then shift within +-r_max, then focus.
inline PupilState draw_pupil(std::mt19937_64& rng, const PupilRanges& ranges, double eyebox) {
  PupilState p;
  p.diameter = uniform(rng, ranges.d_min, ranges.d_max);
  const double r = ranges.r_max.value_or(std::max(0.0, 0.5 * (eyebox - p.diameter)));
  p.shift.x = uniform(rng, -r, r);
  p.shift.y = uniform(rng, -r, r);
  p.focus = uniform(rng, ranges.z_min, ranges.z_max);
  return p;
}

/// Pupil states the policy supervises at the given iteration.
inline std::vector<PupilState> policy_pupils(const SupervisionPolicy& policy, double w,
                                             std::size_t iteration) {
  policy.validate(w);
  std::vector<PupilState> pupils;
  switch (policy.kind) {
    case PolicyKind::slfh: {
      std::mt19937_64 rng(batch_seed(policy.seed, iteration));
      for (std::size_t i = 0; i < policy.batch_size; ++i) pupils.push_back(draw_pupil(rng, policy.ranges, w));
      break;
    }
    case PolicyKind::lf2fs:
      for (double z : focal_stack_depths(policy.ranges, policy.layers)) pupils.push_back({{0.0, 0.0}, z, w});
      break;
    case PolicyKind::stft_grid: {
      const double d = policy.stft_diameter(w);
      for (Vec2 s : pupil_shift_grid(policy.grid, w, d)) pupils.push_back({s, policy.stft_focus(), d});
      break;
    }
  }
  return pupils;
}

inline std::vector<PupilState> policy_pupils(const SupervisionPolicy& policy,
                                             const OpticalConfig& config, std::size_t iteration) {
  return policy_pupils(policy, min_eyebox_width(config), iteration);
}

/// Produces the supervision target for one pupil and channel.
using TargetRenderer = std::function<TargetImage(const PupilState&, std::size_t channel)>;

inline std::vector<SupervisionSample> render_samples(const std::vector<PupilState>& pupils,
                                                     std::size_t channels, const TargetRenderer& render) {
  std::vector<SupervisionSample> batch(pupils.size());
  for (std::size_t i = 0; i < pupils.size(); ++i) {
    batch[i].pupil = pupils[i];
    batch[i].targets.resize(channels);
  }
  parallel_for(pupils.size() * channels, [&](std::size_t job) {
    const std::size_t i = job / channels, c = job % channels;
    batch[i].targets[c] = render(pupils[i], c);
  });
  return batch;
}

/// Renders light-field targets for every channel of each pupil.
inline std::vector<SupervisionSample> render_samples(const std::vector<PupilState>& pupils,
                                                     const LightField& lf,
                                                     const OpticalConfig& config) {
  return render_samples(pupils, config.channels(), [&](const PupilState& p, std::size_t c) {
    return project_lightfield(lf, p, c, config);
  });
}

inline std::vector<SupervisionSample> sample_batch(const SupervisionPolicy& policy,
                                                   const LightField& lf, std::size_t iteration,
                                                   const OpticalConfig& config) {
  return render_samples(policy_pupils(policy, config, iteration), lf, config);
}

/// Supplies batches to the optimizer; fixed-pupil policies render their
/// targets once, slfh renders fresh targets every iteration.
class SupervisionSource {
 public:
  SupervisionSource(SupervisionPolicy policy, double eyebox, std::size_t channels, TargetRenderer render)
      : policy_(std::move(policy)), eyebox_(eyebox), channels_(channels), render_(std::move(render)) {
    policy_.validate(eyebox_);
    if (policy_.fixed_pupils()) fixed_ = render_samples(policy_pupils(policy_, eyebox_, 0), channels_, render_);
  }

  SupervisionSource(SupervisionPolicy policy, const LightField& lf, const OpticalConfig& config)
      : SupervisionSource(std::move(policy), min_eyebox_width(config), config.channels(),
                          [&lf, config](const PupilState& p, std::size_t c) {
                            return project_lightfield(lf, p, c, config);
                          }) {}

  const SupervisionPolicy& policy() const noexcept { return policy_; }

  /// Valid until the next call.
  const std::vector<SupervisionSample>& batch(std::size_t iteration) {
    if (policy_.fixed_pupils()) return fixed_;
    current_ = render_samples(policy_pupils(policy_, eyebox_, iteration), channels_, render_);
    return current_;
  }

 private:
  SupervisionPolicy policy_;
  double eyebox_;
  std::size_t channels_;
  TargetRenderer render_;
  std::vector<SupervisionSample> fixed_;
  std::vector<SupervisionSample> current_;
};

}  // namespace slfh
