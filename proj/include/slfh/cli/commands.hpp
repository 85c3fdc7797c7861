#pragma once

#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "slfh/cli/run_config.hpp"
#include "slfh/eval.hpp"
#include "slfh/farfield.hpp"
#include "slfh/io/binary_grid.hpp"
#include "slfh/optimizer.hpp"

namespace slfh::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDiverged = 3, kMissingArtifact = 4 };

/// Runs fn and maps library errors onto process exit codes.
template <class Fn>
int run_guarded(Fn&& fn) {
  try {
    fn();
    return kOk;
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfigError;
  } catch (const DivergenceError& e) {
    spdlog::error("{}", e.what());
    return kDiverged;
  } catch (const MissingArtifactError& e) {
    spdlog::error("missing artifact: {}", e.what());
    return kMissingArtifact;
  } catch (const MissingViewError& e) {
    spdlog::error("missing artifact: {}", e.what());
    return kMissingArtifact;
  } catch (const EmptyApertureError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfigError;
  } catch (const EmptyPupilError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfigError;
  } catch (const LightFieldError& e) {
    spdlog::error("light field: {}", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
}

inline constexpr const char* kResolvedConfig = "config.resolved.json";

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return out.str();
}

/// Creates parent/<prefix>_<timestamp>, or the exact name when one is given.
inline fs::path make_run_dir(const fs::path& parent, const std::string& prefix,
                             const std::optional<std::string>& name = std::nullopt) {
  fs::create_directories(parent);
  const std::string base = name.value_or(prefix + "_" + utc_timestamp());
  fs::path dir = parent / base;
  for (int k = 2; !name && fs::exists(dir); ++k) dir = parent / (base + "_" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

inline std::string phase_stem(std::size_t c, std::size_t t) {
  return "phase_c" + std::to_string(c) + "_t" + std::to_string(t);
}

/// phi mod 2 pi as 8-bit codes (256 levels over one period) and as float32.
inline void write_phases(const fs::path& dir, const PhaseVariables& phases) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t c = 0; c < phases.channels; ++c)
    for (std::size_t t = 0; t < phases.frames; ++t) {
      const RealGrid& phi = phases.at(c, t);
      RealGrid wrapped(phi.rows(), phi.cols());
      std::vector<std::uint8_t> codes(phi.size());
      for (std::size_t k = 0; k < phi.size(); ++k) {
        wrapped[k] = wrap_phase(phi[k]);
        codes[k] = static_cast<std::uint8_t>(std::min(255.0, std::floor(wrapped[k] / two_pi * 256.0)));
      }
      const auto stem = dir / phase_stem(c, t);
      io::write_png8(stem.string() + ".png", phi.rows(), phi.cols(), 1, codes);
      io::write_float_grid(stem.string() + ".f32", wrapped);
    }
}

inline PhaseVariables read_phases(const fs::path& dir, std::size_t channels, std::size_t frames, std::size_t rows,
                                  std::size_t cols) {
  auto phases = PhaseVariables::zeros(channels, frames, rows, cols);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t t = 0; t < frames; ++t) {
      const auto path = dir / (phase_stem(c, t) + ".f32");
      if (!fs::exists(path)) throw MissingArtifactError("phase file " + path.string() + " not found");
      auto g = io::read_real_grid(path.string());
      if (g.rows() != rows || g.cols() != cols)
        throw MissingArtifactError("phase file " + path.string() + " has the wrong resolution");
      phases.at(c, t) = std::move(g);
    }
  return phases;
}

inline void write_loss_csv(const fs::path& path, const std::vector<IterationRecord>& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "iteration,loss,wall_ms,batch_seed\n" << std::setprecision(17);
  for (const auto& r : trace) out << r.iteration << ',' << r.loss << ',' << r.wall_ms << ',' << r.batch_seed << '\n';
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Calls fn with the forward model used for scoring (no training band-pass).
template <class Fn>
decltype(auto) with_eval_model(const RunConfig& rc, Fn&& fn) {
  if (rc.mode == Mode::farfield) return fn(FarFieldModel(rc.farfield()));
  return fn(NearFieldModel(rc.optics));
}

inline std::size_t hologram_rows(const RunConfig& rc) {
  return rc.mode == Mode::farfield ? rc.farfield().rows() : rc.optics.rows;
}
inline std::size_t hologram_cols(const RunConfig& rc) {
  return rc.mode == Mode::farfield ? rc.farfield().cols() : rc.optics.cols;
}

inline OptimizeResult run_optimizer(const RunConfig& rc, const LightField& lf, bool quiet = false) {
  const std::size_t every = std::max<std::size_t>(1, rc.optimizer.iterations / 20);
  const ProgressCallback progress = [&](const IterationRecord& r) {
    if (!quiet && (r.iteration % every == 0 || r.iteration + 1 == rc.optimizer.iterations))
      spdlog::info("iteration {:5d}  loss {:.6e}  {:.0f} ms", r.iteration, r.loss, r.wall_ms);
  };
  if (rc.mode == Mode::farfield)
    return optimize_farfield(lf, rc.policy, rc.farfield(), rc.optimizer, rc.train_seed, progress);
  return optimize(lf, rc.policy, rc.optics, rc.optimizer, rc.train_seed, progress);
}

/// Writes the frozen config, phases and loss trace of a finished run.
inline void write_run(const fs::path& dir, const RunConfig& rc, const OptimizeResult& result) {
  write_json(dir / kResolvedConfig, to_json(rc));
  write_phases(dir, result.phases);
  write_loss_csv(dir / "loss.csv", result.trace);
}

struct OptimizeOptions {
  std::optional<fs::path> output_dir;
  std::optional<std::string> run_name;
  bool quiet = false;
};

inline fs::path cmd_optimize(const fs::path& config_path, const OptimizeOptions& options = {}) {
  RunConfig rc = load_run_config(config_path);
  if (options.output_dir) rc.output_dir = fs::weakly_canonical(fs::absolute(*options.output_dir));
  const LightField lf = load_scene(rc);
  spdlog::info("optimizing {} ({} mode, {} x {}, {} channel(s), {} frame(s), {} iterations)", to_string(rc.policy.kind),
               rc.mode == Mode::farfield ? "far-field" : "near-field", hologram_rows(rc), hologram_cols(rc),
               rc.optics.channels(), rc.optimizer.frames, rc.optimizer.iterations);
  const auto result = run_optimizer(rc, lf, options.quiet);
  const fs::path dir = make_run_dir(rc.output_dir, "run", options.run_name);
  write_run(dir, rc, result);
  spdlog::info("final loss {:.6e}; run written to {}", result.trace.back().loss, dir.string());
  return dir;
}

struct LoadedRun {
  RunConfig config;
  PhaseVariables phases;
};

inline LoadedRun load_run(const fs::path& run_dir) {
  const auto cfg_path = run_dir / kResolvedConfig;
  if (!fs::exists(cfg_path)) throw MissingArtifactError("frozen config " + cfg_path.string() + " not found");
  LoadedRun run{load_run_config(cfg_path), {}};
  run.phases = read_phases(run_dir, run.config.optics.channels(), run.config.optimizer.frames,
                           hologram_rows(run.config), hologram_cols(run.config));
  return run;
}

/// The run's light field, or another one with a note for the report header.
inline LightField load_run_scene(const RunConfig& rc, const std::optional<fs::path>& override_path,
                                 std::vector<std::string>& notes) {
  if (!override_path) return load_scene(rc);
  const auto p = fs::weakly_canonical(fs::absolute(*override_path));
  if (!rc.lightfield || *rc.lightfield != p) {
    const std::string trained = rc.lightfield ? rc.lightfield->string() : std::string("synthetic scene");
    notes.push_back("warning: evaluated against light field " + p.string() + ", trained on " + trained);
    spdlog::warn("{}", notes.back());
  }
  return load_scene(rc, p);
}

inline void write_image_pair(const fs::path& dir, const std::string& stem, const RealGrid& recon,
                             const RealGrid& target, bool floats) {
  const double scale = max_value(target);
  write_gray_png(dir / (stem + "_recon.png"), recon, scale > 0.0 ? std::optional(scale) : std::nullopt);
  write_gray_png(dir / (stem + "_target.png"), target);
  if (floats) {
    io::write_float_grid((dir / (stem + "_recon.f32")).string(), recon);
    io::write_float_grid((dir / (stem + "_target.f32")).string(), target);
  }
}

inline std::string mm_tag(double meters) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << to_millimeters(meters);
  return out.str();
}

inline SweepSpec sweep_spec(const RunConfig& rc, SweepKind kind, std::optional<std::size_t> n) {
  SweepSpec spec;
  spec.kind = kind;
  spec.n_states = n.value_or(kind == SweepKind::random ? rc.eval.n_random : rc.eval.n_structured);
  spec.seed = rc.eval_seed;
  spec.ranges = rc.policy.ranges;
  spec.fixed_z = rc.eval.fixed_z;
  // Light-field sweeps default to eyebox / 4, widened to the smallest trained pupil.
  spec.fixed_d = rc.eval.fixed_d.value_or(std::max(0.25 * rc.eyebox(), rc.policy.ranges.d_min));
  return spec;
}

struct EvaluateOptions {
  std::vector<SweepKind> sweeps;  // empty: all four, unless only epipolar output is requested
  std::optional<std::size_t> n;
  std::optional<std::size_t> epipolar;
  std::optional<double> epipolar_d;
  std::vector<double> epipolar_z;
  std::optional<fs::path> lightfield;
  std::optional<fs::path> output_dir;  // default <run>/eval
  bool images = true;
  bool floats = false;
};

inline PupilSweepReport cmd_evaluate(const fs::path& run_dir, const EvaluateOptions& options = {}) {
  const auto run = load_run(run_dir);
  const RunConfig& rc = run.config;
  std::vector<std::string> notes;
  const LightField lf = load_run_scene(rc, options.lightfield, notes);
  const fs::path out = options.output_dir.value_or(run_dir / "eval");
  fs::create_directories(out);

  std::vector<SweepKind> kinds = options.sweeps;
  if (kinds.empty() && !options.epipolar)
    kinds = {SweepKind::varying_aperture, SweepKind::focal_stack, SweepKind::light_field, SweepKind::random};

  PupilSweepReport all;
  all.notes = notes;
  with_eval_model(rc, [&](const auto& model) {
    for (SweepKind kind : kinds) {
      const auto spec = sweep_spec(rc, kind, options.n);
      const fs::path images = out / "images";
      if (options.images) fs::create_directories(images);
      const ScoreSink sink = [&](std::size_t i, const Score& s) {
        if (!options.images) return;
        write_image_pair(images, std::string(to_string(kind)) + "_" + std::to_string(i), s.reconstruction, s.target,
                         options.floats);
      };
      auto report = run_sweep(model, run.phases, lf, spec, rc.optimizer.domain, {}, sink);
      report.notes = notes;
      write_sweep_csv(out / ("sweep_" + std::string(to_string(kind)) + ".csv"), report);
      spdlog::info("{}", summary_line(report, kind));
      all.append(report);
      all.notes = notes;
    }
    if (options.epipolar) {
      const double d = options.epipolar_d.value_or(rc.eval.epipolar_d.value_or(model.eyebox() / 8.0));
      const auto zs = options.epipolar_z.empty() ? rc.eval.epipolar_z : options.epipolar_z;
      for (const auto& slice : epipolar_slice(model, run.phases, lf, *options.epipolar, d, zs, rc.optimizer.domain)) {
        const std::string stem = "epipolar_z" + mm_tag(slice.focus) + "mm_c" + std::to_string(slice.channel);
        write_image_pair(out, stem, slice.reconstruction, slice.target, options.floats);
      }
      spdlog::info("wrote {} epipolar slice(s) with {} positions, d = {} mm", zs.size() * rc.optics.channels(),
                   *options.epipolar, mm_tag(d));
    }
  });

  if (!kinds.empty()) {
    std::ofstream summary(out / "summary.txt");
    const auto& p = all.ssim_params;
    summary << "# ssim window " << p.window << " sigma " << p.sigma << " k1 " << p.k1 << " k2 " << p.k2
            << "; loss domain " << to_string(rc.optimizer.domain) << "; eval seed " << rc.eval_seed << '\n';
    for (const auto& n : notes) summary << "# " << n << '\n';
    for (SweepKind kind : all.kinds()) summary << summary_line(all, kind) << '\n';
  }
  return all;
}

struct RenderOptions {
  Vec2 shift;
  double focus = 0.0;
  std::optional<double> diameter;  // default: full eyebox
  std::optional<fs::path> output_dir;  // default <run>/render
  bool floats = true;
};

/// Renders one pupil state; returns the written reconstruction PNG paths.
inline std::vector<fs::path> cmd_render(const fs::path& run_dir, const RenderOptions& options) {
  const auto run = load_run(run_dir);
  const RunConfig& rc = run.config;
  const LightField lf = load_scene(rc);
  const fs::path out = options.output_dir.value_or(run_dir / "render");
  fs::create_directories(out);
  std::vector<fs::path> written;
  with_eval_model(rc, [&](const auto& model) {
    const double eyebox = model.eyebox();
    const PupilState p{options.shift, options.focus, options.diameter.value_or(eyebox)};
    p.validate();
    if (std::hypot(p.shift.x, p.shift.y) + 0.5 * p.diameter > 0.5 * eyebox * (1.0 + 1e-12))
      spdlog::warn("pupil (shift {}, {} mm, d {} mm) extends past the {} mm eyebox; the render is clipped",
                   mm_tag(p.shift.x), mm_tag(p.shift.y), mm_tag(p.diameter), mm_tag(eyebox));
    const std::string tag = "x" + mm_tag(p.shift.x) + "_y" + mm_tag(p.shift.y) + "_z" + mm_tag(p.focus) + "_d" +
                            mm_tag(p.diameter);
    for (std::size_t c = 0; c < run.phases.channels; ++c) {
      const std::string stem = "render_" + tag + "_c" + std::to_string(c);
      const RealGrid recon = render_reconstruction(model, run.phases, p, c);
      RealGrid target;
      try {
        target = render_target(model, lf, p, c);
      } catch (const EmptyApertureError& e) {
        spdlog::warn("{}; writing the reconstruction only", e.what());
        write_gray_png(out / (stem + "_recon.png"), recon);
        if (options.floats) io::write_float_grid((out / (stem + "_recon.f32")).string(), recon);
        written.push_back(out / (stem + "_recon.png"));
        continue;
      }
      const auto s = score_images(recon, target, rc.optimizer.domain, model.window());
      spdlog::info("channel {}: psnr {} dB, ssim {:.4f}", c, format_psnr(s.psnr), s.ssim);
      write_image_pair(out, stem, s.reconstruction, s.target, options.floats);
      written.push_back(out / (stem + "_recon.png"));
    }
  });
  return written;
}

struct CompareOptions {
  std::optional<std::size_t> n;
  std::optional<fs::path> output_dir;
  std::optional<std::string> run_name;
  bool quiet = false;
};

struct CompareRow {
  std::string policy;
  SweepKind sweep;
  SweepStats stats;
};

/// Optimizes the same scene with slfh, lf2fs and stft supervision, then scores
/// all three on shared random and focal-stack sweeps.
inline std::vector<CompareRow> cmd_compare(const fs::path& config_path, const CompareOptions& options = {}) {
  RunConfig base = load_run_config(config_path);
  if (options.output_dir) base.output_dir = fs::weakly_canonical(fs::absolute(*options.output_dir));
  const LightField lf = load_scene(base);
  const fs::path dir = make_run_dir(base.output_dir, "compare", options.run_name);
  std::vector<CompareRow> rows;
  for (PolicyKind kind : {PolicyKind::slfh, PolicyKind::lf2fs, PolicyKind::stft_grid}) {
    RunConfig rc = base;
    rc.policy.kind = kind;
    detail::prefixed("", [&] { rc.policy.validate(rc.eyebox()); });
    spdlog::info("compare: optimizing with {} supervision", to_string(kind));
    const auto result = run_optimizer(rc, lf, options.quiet);
    const fs::path sub = dir / to_string(kind);
    fs::create_directories(sub);
    write_run(sub, rc, result);
    with_eval_model(rc, [&](const auto& model) {
      PupilSweepReport report;
      for (SweepKind sweep : {SweepKind::random, SweepKind::focal_stack}) {
        const auto r = run_sweep(model, result.phases, lf, sweep_spec(rc, sweep, options.n), rc.optimizer.domain);
        write_sweep_csv(sub / ("sweep_" + std::string(to_string(sweep)) + ".csv"), r);
        rows.push_back({to_string(kind), sweep, r.stats(sweep)});
      }
    });
  }
  std::ofstream csv(dir / "compare.csv");
  csv << "policy,sweep,n,ssim_mean,ssim_min,ssim_var,psnr_mean,psnr_min\n" << std::setprecision(10);
  for (const auto& r : rows)
    csv << r.policy << ',' << to_string(r.sweep) << ',' << r.stats.count << ',' << r.stats.ssim_mean << ','
        << r.stats.ssim_min << ',' << r.stats.ssim_variance << ',' << format_psnr(r.stats.psnr_mean) << ','
        << format_psnr(r.stats.psnr_min) << '\n';
  for (const auto& r : rows)
    spdlog::info("{:5s} {:12s} ssim mean {:.4f} min {:.4f}  psnr mean {} dB", r.policy, to_string(r.sweep),
                 r.stats.ssim_mean, r.stats.ssim_min, format_psnr(r.stats.psnr_mean));
  spdlog::info("comparison written to {}", dir.string());
  return rows;
}

/// Parses "8mm", "250um", "0.01m" or a bare number in millimeters.
inline double parse_length(const std::string& text, const std::string& what) {
  std::string s = text;
  double scale = 1e-3;
  const auto ends = [&](const std::string& suffix) {
    return s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends("mm")) s.resize(s.size() - 2);
  else if (ends("um")) s.resize(s.size() - 2), scale = 1e-6;
  else if (ends("m")) s.resize(s.size() - 1), scale = 1.0;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) throw ConfigError(what, "cannot parse length \"" + text + "\"");
  return scale == 1e-3 ? millimeters(v) : scale == 1e-6 ? micrometers(v) : v;
}

}  // namespace slfh::cli
