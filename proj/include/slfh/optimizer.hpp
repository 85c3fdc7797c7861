#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "slfh/error.hpp"
#include "slfh/fft.hpp"
#include "slfh/grid.hpp"
#include "slfh/lightfield.hpp"
#include "slfh/optics.hpp"
#include "slfh/parallel.hpp"
#include "slfh/supervision.hpp"
#include "slfh/wavefield.hpp"

namespace slfh {

/// SLM phase stacks: one grid per (channel, temporal frame), stored unwrapped.
struct PhaseVariables {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::vector<RealGrid> grids;  // index channel * frames + frame

  static PhaseVariables zeros(std::size_t channels, std::size_t frames, std::size_t rows,
                              std::size_t cols) {
    return {channels, frames, std::vector<RealGrid>(channels * frames, RealGrid(rows, cols, 0.0))};
  }

  /// i.i.d. uniform phase in [0, 2 pi).
  static PhaseVariables random(std::size_t channels, std::size_t frames, std::size_t rows,
                               std::size_t cols, std::uint64_t seed) {
    auto p = zeros(channels, frames, rows, cols);
    std::mt19937_64 rng(seed);
    for (auto& g : p.grids)
      for (auto& v : g) v = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    return p;
  }

  RealGrid& at(std::size_t channel, std::size_t frame) { return grids.at(channel * frames + frame); }
  const RealGrid& at(std::size_t channel, std::size_t frame) const {
    return grids.at(channel * frames + frame);
  }
  std::size_t rows() const { return grids.empty() ? 0 : grids.front().rows(); }
  std::size_t cols() const { return grids.empty() ? 0 : grids.front().cols(); }

  friend bool operator==(const PhaseVariables&, const PhaseVariables&) = default;
};

inline double wrap_phase(double phi) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(phi, two_pi);
  if (w < 0.0) w += two_pi;
  return w >= two_pi ? 0.0 : w;
}

enum class LossDomain { amplitude, intensity };

inline const char* to_string(LossDomain d) { return d == LossDomain::amplitude ? "amplitude" : "intensity"; }

/// Rectangle of the pooled image that enters the loss.
struct Window {
  std::size_t row = 0, col = 0, rows = 0, cols = 0;
};

/// L2 fit of a pooled model image to its target after the closed-form scale
/// kappa that best maps the target onto the model.
struct ResidualFit {
  double loss = 0.0;
  double kappa = 0.0;
  RealGrid gradient;  // d loss / d model intensity (pooled)
};

inline constexpr double kGuardEpsilon = 1e-12;

inline ResidualFit fit_residual(const RealGrid& model, const RealGrid& target, LossDomain domain,
                                std::optional<Window> window = std::nullopt) {
  require_same_shape(model, target, "fit_residual");
  const Window win = window.value_or(Window{0, 0, model.rows(), model.cols()});
  if (win.row + win.rows > model.rows() || win.col + win.cols > model.cols() || win.rows == 0 || win.cols == 0)
    throw std::invalid_argument("loss window outside the image");

  const bool amp = domain == LossDomain::amplitude;
  const auto a_of = [&](double v) { return amp ? std::sqrt(std::max(v, 0.0)) : v; };
  double ab = 0.0, bb = 0.0;
  for (std::size_t r = win.row; r < win.row + win.rows; ++r)
    for (std::size_t c = win.col; c < win.col + win.cols; ++c) {
      const double a = a_of(model(r, c)), b = a_of(target(r, c));
      ab += a * b;
      bb += b * b;
    }
  ResidualFit fit;
  fit.kappa = bb > 0.0 ? ab / bb : 0.0;
  fit.gradient = RealGrid(model.rows(), model.cols(), 0.0);
  const double inv_m = 1.0 / static_cast<double>(win.rows * win.cols);
  for (std::size_t r = win.row; r < win.row + win.rows; ++r)
    for (std::size_t c = win.col; c < win.col + win.cols; ++c) {
      const double a = a_of(model(r, c));
      const double rho = a - fit.kappa * a_of(target(r, c));
      fit.loss += rho * rho;
      // kappa is optimal, so its dependence on the model drops out of the gradient
      const double d_a = 2.0 * rho * inv_m;
      if (amp)
        fit.gradient(r, c) = a > 0.0 ? d_a / (2.0 * std::max(a, kGuardEpsilon)) : 0.0;
      else
        fit.gradient(r, c) = d_a;
    }
  fit.loss *= inv_m;
  return fit;
}

/// Coherent near-field model: v = IFFT(K(q, p) * FFT(exp(j phi))).
class NearFieldModel {
 public:
  struct Frame {
    ComplexGrid field;     // u = exp(j phi)
    ComplexGrid spectrum;  // FFT(u)
  };
  using Bound = std::shared_ptr<const PropagationKernel>;
  using Accumulator = ComplexGrid;  // frequency domain

  NearFieldModel(OpticalConfig config, KernelOptions options = {}, bool cache_kernels = false)
      : config_(std::move(config)), options_(options), grid_(FrequencyGrid::of(config_)) {
    config_.validate();
    if (cache_kernels) cache_ = std::make_shared<KernelCache>(grid_, config_.focal_length, options_);
  }

  const OpticalConfig& config() const noexcept { return config_; }
  std::size_t channels() const noexcept { return config_.channels(); }
  std::size_t image_rows() const noexcept { return config_.rows; }
  std::size_t image_cols() const noexcept { return config_.cols; }
  std::size_t image_bytes() const noexcept { return config_.rows * config_.cols * sizeof(Complex); }
  bool cache_fields() const noexcept { return true; }
  std::optional<Window> window() const { return std::nullopt; }
  double eyebox() const { return min_eyebox_width(config_); }
  const OpticalConfig& target_config(std::size_t) const noexcept { return config_; }

  Frame prepare(const RealGrid& phase, std::size_t) const {
    if (phase.rows() != config_.rows || phase.cols() != config_.cols)
      throw std::invalid_argument("phase resolution does not match the optical configuration");
    Frame f;
    f.field = ComplexGrid(phase.rows(), phase.cols());
    for (std::size_t i = 0; i < phase.size(); ++i) f.field[i] = std::polar(1.0, phase[i]);
    f.spectrum = fft2_copy(f.field);
    return f;
  }

  Bound bind(const PupilState& p, std::size_t channel) const {
    const double wl = config_.wavelength(channel);
    if (cache_) return cache_->get(p, wl);
    return std::make_shared<const PropagationKernel>(make_kernel(grid_, p, wl, config_.focal_length, options_));
  }

  ComplexGrid propagate(const Bound& k, const Frame& f) const { return apply_kernel_to_spectrum(f.spectrum, *k); }

  Accumulator make_accumulator(std::size_t) const { return ComplexGrid(config_.rows, config_.cols); }

  void backpropagate(const Bound& k, const Frame&, ComplexGrid g, Accumulator& acc) const {
    fft2(g);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += std::conj(k->values[i]) * g[i];
  }

  /// dL/dphi = 2 Im(conj(u) w) with w = dL/du* from the accumulated spectrum.
  RealGrid finish(Accumulator acc, const Frame& f) const {
    ifft2(acc);
    RealGrid grad(acc.rows(), acc.cols());
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = 2.0 * std::imag(std::conj(f.field[k]) * acc[k]);
    return grad;
  }

 private:
  OpticalConfig config_;
  KernelOptions options_;
  FrequencyGrid grid_;
  std::shared_ptr<KernelCache> cache_;
};

struct SampleLoss {
  PupilState pupil;
  std::size_t channel = 0;
  double loss = 0.0;
  double kappa = 0.0;
};

struct LossReport {
  double loss = 0.0;
  std::vector<SampleLoss> samples;  // channel-major, batch order within a channel
};

struct Evaluation {
  LossReport report;
  PhaseVariables gradient;  // empty unless requested
};

/// Stored propagated fields above this size are recomputed in the backward pass.
inline constexpr std::size_t kFieldCacheBytes = std::size_t{768} << 20;

/// Loss (and optionally its phase gradient) of a batch under any forward model.
///
/// A model provides Frame / Bound / Accumulator types and
///   prepare(phase, channel) -> Frame, bind(pupil, channel) -> Bound,
///   propagate(Bound, Frame) -> complex image v,
///   make_accumulator(channel), backpropagate(Bound, Frame, dL/dv*, Accumulator&),
///   finish(Accumulator, Frame) -> dL/dphi.
///
/// Per sample and channel: the frame-averaged intensity is 2x2 pooled and fit
/// to the pooled target. The backward pass runs the Wirtinger chain rule through
/// pooling, |v|^2, the model adjoint and u = exp(j phi). Per-frame gradients sum
/// the samples in batch order, so results do not depend on thread scheduling.
template <class Model>
Evaluation evaluate_batch(const Model& model, const PhaseVariables& phases,
                          const std::vector<SupervisionSample>& batch, LossDomain domain,
                          bool with_gradient) {
  const std::size_t frames = phases.frames, samples = batch.size(), channels = phases.channels;
  if (channels == 0 || frames == 0) throw std::invalid_argument("empty phase variables");
  if (channels > model.channels()) throw std::invalid_argument("more phase channels than wavelengths");

  Evaluation out;
  out.report.samples.resize(channels * samples);
  if (with_gradient)
    out.gradient = PhaseVariables::zeros(channels, frames, phases.rows(), phases.cols());

  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<typename Model::Frame> prepared(frames);
    parallel_for(frames, [&](std::size_t t) { prepared[t] = model.prepare(phases.at(c, t), c); });
    std::vector<typename Model::Bound> bound(samples);
    parallel_for(samples, [&](std::size_t i) { bound[i] = model.bind(batch[i].pupil, c); });

    const bool store = with_gradient && model.cache_fields() &&
                       samples * frames * model.image_bytes() <= kFieldCacheBytes;
    std::vector<ComplexGrid> fields(store ? samples * frames : 0);
    std::vector<RealGrid> d_pooled(samples);
    const double inv_frames = 1.0 / static_cast<double>(frames);

    parallel_for(samples, [&](std::size_t i) {
      const auto& target = batch[i].targets.at(c);
      if (target.intensity.rows() != model.image_rows() || target.intensity.cols() != model.image_cols())
        throw std::invalid_argument("target resolution does not match the model image");
      RealGrid mean(model.image_rows(), model.image_cols(), 0.0);
      for (std::size_t t = 0; t < frames; ++t) {
        ComplexGrid v = model.propagate(bound[i], prepared[t]);
        for (std::size_t k = 0; k < v.size(); ++k) mean[k] += std::norm(v[k]);
        if (store) fields[i * frames + t] = std::move(v);
      }
      for (auto& m : mean) m *= inv_frames;
      auto fit = fit_residual(pool(mean), pool(target.intensity), domain, model.window());
      if (!std::isfinite(fit.loss)) {
        const auto& p = batch[i].pupil;
        std::ostringstream msg;
        msg << "non-finite loss for pupil shift (" << to_millimeters(p.shift.x) << ", "
            << to_millimeters(p.shift.y) << ") mm, z " << to_millimeters(p.focus) << " mm, d "
            << to_millimeters(p.diameter) << " mm, channel " << c;
        throw DivergenceError(msg.str());
      }
      out.report.samples[c * samples + i] = {batch[i].pupil, c, fit.loss, fit.kappa};
      d_pooled[i] = std::move(fit.gradient);
    });

    if (!with_gradient) continue;
    parallel_for(frames, [&](std::size_t t) {
      auto acc = model.make_accumulator(c);
      for (std::size_t i = 0; i < samples; ++i) {
        ComplexGrid g = store ? fields[i * frames + t] : model.propagate(bound[i], prepared[t]);
        const RealGrid& d = d_pooled[i];
        const double scale = 0.25 * inv_frames;  // 2x2 pooling and frame mean
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t col = 0; col < g.cols(); ++col) g(r, col) *= scale * d(r / 2, col / 2);
        model.backpropagate(bound[i], prepared[t], std::move(g), acc);
      }
      out.gradient.at(c, t) = model.finish(std::move(acc), prepared[t]);
    });
  }
  for (const auto& s : out.report.samples) out.report.loss += s.loss;
  return out;
}

template <class Model>
LossReport forward_loss(const Model& model, const PhaseVariables& phases,
                        const std::vector<SupervisionSample>& batch, LossDomain domain = LossDomain::amplitude) {
  return evaluate_batch(model, phases, batch, domain, false).report;
}

template <class Model>
PhaseVariables gradient(const Model& model, const PhaseVariables& phases,
                        const std::vector<SupervisionSample>& batch, LossDomain domain = LossDomain::amplitude) {
  return evaluate_batch(model, phases, batch, domain, true).gradient;
}

struct AdamParams {
  double lr = 2e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected ADAM over all phase grids.
class Adam {
 public:
  Adam(const PhaseVariables& shape, AdamParams params)
      : params_(params),
        m_(PhaseVariables::zeros(shape.channels, shape.frames, shape.rows(), shape.cols())),
        v_(m_) {}

  std::size_t step_count() const noexcept { return step_; }
  const AdamParams& params() const noexcept { return params_; }

  void step(PhaseVariables& x, const PhaseVariables& g) {
    ++step_;
    const double b1 = params_.beta1, b2 = params_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t n = 0; n < x.grids.size(); ++n) {
      auto& xs = x.grids[n];
      const auto& gs = g.grids.at(n);
      auto& ms = m_.grids[n];
      auto& vs = v_.grids[n];
      for (std::size_t k = 0; k < xs.size(); ++k) {
        ms[k] = b1 * ms[k] + (1.0 - b1) * gs[k];
        vs[k] = b2 * vs[k] + (1.0 - b2) * gs[k] * gs[k];
        xs[k] -= params_.lr * (ms[k] / c1) / (std::sqrt(vs[k] / c2) + params_.eps);
      }
    }
  }

 private:
  AdamParams params_;
  PhaseVariables m_, v_;
  std::size_t step_ = 0;
};

struct OptimizerConfig {
  std::size_t iterations = 500;
  std::size_t frames = 8;
  AdamParams adam;
  LossDomain domain = LossDomain::amplitude;
  std::size_t divergence_window = 50;
  double divergence_factor = 1e3;
};

struct IterationRecord {
  std::size_t iteration = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
  std::uint64_t batch_seed = 0;
};

struct OptimizeResult {
  PhaseVariables phases;
  std::vector<IterationRecord> trace;
};

using ProgressCallback = std::function<void(const IterationRecord&)>;

/// Gradient-descent loop shared by the near- and far-field modes. next_batch
/// returns a reference valid until its next call.
template <class Model, class NextBatch>
OptimizeResult run_optimization(const Model& model, NextBatch&& next_batch, PhaseVariables phases,
                                const OptimizerConfig& opt, std::uint64_t policy_seed,
                                const ProgressCallback& progress = {}) {
  if (opt.iterations == 0) throw ConfigError("optimizer.iterations", "must be at least 1");
  Adam adam(phases, opt.adam);
  OptimizeResult result;
  result.trace.reserve(opt.iterations);
  double initial = 0.0;
  std::size_t above = 0;
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<SupervisionSample>& batch = next_batch(it);
    auto eval = evaluate_batch(model, phases, batch, opt.domain, true);
    adam.step(phases, eval.gradient);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    IterationRecord rec{it, eval.report.loss, ms, batch_seed(policy_seed, it)};
    result.trace.push_back(rec);
    if (progress) progress(rec);

    if (it == 0) initial = rec.loss;
    above = rec.loss > opt.divergence_factor * initial ? above + 1 : 0;
    if (above >= opt.divergence_window) {
      std::ostringstream msg;
      msg << "optimization diverged: loss " << rec.loss << " exceeded " << opt.divergence_factor
          << " x initial loss " << initial << " for " << above << " consecutive iterations (iteration "
          << it << ")";
      throw DivergenceError(msg.str());
    }
  }
  result.phases = std::move(phases);
  return result;
}

/// Near-field optimization from random phase. seed drives the initial phase;
/// the policy's own seed drives pupil sampling.
inline OptimizeResult optimize(const LightField& lf, const SupervisionPolicy& policy,
                               const OpticalConfig& config, const OptimizerConfig& opt,
                               std::uint64_t seed, const ProgressCallback& progress = {}) {
  if (lf.rows() != config.rows || lf.cols() != config.cols)
    throw ConfigError("resolution", "light-field view resolution does not match the SLM resolution");
  if (lf.channels() < config.channels())
    throw ConfigError("wavelengths_nm", "light field has fewer channels than wavelengths");
  NearFieldModel model(config, KernelOptions{{}, policy.effective_bandpass()}, policy.fixed_pupils());
  SupervisionSource source(policy, lf, config);
  auto phases = PhaseVariables::random(config.channels(), opt.frames, config.rows, config.cols, seed);
  return run_optimization(
      model, [&](std::size_t it) -> const std::vector<SupervisionSample>& { return source.batch(it); },
      std::move(phases), opt, policy.seed, progress);
}

}  // namespace slfh
