// Acceptance run: one PASS/FAIL line per criterion on stdout, logs on stderr.
// Optional arguments select criteria by name; --report FILE also writes the lines there.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "slfh/cli/commands.hpp"
#include "slfh/scene.hpp"

using namespace slfh;
using namespace slfh::cli;

namespace {

constexpr double kPi = std::numbers::pi;
const fs::path kConfigs = fs::path(SLFH_SOURCE_DIR) / "configs";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream out;
  out << std::setprecision(precision) << v;
  return out.str();
}

OpticalConfig optics(std::size_t n) {
  OpticalConfig c;
  c.wavelengths = {nanometers(440)};
  c.rows = c.cols = n;
  return c;
}

ComplexGrid random_field(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  ComplexGrid g(rows, cols);
  for (auto& v : g) v = {n(rng), n(rng)};
  return g;
}

double rel_diff(Complex a, Complex b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

LightField random_lf(std::size_t grid, std::size_t n, double eyebox, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::vector<std::vector<RealGrid>> views;
  for (std::size_t k = 0; k < grid * grid; ++k) {
    RealGrid img(n, n);
    for (auto& v : img) v = u(rng);
    views.push_back({std::move(img)});
  }
  return LightField::make(grid, grid, {eyebox, eyebox}, std::move(views));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome eyebox_arithmetic() {
  OpticalConfig c;
  c.wavelengths = {nanometers(440)};
  c.slm_pitch = micrometers(8);
  c.focal_length = millimeters(400);
  const double w = eyebox_width(c, 0);
  // 0.022 m has no exact binary form; allow one ulp either side.
  const bool ok = w >= std::nextafter(0.022, 0.0) && w <= std::nextafter(0.022, 1.0);
  return {ok, fmt(to_millimeters(w), 12) + " mm (" + fmt(w, 17) + " m)"};
}

Outcome gradient_oracle() {
  const auto c = optics(16);
  const auto lf = random_lf(3, 16, 0.022, 60);
  std::mt19937_64 rng(61);
  PupilRanges ranges;
  ranges.d_min = 0.012;
  std::vector<PupilState> pupils;
  for (int i = 0; i < 3; ++i) pupils.push_back(draw_pupil(rng, ranges, 0.022));
  const auto batch = render_samples(pupils, lf, c);
  const NearFieldModel model(c);
  const double h = 1e-4;
  double worst = 0.0;
  std::size_t checked = 0;
  for (auto domain : {LossDomain::amplitude, LossDomain::intensity}) {
    auto phases = PhaseVariables::random(1, 2, 16, 16, 62);
    const auto grad = gradient(model, phases, batch, domain);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t k = 0; k < 256; k += 4) {
        double& phi = phases.at(0, t)[k];
        const double saved = phi;
        phi = saved + h;
        const double up = forward_loss(model, phases, batch, domain).loss;
        phi = saved - h;
        const double down = forward_loss(model, phases, batch, domain).loss;
        phi = saved;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(grad.at(0, t)[k] - fd) / std::max(std::abs(fd), 1e-8));
        ++checked;
      }
  }
  return {worst < 1e-3 && checked / 2 >= 100,
          "max rel err " + fmt(worst) + " over " + std::to_string(checked / 2) + " px per domain"};
}

Outcome adjoint_identities() {
  double near = 0.0, far = 0.0;
  for (std::size_t n : {8u, 16u, 64u}) {
    const auto c = optics(n);
    for (PupilState p : {PupilState{{0, 0}, 0.0, 0.022}, PupilState{{0.003, -0.004}, 0.007, 0.009},
                         PupilState{{-0.006, 0.001}, 0.015, 0.005}}) {
      const auto k = make_kernel(FrequencyGrid::of(c), p, c.wavelengths[0], c.focal_length);
      const auto u = random_field(n, n, 11 * n + 1), g = random_field(n, n, 13 * n + 2);
      near = std::max(near, rel_diff(inner(project_linear(u, k), g), inner(u, adjoint_linear(g, k))));
    }
    FarFieldConfig cfg;
    cfg.optics = optics(256);
    cfg.optics.focal_length = 0.1;
    cfg.tile = n;
    const double pitch = cfg.optics.slm_pitch;
    for (PupilState p : {PupilState{{0, 0}, 0, n * pitch}, PupilState{{0.0003, -0.0002}, 0.004, 0.7 * n * pitch},
                         PupilState{{-0.0009, 0.0009}, 0.011, 0.5 * n * pitch}}) {
      const auto b = bind_tile(cfg, p, 0);
      const auto u = random_field(256, 256, n), g = random_field(n, n, n + 1);
      far = std::max(far, rel_diff(inner(farfield_linear(u, b, cfg), g), inner(u, farfield_adjoint(g, b, cfg))));
    }
  }
  return {near < 1e-8 && far < 1e-8, "near-field " + fmt(near) + ", far-field " + fmt(far)};
}

Outcome energy_conservation() {
  const std::size_t n = 64;
  const auto c = optics(n);
  const double w = eyebox_width(c, 0);
  const auto u = random_field(n, n, 21);
  // The full-eyebox disc has radius exactly n/2 frequency samples here.
  auto U = fft2_copy(u);
  const long half = static_cast<long>(n / 2);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) {
      const long fy = r < n / 2 ? long(r) : long(r) - long(n), fx = k < n / 2 ? long(k) : long(k) - long(n);
      if (fx * fx + fy * fy >= half * half) U(r, k) = 0.0;
    }
  double e0 = 0.0;
  for (auto v : U) e0 += std::norm(v);
  double worst = 0.0;
  for (double z : {0.0, 0.005, 0.015}) {
    const auto I = project_wave({u, c.slm_pitch, c.wavelengths[0]}, {{0, 0}, z, w}, c);
    worst = std::max(worst, std::abs(sum(I) - e0) / e0);
  }
  return {worst < 1e-6, "max rel energy change " + fmt(worst)};
}

Outcome propagation_semigroup() {
  const auto c = optics(64);
  const auto g = FrequencyGrid::of(c);
  double worst = 0.0;
  for (auto [z1, z2] : {std::pair{0.005, 0.010}, std::pair{0.0123, 0.0027}, std::pair{-0.004, 0.015}}) {
    const auto a = angular_spectrum_kernel(g, z1, c.wavelengths[0]);
    const auto b = angular_spectrum_kernel(g, z2, c.wavelengths[0]);
    const auto ab = angular_spectrum_kernel(g, z1 + z2, c.wavelengths[0]);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] * b[i] - ab[i]));
  }
  return {worst < 1e-10, "max |H(z1)H(z2) - H(z1+z2)| " + fmt(worst)};
}

// Centroid of the spot core: pixels at or above 30% of the peak.
Vec2 spot_center(const RealGrid& img) {
  const double floor = 0.3 * max_value(img);
  double sx = 0, sy = 0, total = 0;
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t k = 0; k < img.cols(); ++k) {
      if (img(r, k) < floor) continue;
      sx += img(r, k) * double(k);
      sy += img(r, k) * double(r);
      total += img(r, k);
    }
  return {sx / total, sy / total};
}

Outcome photo_consistency() {
  const std::size_t n = 128;
  const auto c = optics(n);
  const double z0 = millimeters(10), wl = c.wavelengths[0], pitch = c.slm_pitch;
  // Converging lens phase, apertured where its local frequency reaches the band limit.
  const double aperture = wl * z0 / (2 * pitch);
  ComplexField u{ComplexGrid(n, n), pitch, wl};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) {
      const double x = (double(k) - n / 2) * pitch, y = (double(r) - n / 2) * pitch;
      const double rr = x * x + y * y;
      if (rr < aperture * aperture) u.values(r, k) = std::polar(1.0, -kPi * rr / (wl * z0));
    }
  SceneSpec scene;
  scene.grid_rows = scene.grid_cols = 33;
  scene.points.push_back({z0, {double(n / 2), double(n / 2)}, 1.0});
  const auto lf = synthesize_test_scene(scene, c);

  const double w = eyebox_width(c, 0);
  double worst = 0.0, off_axis = 0.0;
  std::size_t states = 0;
  for (double d : {millimeters(4), millimeters(8), millimeters(12)})
    for (int i = 0; i < 5; ++i) {
      const double s = -0.5 * (w - d) + i * (w - d) / 4.0;
      const PupilState p{{s, 0.0}, 0.0, d};
      const Vec2 a = spot_center(project_lightfield(lf, p, 0, c).intensity);
      const Vec2 b = spot_center(project_wave(u, p, c));
      const double geometric = double(n / 2) - z0 / c.focal_length * s / pitch;
      worst = std::max({worst, std::abs(a.x - b.x), std::abs(a.y - b.y)});
      off_axis = std::max({off_axis, std::abs(a.x - geometric), std::abs(b.x - geometric)});
      ++states;
    }
  return {worst <= 1.0 && off_axis <= 1.0 && states == 15,
          "light field vs wave max offset " + fmt(worst) + " px, vs -(z0/f)s " + fmt(off_axis) + " px, " +
              std::to_string(states) + " pupil states"};
}

Outcome policy_specialization() {
  const auto c = optics(32);
  const auto lf = random_lf(5, 32, 0.022, 90);
  SupervisionPolicy stack;
  stack.kind = PolicyKind::lf2fs;
  stack.layers = 5;
  stack.ranges.z_max = 0.015;
  const auto reference = sample_batch(stack, lf, 0, c);
  const auto depths = focal_stack_depths(stack.ranges, 5);
  bool equal = reference.size() == 5;
  for (std::size_t j = 0; j < reference.size(); ++j) {
    const auto direct = project_lightfield(lf, {{0, 0}, depths[j], min_eyebox_width(c)}, 0, c);
    equal = equal && reference[j].targets[0].intensity == direct.intensity;
  }
  bool degenerate = true;
  for (std::size_t j = 0; j < reference.size(); ++j) {
    SupervisionPolicy s;
    s.batch_size = 3;
    s.seed = 77 + j;
    const double z = reference[j].pupil.focus, w = min_eyebox_width(c);
    s.ranges = {z, z, w, w, 0.0};
    for (const auto& sample : sample_batch(s, lf, j, c))
      degenerate = degenerate && sample.targets[0].intensity == reference[j].targets[0].intensity;
  }
  return {equal && degenerate, std::string("lf2fs vs projections ") + (equal ? "bit-equal" : "differ") +
                                   ", degenerate slfh vs lf2fs " + (degenerate ? "bit-equal" : "differ")};
}

Outcome ordering() {
  const RunConfig base = load_run_config(kConfigs / "ordering.json");
  const LightField lf = load_scene(base);
  struct Result {
    std::string name;
    SweepStats random, stack;
  };
  std::vector<Result> results;
  SupervisionPolicy lf2fs = base.policy;
  lf2fs.kind = PolicyKind::lf2fs;
  const auto stack_pupils = policy_pupils(lf2fs, base.eyebox(), 0);
  for (PolicyKind kind : {PolicyKind::slfh, PolicyKind::lf2fs, PolicyKind::stft_grid}) {
    RunConfig rc = base;
    rc.policy.kind = kind;
    spdlog::info("ordering: optimizing with {}", to_string(kind));
    const auto run = run_optimizer(rc, lf, true);
    const NearFieldModel model(rc.optics);
    const auto random = run_sweep(model, run.phases, lf, sweep_spec(rc, SweepKind::random, 32), rc.optimizer.domain);
    const auto stack = score_pupils(
        stack_pupils, 1, SweepKind::focal_stack,
        [&](const PupilState& p, std::size_t ch) { return render_reconstruction(model, run.phases, p, ch); },
        [&](const PupilState& p, std::size_t ch) { return render_target(model, lf, p, ch); }, rc.optimizer.domain);
    results.push_back({to_string(kind), random.stats(SweepKind::random), stack.stats(SweepKind::focal_stack)});
    spdlog::info("ordering: {} random mean {:.4f} min {:.4f}, focal stack mean {:.4f}", to_string(kind),
                 results.back().random.ssim_mean, results.back().random.ssim_min, results.back().stack.ssim_mean);
  }
  const auto& s = results[0];
  bool a = true, b = true;
  for (std::size_t i = 1; i < results.size(); ++i) {
    a = a && s.random.ssim_mean >= results[i].random.ssim_mean - 0.005;
    b = b && s.random.ssim_min >= results[i].random.ssim_min;
  }
  const bool c = results[1].stack.ssim_mean > s.stack.ssim_mean;
  std::string detail;
  for (const auto& r : results)
    detail += r.name + " mean " + fmt(r.random.ssim_mean) + " min " + fmt(r.random.ssim_min) + "; ";
  detail += "focal stack lf2fs " + fmt(results[1].stack.ssim_mean) + " vs slfh " + fmt(s.stack.ssim_mean);
  detail += std::string(" [a ") + (a ? "ok" : "fail") + ", b " + (b ? "ok" : "fail") + ", c " + (c ? "ok" : "fail") +
            "]";
  return {a && b && c, detail};
}

double contrast(const RealGrid& img, std::size_t border) {
  double s = 0, s2 = 0, n = 0;
  for (std::size_t r = border; r + border < img.rows(); ++r)
    for (std::size_t k = border; k + border < img.cols(); ++k) {
      s += img(r, k);
      s2 += img(r, k) * img(r, k);
      n += 1;
    }
  const double mean = s / n;
  return std::sqrt(std::max(0.0, s2 / n - mean * mean)) / mean;
}

Outcome speckle() {
  const auto j = json::parse(R"({
    "optics": {"wavelengths_nm": [440], "slm_pitch_um": 8, "resolution": [128, 128], "focal_length_mm": 400},
    "policy": {"policy": "slfh", "batch": 4},
    "pupils": {"z_min_mm": 0, "z_max_mm": 15, "d_min_mm": 8, "d_max_mm": 20},
    "optimizer": {"iterations": 200, "frames": 8},
    "io": {"scene": {"grid": [5, 5], "planes": [{"depth_mm": 0, "pattern": "constant:1"}]}},
    "seeds": {"train": 11, "eval": 12}
  })");
  const RunConfig rc = parse_run_config(j, kConfigs);
  const LightField lf = load_scene(rc);
  const auto run = run_optimizer(rc, lf, true);
  const NearFieldModel model(rc.optics);
  const auto pupils = sweep_pupils(sweep_spec(rc, SweepKind::random, 8), model.eyebox());
  double worst = 0.0, single_mean = 0.0, averaged_mean = 0.0;
  for (const auto& p : pupils) {
    const auto bound = model.bind(p, 0);
    std::vector<RealGrid> frames;
    double single = 0.0;
    for (std::size_t t = 0; t < run.phases.frames; ++t) {
      frames.push_back(intensity(model.propagate(bound, model.prepare(run.phases.at(0, t), 0))));
      single += contrast(frames.back(), 8) / double(run.phases.frames);
    }
    const double averaged = contrast(average_intensity(frames), 4);
    worst = std::max(worst, averaged / single);
    single_mean += single / double(pupils.size());
    averaged_mean += averaged / double(pupils.size());
  }
  return {worst <= 0.45, "worst ratio " + fmt(worst) + " over " + std::to_string(pupils.size()) +
                             " pupils (mean contrast " + fmt(single_mean) + " single frame, " + fmt(averaged_mean) +
                             " averaged)"};
}

Outcome farfield_parallax() {
  const RunConfig rc = load_run_config(kConfigs / "farfield_parallax.json");
  const LightField lf = load_scene(rc);
  const auto run = run_optimizer(rc, lf, true);
  const FarFieldModel model(rc.farfield());
  const std::size_t positions = rc.eval.epipolar_positions;
  const double d = rc.eval.epipolar_d.value_or(millimeters(1.5));
  const auto slices = epipolar_slice(model, run.phases, lf, positions, d, {0.0}, rc.optimizer.domain);
  const auto scene = rc.scene.value();
  std::vector<double> index(positions);
  for (std::size_t i = 0; i < positions; ++i) index[i] = double(i);
  std::vector<double> per_depth, target_per_depth;
  std::string detail;
  for (const auto& pt : scene.at("points")) {
    const double z = pt.at("depth_mm").get<double>();
    const auto col = static_cast<std::size_t>(pt.at("position_px")[0].get<double>() / 2.0);
    const std::size_t lo = col - 12, hi = col + 12;
    const double slope = fit_slope(index, track_peaks(slices[0].reconstruction, lo, hi));
    const double target = fit_slope(index, track_peaks(slices[0].target, lo, hi));
    per_depth.push_back(slope / z);
    target_per_depth.push_back(target / z);
    detail += "z " + fmt(z) + " mm slope " + fmt(slope) + " px/step (target " + fmt(target) + "); ";
  }
  const double ratio = per_depth[1] / per_depth[0];
  detail += "slope/depth ratio " + fmt(ratio);
  return {per_depth[0] != 0.0 && std::abs(ratio - 1.0) <= 0.15, detail};
}

Outcome determinism() {
  const fs::path tmp = fs::temp_directory_path() / ("slfh_acceptance_" + std::to_string(std::random_device{}()));
  OptimizeOptions o;
  o.output_dir = tmp;
  o.quiet = true;
  o.run_name = "a";
  const auto a = cmd_optimize(kConfigs / "quick.json", o);
  o.run_name = "b";
  const auto b = cmd_optimize(kConfigs / "quick.json", o);
  std::size_t compared = 0;
  bool same = true;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto ext = e.path().extension();
    if (ext != ".f32" && ext != ".png") continue;
    same = same && slurp(e.path()) == slurp(b / e.path().filename());
    ++compared;
  }
  std::error_code ec;
  fs::remove_all(tmp, ec);
  return {same && compared > 0, std::to_string(compared) + " phase exports " + (same ? "bit-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("acceptance"));
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"eyebox", eyebox_arithmetic},
      {"gradient", gradient_oracle},
      {"adjoint", adjoint_identities},
      {"energy", energy_conservation},
      {"semigroup", propagation_semigroup},
      {"photo_consistency", photo_consistency},
      {"policy_specialization", policy_specialization},
      {"ordering", ordering},
      {"speckle", speckle},
      {"farfield_parallax", farfield_parallax},
      {"determinism", determinism},
  };
  std::vector<std::string> only;
  std::optional<std::ofstream> report;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--report" && i + 1 < argc) report.emplace(argv[++i]);
    else only.push_back(arg);
  }
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = check();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char line[1024];
    std::snprintf(line, sizeof line, "%s %s: %s (%.1f s)", out.pass ? "PASS" : "FAIL", name.c_str(),
                  out.detail.c_str(), seconds);
    std::puts(line);
    std::fflush(stdout);
    if (report) *report << line << std::endl;
    if (!out.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
