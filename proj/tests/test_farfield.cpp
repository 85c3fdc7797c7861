#include <gtest/gtest.h>

#include <numbers>

#include "slfh/farfield.hpp"
#include "support.hpp"

using namespace slfh;

namespace {

FarFieldConfig ff_config(std::size_t n, std::size_t tile, double f = 0.1) {
  FarFieldConfig cfg;
  cfg.optics = test::config(n, n);
  cfg.optics.focal_length = f;
  cfg.tile = tile;
  return cfg;
}

// Views span `eyebox` on a grid x grid lattice.
LightField random_views(std::size_t tile, std::size_t grid, double eyebox, std::uint64_t seed) {
  std::vector<std::vector<RealGrid>> views;
  for (std::size_t k = 0; k < grid * grid; ++k) views.push_back({test::random_real(tile, tile, seed + k, 0.1, 1.0)});
  return LightField::make(grid, grid, {eyebox, eyebox}, std::move(views));
}

}  // namespace

TEST(FarFieldConfig, Validation) {
  auto cfg = ff_config(256, 64);
  EXPECT_NO_THROW(cfg.validate());
  cfg.tile = 96;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ff_config(128, 64);
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ff_config(256, 64);
  cfg.retina_window = Window{2, 2, 64, 64};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.retina_window = Window{2, 2, 30, 31};
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NEAR(ff_config(1024, 256).eyebox(), 1024 * 8e-6, 1e-18);
  EXPECT_NEAR(ff_config(1024, 256).retina_pitch(0), 440e-9 * 0.1 / (256 * 8e-6), 1e-18);
}

TEST(FarField, DeltaGivesFlatImage) {
  const auto cfg = ff_config(256, 64);
  ComplexGrid u(256, 256);
  u(130, 121) = 1.0;
  const auto I = project_farfield({u, 8e-6, 440e-9}, {{0, 0}, 0, 60 * 8e-6}, cfg);
  for (double v : I) EXPECT_NEAR(v, 1.0 / (64 * 64), 1e-15);
}

TEST(FarField, RampDisplacesSpot) {
  const auto cfg = ff_config(256, 64);
  const double pitch = 8e-6;
  for (int k : {-9, 0, 5, 13}) {
    const double c = k / (64 * pitch);  // cycles per meter, on the tile's frequency grid
    ComplexGrid u(256, 256);
    for (std::size_t r = 0; r < 256; ++r)
      for (std::size_t j = 0; j < 256; ++j) u(r, j) = std::polar(1.0, 2 * std::numbers::pi * c * (double(j) - 128) * pitch);
    const auto I = project_farfield({u, pitch, 440e-9}, {{0, 0}, 0, 64 * pitch}, cfg);
    std::size_t peak = 0;
    for (std::size_t i = 0; i < I.size(); ++i)
      if (I[i] > I[peak]) peak = i;
    EXPECT_EQ(peak / 64, 32u);
    EXPECT_EQ(int(peak % 64) - 32, k);
  }
}

TEST(FarField, AdjointIdentity) {
  for (std::size_t tile : {8u, 16u, 64u}) {
    const auto cfg = ff_config(256, tile);
    const double pitch = cfg.optics.slm_pitch;
    for (PupilState p : {PupilState{{0, 0}, 0, tile * pitch}, PupilState{{0.0003, -0.0002}, 0.004, 0.7 * tile * pitch},
                         PupilState{{-0.0009, 0.0009}, 0.011, 0.5 * tile * pitch}}) {
      const auto b = bind_tile(cfg, p, 0);
      const auto u = test::random_field(256, 256, tile), g = test::random_field(tile, tile, tile + 1);
      const Complex lhs = inner(farfield_linear(u, b, cfg), g);
      const Complex rhs = inner(u, farfield_adjoint(g, b, cfg));
      EXPECT_LT(test::rel_diff(lhs, rhs), 1e-8) << tile;
    }
  }
}

TEST(FarField, EnergyConservation) {
  const auto cfg = ff_config(256, 64);
  const auto u = test::random_field(256, 256, 7);
  const PupilState p{{0.0002, 0.0001}, 0.006, 50 * 8e-6};
  const auto b = bind_tile(cfg, p, 0);
  double masked = 0;
  for (std::size_t r = 0; r < 256; ++r)
    for (std::size_t c = 0; c < 256; ++c) {
      const double x = (double(c) - 128) * 8e-6 - p.shift.x, y = (double(r) - 128) * 8e-6 - p.shift.y;
      if (std::hypot(x, y) < p.diameter / 2 * (1 - 1e-12)) masked += std::norm(u(r, c));
    }
  const double image = sum(intensity(farfield_linear(u, b, cfg)));
  EXPECT_NEAR(image, masked, 1e-6 * masked);
}

TEST(FarField, TilePlacementDoesNotChangeEnergy) {
  // Near the edge the tile is clamped; the pupil pixels and their energy are the same for any tile.
  const auto u = test::random_field(256, 256, 8);
  const PupilState p{{0.0008, -0.0009}, 0.003, 30 * 8e-6};
  const auto a = intensity(farfield_linear(u, bind_tile(ff_config(256, 32), p, 0), ff_config(256, 32)));
  const auto b = intensity(farfield_linear(u, bind_tile(ff_config(256, 128), p, 0), ff_config(256, 128)));
  EXPECT_NEAR(sum(a), sum(b), 1e-9 * sum(a));
  EXPECT_THROW(bind_tile(ff_config(256, 32), {{0, 0}, 0, 40 * 8e-6}, 0), ConfigError);
  EXPECT_THROW(bind_tile(ff_config(256, 64), {{0.01, 0}, 0, 10 * 8e-6}, 0), EmptyPupilError);
}

TEST(FarField, SinglePupilIsPlainFourierCgh) {
  const auto cfg = ff_config(256, 32);
  const FarFieldModel model(cfg);
  const auto phase = test::random_real(256, 256, 3, 0, 6.28);
  const PupilState p{{0, 0}, 0, 32 * 8e-6};
  const auto v = model.propagate(model.bind(p, 0), model.prepare(phase, 0));
  const auto b = bind_tile(cfg, p, 0);
  ComplexGrid tile(32, 32);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) {
      const double x = (double(b.col0 + j) - 128) * 8e-6, y = (double(b.row0 + i) - 128) * 8e-6;
      if (std::hypot(x, y) < 16 * 8e-6 * (1 - 1e-12)) tile(i, j) = std::polar(1.0, phase(b.row0 + i, b.col0 + j));
    }
  const auto reference = fftshift(fft2_copy(tile));
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(std::abs(v[k] - reference[k]), 0.0, 1e-12);
}

TEST(FarField, GradientMatchesFiniteDifferences) {
  auto cfg = ff_config(256, 16);
  const FarFieldModel model(cfg);
  const auto lf = random_views(16, 5, 0.0002, 10);
  const std::vector<PupilState> pupils{{{0, 0}, 0.002, 15 * 8e-6}, {{0.00005, -0.00004}, 0.009, 12 * 8e-6},
                                       {{-0.00003, 0.0}, 0.0, 16 * 8e-6}};
  const auto batch = render_samples(pupils, 1, farfield_targets(lf, cfg));
  for (auto domain : {LossDomain::amplitude, LossDomain::intensity}) {
    auto phases = PhaseVariables::random(1, 2, 256, 256, 11);
    const auto grad = gradient(model, phases, batch, domain);
    double worst = 0;
    std::size_t checked = 0;
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t r = 120; r < 136; r += 2)
        for (std::size_t c = 119; c < 137; c += 3) {
          double& phi = phases.at(0, t)(r, c);
          const double saved = phi, h = 1e-4;
          phi = saved + h;
          const double up = forward_loss(model, phases, batch, domain).loss;
          phi = saved - h;
          const double down = forward_loss(model, phases, batch, domain).loss;
          phi = saved;
          const double fd = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(grad.at(0, t)(r, c) - fd) / std::max(std::abs(fd), 1e-8));
          ++checked;
        }
    EXPECT_EQ(checked, 96u);
    EXPECT_LT(worst, 1e-3) << to_string(domain);
    EXPECT_EQ(grad.at(0, 0)(10, 10), 0.0);  // outside every pupil
  }
}

TEST(FarField, WorkingSetScalesWithPupilArea) {
  const std::size_t n = 1024;
  const auto cfg = ff_config(n, n / 8);
  const FarFieldModel model(cfg);
  const auto lf = random_views(n / 8, 5, 0.002, 20);
  SupervisionPolicy policy;
  policy.seed = 3;
  policy.ranges = {0.0, 0.01, cfg.eyebox() / 8, cfg.eyebox() / 8, 0.0005};
  const auto batch = render_samples(policy_pupils(policy, cfg.eyebox(), 0), 1, farfield_targets(lf, cfg));
  const auto phases = PhaseVariables::random(1, 4, n, n, 4);
  ThreadLimit one(1);
  FieldMemory::reset_peak();
  const std::size_t before = FieldMemory::live();
  const auto eval = evaluate_batch(model, phases, batch, LossDomain::amplitude, true);
  const double peak = double(FieldMemory::peak_bytes() - before);
  const double full = double(n * n * sizeof(Complex));
  RecordProperty("working_set_fraction", std::to_string(peak / full));
  EXPECT_LT(peak, 0.10 * full);
  EXPECT_GT(eval.report.loss, 0.0);
}

TEST(FarField, OptimizeRejectsOversizedPupils) {
  const auto cfg = ff_config(256, 32);
  const auto lf = random_views(32, 3, cfg.eyebox(), 1);
  SupervisionPolicy policy;
  policy.ranges = {0, 0.01, 0.0001, 0.001, {}};
  EXPECT_THROW(optimize_farfield(lf, policy, cfg, {}, 1), ConfigError);
}

TEST(FarField, OptimizeIsDeterministicAndDescends) {
  const auto cfg = ff_config(256, 64);
  const auto lf = random_views(64, 11, cfg.eyebox(), 2);
  SupervisionPolicy policy;
  policy.seed = 5;
  policy.ranges = {0, 0.005, 0.0003, 0.0005, {}};
  OptimizerConfig opt;
  opt.iterations = 30;
  opt.frames = 2;
  opt.adam.lr = 0.05;
  const auto a = optimize_farfield(lf, policy, cfg, opt, 9);
  const auto b = optimize_farfield(lf, policy, cfg, opt, 9);
  EXPECT_EQ(a.phases, b.phases);
  double early = 0, late = 0;
  for (int i = 0; i < 5; ++i) early += a.trace[i].loss, late += a.trace[25 + i].loss;
  EXPECT_LT(late, early);
}
