#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "slfh/wavefield.hpp"
#include "support.hpp"

using namespace slfh;

namespace {

constexpr double kPi = std::numbers::pi;

ComplexGrid naive_dft(const ComplexGrid& x, int sign) {
  const std::size_t R = x.rows(), C = x.cols();
  ComplexGrid out(R, C);
  for (std::size_t kr = 0; kr < R; ++kr)
    for (std::size_t kc = 0; kc < C; ++kc) {
      Complex s{};
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c)
          s += x(r, c) * std::polar(1.0, sign * 2 * kPi * (double(kr * r) / R + double(kc * c) / C));
      out(kr, kc) = s / std::sqrt(double(R * C));
    }
  return out;
}

double max_abs_diff(const ComplexGrid& a, const ComplexGrid& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const ComplexGrid& a) {
  double m = 0;
  for (auto v : a) m = std::max(m, std::abs(v));
  return m;
}

PropagationKernel kernel_for(const OpticalConfig& c, const PupilState& p) {
  return make_kernel(FrequencyGrid::of(c), p, c.wavelengths[0], c.focal_length);
}

// Field restricted to the pupil's frequency support.
ComplexGrid band_limit(const ComplexGrid& u, const RealGrid& mask) {
  auto U = fft2_copy(u);
  for (std::size_t i = 0; i < U.size(); ++i) U[i] *= mask[i];
  ifft2(U);
  return U;
}

}  // namespace

TEST(Fft, MatchesNaiveUnitaryDft) {
  const auto x = test::random_field(6, 10, 3);
  EXPECT_LT(max_abs_diff(fft2_copy(x), naive_dft(x, -1)), 1e-12);
  EXPECT_LT(max_abs_diff(ifft2_copy(x), naive_dft(x, +1)), 1e-12);
  EXPECT_LT(max_abs_diff(ifft2_copy(fft2_copy(x)), x), 1e-13);
}

TEST(AngularSpectrum, ZeroDistanceIsIdentity) {
  const auto c = test::config(32, 32);
  const auto h = angular_spectrum_kernel(FrequencyGrid::of(c), 0.0, c.wavelengths[0]);
  for (auto v : h) EXPECT_EQ(v, Complex(1.0, 0.0));
}

TEST(AngularSpectrum, OnAxisPhase) {
  const auto c = test::config(16, 16);
  const double z = 0.015, wl = 440e-9;
  const auto h = angular_spectrum_kernel(FrequencyGrid::of(c), z, wl);
  // 2 pi z / lambda = 2 pi * 34090.909..., i.e. 10/11 of a turn past a whole number.
  EXPECT_NEAR(z / wl, 34090.909090909, 1e-6);
  const Complex expected = std::polar(1.0, 2 * kPi * (10.0 / 11.0));
  EXPECT_LT(std::abs(h(0, 0) - expected), 1e-10);
}

TEST(AngularSpectrum, EvanescentFrequenciesAreZero) {
  FrequencyGrid g{16, 16, 0.2e-6};  // band limit 2.5e6 cycles/m, 1/lambda = 2.27e6
  const auto h = angular_spectrum_kernel(g, 1e-6, 440e-9);
  EXPECT_EQ(h(0, 8), Complex{});
  EXPECT_NE(h(0, 0), Complex{});
}

TEST(AngularSpectrum, Semigroup) {
  const auto c = test::config(64, 64);
  const auto g = FrequencyGrid::of(c);
  for (auto [z1, z2] : {std::pair{0.005, 0.010}, std::pair{0.0123, 0.0027}, std::pair{-0.004, 0.015}}) {
    const auto a = angular_spectrum_kernel(g, z1, c.wavelengths[0]);
    const auto b = angular_spectrum_kernel(g, z2, c.wavelengths[0]);
    const auto ab = angular_spectrum_kernel(g, z1 + z2, c.wavelengths[0]);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(std::abs(a[i] * b[i] - ab[i]), 1e-10);
  }
}

TEST(ProjectWave, PlaneWaveStaysUniform) {
  const auto c = test::config(32, 32);
  ComplexField u{ComplexGrid(32, 32, std::polar(1.7, 0.3)), c.slm_pitch, c.wavelengths[0]};
  const auto I = project_wave(u, {{0, 0}, 0, eyebox_width(c, 0)}, c);
  for (double v : I) EXPECT_NEAR(v, 1.7 * 1.7, 1e-12);
}

TEST(ProjectWave, LensFocusesToAiryDisc) {
  const std::size_t n = 128;
  auto c = test::config(n, n);
  const double z0 = 0.010, wl = c.wavelengths[0], pitch = c.slm_pitch;
  const double aperture = 34 * pitch;  // below the chirp Nyquist radius lambda z0 / (2 pitch)
  ComplexField u{ComplexGrid(n, n), pitch, wl};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) {
      const double x = (double(k) - n / 2) * pitch, y = (double(r) - n / 2) * pitch;
      const double rr = x * x + y * y;
      if (rr < aperture * aperture) u.values(r, k) = std::polar(1.0, -kPi * rr / (wl * z0));
    }
  const auto I = project_wave(u, {{0, 0}, z0, eyebox_width(c, 0)}, c);
  std::size_t peak = 0;
  for (std::size_t i = 0; i < I.size(); ++i)
    if (I[i] > I[peak]) peak = i;
  EXPECT_EQ(peak / n, n / 2);
  EXPECT_EQ(peak % n, n / 2);
  const double airy = 1.22 * wl * z0 / (2 * aperture);
  double inside = 0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k)
      if (std::hypot((double(k) - n / 2) * pitch, (double(r) - n / 2) * pitch) <= airy) inside += I(r, k);
  EXPECT_GE(inside / sum(I), 0.5);
}

TEST(ProjectWave, ShiftedPupilMovesFocusLikeParallax) {
  const std::size_t n = 128;
  auto c = test::config(n, n);
  const double z0 = 0.010, wl = c.wavelengths[0], pitch = c.slm_pitch;
  ComplexField u{ComplexGrid(n, n), pitch, wl};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) {
      const double x = (double(k) - n / 2) * pitch, y = (double(r) - n / 2) * pitch;
      if (x * x + y * y < std::pow(34 * pitch, 2)) u.values(r, k) = std::polar(1.0, -kPi * (x * x + y * y) / (wl * z0));
    }
  const double s = 0.0055;
  const auto I = project_wave(u, {{s, 0}, 0.0, 0.008}, c);
  double cx = 0, total = 0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) cx += I(r, k) * double(k), total += I(r, k);
  // A point at depth z0 viewed through a pupil at s sits at -(z0 / f) s on the detector.
  EXPECT_NEAR(cx / total - n / 2, -z0 / c.focal_length * s / pitch, 1.0);
}

TEST(Adjoint, InnerProductIdentity) {
  for (std::size_t n : {8u, 16u, 64u}) {
    const auto c = test::config(n, n);
    for (PupilState p : {PupilState{{0, 0}, 0.0, 0.022}, PupilState{{0.003, -0.004}, 0.007, 0.009},
                         PupilState{{-0.006, 0.001}, 0.015, 0.005}}) {
      const auto k = kernel_for(c, p);
      const auto u = test::random_field(n, n, 11 * n + 1), g = test::random_field(n, n, 13 * n + 2);
      const Complex lhs = inner(project_linear(u, k), g);
      const Complex rhs = inner(u, adjoint_linear(g, k));
      EXPECT_LT(test::rel_diff(lhs, rhs), n == 16 ? 1e-10 : 1e-8) << n;
    }
  }
}

TEST(Adjoint, SelfAdjointForRealSymmetricKernel) {
  const auto c = test::config(16, 16);
  const auto k = kernel_for(c, {{0, 0}, 0.0, 0.011});
  const auto u = test::random_field(16, 16, 5);
  EXPECT_LT(max_abs_diff(project_linear(u, k), adjoint_linear(u, k)), 1e-14);
}

TEST(Adjoint, ProjectionIsIdempotentOnPupilBand) {
  const auto c = test::config(32, 32);
  const auto k = kernel_for(c, {{0.002, 0.001}, 0.0, 0.01});
  const auto u = band_limit(test::random_field(32, 32, 9), pupil_mask(FrequencyGrid::of(c), k.pupil, c.wavelengths[0], c.focal_length).values);
  EXPECT_LT(max_abs_diff(adjoint_linear(project_linear(u, k), k), u), 1e-13);
}

TEST(ProjectWave, FullApertureConservesBandLimitedEnergy) {
  const auto c = test::config(64, 64);
  const double w = eyebox_width(c, 0);
  const auto u = test::random_field(64, 64, 21);
  const auto mask = pupil_mask(FrequencyGrid::of(c), {{0, 0}, 0, w}, c.wavelengths[0], c.focal_length);
  const double e0 = energy(band_limit(u, mask.values));
  for (double z : {0.0, 0.005, 0.015}) {
    const auto I = project_wave({u, c.slm_pitch, c.wavelengths[0]}, {{0, 0}, z, w}, c);
    EXPECT_NEAR(sum(I), e0, 1e-6 * e0) << z;
  }
}

TEST(ProjectWave, EnergyShrinksWithNestedPupils) {
  const auto c = test::config(64, 64);
  const auto u = test::random_field(64, 64, 22);
  double prev = 1e300;
  for (double d : {0.022, 0.016, 0.010, 0.004, 0.001}) {
    const double e = sum(project_wave({u, c.slm_pitch, c.wavelengths[0]}, {{0.0005, 0}, 0.004, d}, c));
    EXPECT_LE(e, prev);
    prev = e;
  }
}

TEST(ProjectWave, RampEquivalentToShiftedPupil) {
  const std::size_t n = 64;
  const auto c = test::config(n, n);
  const auto g = FrequencyGrid::of(c);
  const double lf = c.wavelengths[0] * c.focal_length;
  const Vec2 s{5 * g.dfx() * lf, -3 * g.dfy() * lf};
  const double d = 0.0061;
  const auto u = test::random_field(n, n, 4);
  ComplexGrid ramped(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) {
      const double x = double(k) * c.slm_pitch, y = double(r) * c.slm_pitch;
      ramped(r, k) = u(r, k) * std::polar(1.0, -2 * kPi * (x * s.x + y * s.y) / lf);
    }
  const auto a = project_wave({ramped, c.slm_pitch, c.wavelengths[0]}, {{0, 0}, 0, d}, c);
  const auto b = project_wave({u, c.slm_pitch, c.wavelengths[0]}, {s, 0, d}, c);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12 * max_value(b));
}

TEST(ProjectWave, FieldSemigroup) {
  const auto c = test::config(64, 64);
  const double w = eyebox_width(c, 0);
  const auto u = test::random_field(64, 64, 31);
  const auto k1 = kernel_for(c, {{0, 0}, 0.004, w});
  const auto k2 = kernel_for(c, {{0, 0}, 0.009, w});
  const auto k12 = kernel_for(c, {{0, 0}, 0.013, w});
  const auto two = project_linear(project_linear(u, k1), k2);
  const auto one = project_linear(u, k12);
  EXPECT_LT(max_abs_diff(two, one), 1e-10 * max_abs(one));
}

TEST(ProjectWave, RejectsMismatchedField) {
  const auto c = test::config(16, 16);
  EXPECT_THROW(project_wave({ComplexGrid(8, 8), c.slm_pitch, c.wavelengths[0]}, {{0, 0}, 0, 0.01}, c),
               std::invalid_argument);
}

TEST(BandPass, RemovesHighFrequencies) {
  const auto c = test::config(32, 32);
  const auto g = FrequencyGrid::of(c);
  KernelOptions opt;
  opt.bandpass = {true, 0.5};
  const auto k = make_kernel(g, {{0, 0}, 0.0, 0.03}, c.wavelengths[0], c.focal_length, opt);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t col = 0; col < 32; ++col)
      EXPECT_EQ(std::abs(k.values(r, col)), std::hypot(g.fx(col), g.fy(r)) > 0.5 * g.band_limit() ? 0.0 : 1.0);
}

TEST(KernelCache, ReusesKernels) {
  const auto c = test::config(16, 16);
  KernelCache cache(FrequencyGrid::of(c), c.focal_length, {});
  const auto a = cache.get({{0.001, 0}, 0.002, 0.005}, c.wavelengths[0]);
  const auto b = cache.get({{0.001, 0}, 0.002, 0.005}, c.wavelengths[0]);
  const auto d = cache.get({{0.001, 0}, 0.003, 0.005}, c.wavelengths[0]);
  EXPECT_EQ(a.get(), b.get());
  EXPECT_NE(a.get(), d.get());
  EXPECT_EQ(cache.size(), 2u);
}

TEST(Pooling, IdenticalFramesAverageToOne) {
  const auto f = test::random_real(8, 8, 1);
  std::vector<RealGrid> frames(8, f);
  const auto avg = average_intensity(frames), single = pool(f);
  for (std::size_t i = 0; i < avg.size(); ++i) EXPECT_NEAR(avg[i], single[i], 1e-15);
  EXPECT_NEAR(pool(f)(1, 2), (f(2, 4) + f(2, 5) + f(3, 4) + f(3, 5)) / 4, 1e-15);
}

TEST(Pooling, Linearity) {
  std::vector<RealGrid> frames{RealGrid(4, 4, 0.0), RealGrid(4, 4, 2.5)};
  for (double v : average_intensity(frames)) EXPECT_DOUBLE_EQ(v, 1.25);
  EXPECT_THROW(pool(RealGrid(3, 4)), std::invalid_argument);
}
