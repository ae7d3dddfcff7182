#include <gtest/gtest.h>

#include <random>

#include "amor/dsp.hpp"
#include "amor/signal_model.hpp"
#include "oracles.hpp"

using namespace amor;

namespace {

FieldConfig field_at(double fm, double delta = 0.0) {
  FieldConfig f;
  f.modulation_freq = fm;
  f.detuning_delta = delta;
  return f;
}

}  // namespace

TEST(Larmor, ReferenceFieldsMapToModulationFrequencies) {
  const AtomConfig atom;
  EXPECT_NEAR(larmor_doubled_freq(7.6e-6, atom), oracle::larmor2_7p6uT, 0.5);
  EXPECT_NEAR(larmor_doubled_freq(75e-6, atom), oracle::larmor2_75uT, 1.0);
  EXPECT_NEAR(larmor_doubled_freq(7.6e-6, atom), 71e3, 0.01 * 71e3);
  EXPECT_NEAR(larmor_doubled_freq(75e-6, atom), 700e3, 0.01 * 700e3);
}

TEST(Larmor, ZeroAndNegativeField) {
  const AtomConfig atom;
  EXPECT_EQ(larmor_doubled_freq(0.0, atom), 0.0);
  EXPECT_THROW(larmor_doubled_freq(-1e-6, atom), ConfigError);
}

TEST(Lorentzian, OnResonance) {
  const ResonanceParams res{1e-3, 10.0, 71e3};
  const auto q = lorentzian_quadratures(0.0, res);
  EXPECT_DOUBLE_EQ(q.phi_p, 1e-3);
  EXPECT_EQ(q.phi_q, 0.0);
}

TEST(Lorentzian, HalfWidthDetuning) {
  const ResonanceParams res{1e-3, 10.0, 71e3};
  const double big_gamma = 2.0 * oracle::pi * 10.0;
  const auto q = lorentzian_quadratures(big_gamma / 2.0, res);
  EXPECT_NEAR(q.phi_p, 0.5e-3, 1e-15);
  EXPECT_NEAR(q.phi_q, -0.5e-3, 1e-15);
}

TEST(Lorentzian, FarDetuned) {
  const ResonanceParams res{1e-3, 10.0, 71e3};
  const auto q = lorentzian_quadratures(1e12, res);
  EXPECT_LT(std::abs(q.phi_p), 1e-20);
  EXPECT_LT(std::abs(q.phi_q), 1e-12);
  const auto inf = lorentzian_quadratures(INFINITY, res);
  EXPECT_EQ(inf.phi_p, 0.0);
  EXPECT_EQ(inf.phi_q, 0.0);
}

// Properties over random detunings: symmetry, antisymmetry, circle, FWHM.
TEST(LorentzianProperty, SymmetryCircleAndWidth) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const ResonanceParams res{std::exp(5.0 * u(rng)) * 1e-4, std::exp(3.0 * u(rng)) * 10.0, 1e4};
    const double big_gamma = kTwoPi * res.gamma_fwhm;
    const double delta = 10.0 * big_gamma * u(rng);
    const auto a = lorentzian_quadratures(delta, res);
    const auto b = lorentzian_quadratures(-delta, res);
    EXPECT_EQ(a.phi_p, b.phi_p);
    EXPECT_EQ(a.phi_q, -b.phi_q);
    const double c2 = (big_gamma * big_gamma / 4.0) / (delta * delta + big_gamma * big_gamma / 4.0);
    EXPECT_NEAR(a.phi_p * a.phi_p + a.phi_q * a.phi_q, res.phi0 * res.phi0 * c2, 1e-12 * res.phi0 * res.phi0);
    const auto half = lorentzian_quadratures(big_gamma / 2.0, res);
    EXPECT_NEAR(half.phi_p, res.phi0 / 2.0, 1e-14 * res.phi0);
  }
}

TEST(ShotNoise, DensityAtOperatingPower) {
  const double flux = photon_flux(80.5e-6, 795e-9);
  EXPECT_LT(oracle::rel(flux, oracle::flux_80p5uW), 1e-4);
  EXPECT_LT(oracle::rel(std::sqrt(shot_noise_angle_density(flux)), oracle::sqrt_s_phi_80p5uW), 1e-4);
  EXPECT_DOUBLE_EQ(shot_noise_angle_density(2.0 * flux), shot_noise_angle_density(flux) / 2.0);
  EXPECT_THROW(shot_noise_angle_density(0.0), ConfigError);
  EXPECT_THROW(shot_noise_angle_density(-1.0), ConfigError);
}

TEST(Synthesize, NoiselessIsPureCosineOnResonance) {
  const ResonanceParams res{1e-3, 10.0, 1000.0};
  SynthesisSettings s;
  s.sample_rate = 8000.0;
  s.duration = 0.1;
  s.shot_noise = false;
  const auto ts = synthesize_rotation(res, field_at(1000.0), s);
  ASSERT_EQ(ts.samples.size(), 800u);
  for (std::size_t n = 0; n < ts.samples.size(); ++n)
    EXPECT_NEAR(ts.samples[n], 1e-3 * std::cos(2.0 * oracle::pi * 1000.0 * n / 8000.0), 1e-15);
  EXPECT_TRUE(std::isinf(ts.photon_flux));
}

TEST(Synthesize, SameSeedIdenticalDifferentSeedDiffers) {
  const ResonanceParams res{1e-6, 10.0, 1000.0};
  SynthesisSettings s;
  s.sample_rate = 8000.0;
  s.duration = 0.05;
  s.seed = 42;
  const auto a = synthesize_rotation(res, field_at(1000.0), s);
  const auto b = synthesize_rotation(res, field_at(1000.0), s);
  EXPECT_EQ(a.samples, b.samples);
  s.seed = 43;
  EXPECT_NE(synthesize_rotation(res, field_at(1000.0), s).samples, a.samples);
  s.seed = 42;
  s.stream = 1;
  EXPECT_NE(synthesize_rotation(res, field_at(1000.0), s).samples, a.samples);
}

TEST(Synthesize, PhotonFluxRecorded) {
  SynthesisSettings s;
  s.sample_rate = 8000.0;
  s.duration = 0.01;
  s.power = 80.5e-6;
  const auto ts = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  EXPECT_LT(oracle::rel(ts.photon_flux, oracle::flux_80p5uW), 1e-4);
  EXPECT_EQ(ts.mean_optical_power, 80.5e-6);
}

TEST(Synthesize, PreconditionErrors) {
  const ResonanceParams res{1e-3, 10.0, 1000.0};
  SynthesisSettings s;
  s.sample_rate = 4000.0;  // exactly 4 x fm is not enough
  EXPECT_THROW(synthesize_rotation(res, field_at(1000.0), s), ConfigError);
  s.sample_rate = 8000.0;
  s.duration = 0.0;
  EXPECT_THROW(synthesize_rotation(res, field_at(1000.0), s), ConfigError);
  s.duration = 1e-4;  // rounds to 1 sample
  EXPECT_THROW(synthesize_rotation(res, field_at(1000.0), s), ConfigError);
  s.duration = 0.1;
  EXPECT_THROW(synthesize_rotation(res, FieldConfig{}, s), ConfigError);
}

// Noise-only variance: the rotation noise has RF density S_phi / 2, so the
// per-sample variance is S_phi * fs / 4. Checked against the chi-square
// spread of the variance estimator over 100 seeds.
TEST(SynthesizeProperty, NoiseVarianceMatchesDensity) {
  const double power = 100e-6, fs = 20000.0;
  SynthesisSettings s;
  s.sample_rate = fs;
  s.duration = 0.5;
  s.power = power;
  const double flux = power / (oracle::h * oracle::c / 795e-9);
  const double expected = (1.0 / (2.0 * flux)) * fs / 4.0;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    s.seed = seed;
    const auto ts = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
    for (double x : ts.samples) sum += x * x;
    count += ts.samples.size();
  }
  const double var = sum / static_cast<double>(count);
  const double sigma_rel = std::sqrt(2.0 / static_cast<double>(count));
  EXPECT_NEAR(var / expected, 1.0, 3.0 * sigma_rel);
}

// Periodogram average over 100 seeds is flat at S_phi / 2.
TEST(SynthesizeProperty, NoisePeriodogramIsFlat) {
  const double power = 100e-6, fs = 20000.0;
  SynthesisSettings s;
  s.sample_rate = fs;
  s.duration = 0.2;
  s.power = power;
  const double flux = power / (oracle::h * oracle::c / 795e-9);
  const double expected = 1.0 / (4.0 * flux);
  PsdSettings ps;
  ps.rbw = 300.0;
  ps.vbw = 300.0;
  ps.f_lo = 500.0;
  ps.f_hi = 9500.0;
  ps.oversample = 1;
  std::vector<double> acc;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    s.seed = seed;
    const auto ts = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
    const auto spec = psd_estimate(ts.samples, fs, ps);
    if (acc.empty()) acc.assign(spec.size(), 0.0);
    for (std::size_t i = 0; i < spec.size(); ++i) acc[i] += spec.psd[i] / 100.0;
  }
  double mean = 0.0;
  for (double v : acc) mean += v / static_cast<double>(acc.size());
  EXPECT_NEAR(mean / expected, 1.0, 0.05);
  // Flatness: 10 sub-bands each within 5%.
  const std::size_t band = acc.size() / 10;
  for (std::size_t b = 0; b < 10; ++b) {
    double m = 0.0;
    for (std::size_t i = b * band; i < (b + 1) * band; ++i) m += acc[i] / static_cast<double>(band);
    EXPECT_NEAR(m / expected, 1.0, 0.05) << "band " << b;
  }
}

TEST(Rng, StreamsAreIndependentAndReproducible) {
  auto a = make_rng(1, 2, 3), b = make_rng(1, 2, 3), c = make_rng(1, 2, 4);
  EXPECT_EQ(a(), b());
  EXPECT_NE(make_rng(1, 2, 3)(), c());
}
