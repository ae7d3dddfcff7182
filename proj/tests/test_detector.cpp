#include <gtest/gtest.h>

#include "amor/detector.hpp"
#include "amor/dsp.hpp"
#include "oracles.hpp"

using namespace amor;

namespace {

DetectorConfig default_detector() { return validate_config({}).detector; }

FieldConfig field_at(double fm) {
  FieldConfig f;
  f.modulation_freq = fm;
  f.detuning_delta = 0.0;
  return f;
}

/// Mean of a PSD trace over [lo, hi].
double band_mean(const PowerSpectrum& s, double lo, double hi) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.freqs[i] >= lo && s.freqs[i] <= hi) {
      sum += s.psd[i];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

PsdSettings coarse_psd(double f_lo, double f_hi) {
  PsdSettings p;
  p.rbw = 200.0;
  p.vbw = 200.0;
  p.f_lo = f_lo;
  p.f_hi = f_hi;
  p.oversample = 1;
  return p;
}

}  // namespace

TEST(Photocurrent, PhysicalConvention) {
  const auto det = default_detector();
  EXPECT_LT(oracle::rel(photocurrent(100e-6, det, 795e-9), oracle::photocurrent_100uW), 1e-4);
  EXPECT_EQ(photocurrent(0.0, det, 795e-9), 0.0);
}

TEST(Photocurrent, AsPrintedDividesByEfficiency) {
  auto det = default_detector();
  const double physical = photocurrent(100e-6, det, 795e-9);
  det.photocurrent_convention = PhotocurrentConvention::AsPrinted;
  EXPECT_NEAR(photocurrent(100e-6, det, 795e-9), physical / (0.88 * 0.88), 1e-18);
}

TEST(ShotLevel, TheoryAtHundredMicrowatts) {
  const auto det = default_detector();
  EXPECT_LT(oracle::rel(theoretical_shot_noise_level(100e-6, det, 795e-9), oracle::shot_level_100uW), 1e-4);
  EXPECT_NEAR(theoretical_shot_noise_level(100e-6, det, 795e-9), 9.0e-14, 0.01e-14 * 9.0);
}

TEST(ShotLevel, BandBracketsMidpoint) {
  const auto det = default_detector();
  const auto [lo, hi] = theoretical_shot_noise_band(100e-6, det, 795e-9);
  const double mid = theoretical_shot_noise_level(100e-6, det, 795e-9);
  EXPECT_NEAR(lo, mid * 0.81, 1e-12 * mid);
  EXPECT_NEAR(hi, mid * 1.21, 1e-12 * mid);
}

TEST(ShotLevel, SimulatedCoefficientIsEfficiencyTimesTheory) {
  auto det = default_detector();
  const double theory_b = theoretical_shot_noise_level(1e-3, det, 795e-9) / 1e-3;
  EXPECT_NEAR(simulated_shot_coefficient(det, 795e-9) / theory_b, 0.88, 1e-12);
  det.quantum_efficiency = 1.0;
  EXPECT_NEAR(simulated_shot_coefficient(det, 795e-9) / (theoretical_shot_noise_level(1e-3, det, 795e-9) / 1e-3),
              1.0, 1e-12);
}

TEST(NoiseBudget, EvaluatesPolynomial) {
  const NoiseBudget b{1e-15, 8e-10, 4e-7, 45e3};
  EXPECT_DOUBLE_EQ(noise_budget_eval(b, 0.0), 1e-15);
  EXPECT_DOUBLE_EQ(noise_budget_eval(b, 1e-4), 1e-15 + 8e-14 + 4e-15);
  EXPECT_THROW((NoiseBudget{-1.0, 0.0, 0.0, 0.0}.validate()), ConfigError);
}

TEST(NoiseBudgetProperty, MonotoneInPower) {
  const NoiseBudget b{6e-15, 7.9e-10, 4e-7, 45e3};
  double prev = noise_budget_eval(b, 0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double v = noise_budget_eval(b, i * 1e-6);
    ASSERT_GT(v, prev);
    prev = v;
  }
}

TEST(ElectronicTable, InterpolatesAndHoldsEnds) {
  DetectionNoise n;
  n.elec_table = {{1e4, 4e-14}, {2e4, 2e-14}, {4e4, 1e-14}};
  EXPECT_DOUBLE_EQ(electronic_psd_at(n, 0.0), 4e-14);
  EXPECT_DOUBLE_EQ(electronic_psd_at(n, 1.5e4), 3e-14);
  EXPECT_DOUBLE_EQ(electronic_psd_at(n, 3e4), 1.5e-14);
  EXPECT_DOUBLE_EQ(electronic_psd_at(n, 1e6), 1e-14);
  n.elec_table.clear();
  n.coef_elec = 7e-15;
  EXPECT_DOUBLE_EQ(electronic_psd_at(n, 123.0), 7e-15);
}

TEST(Detect, NoiselessIsLinearInGain) {
  SynthesisSettings s;
  s.sample_rate = 8000.0;
  s.duration = 0.1;
  s.shot_noise = false;
  const auto rot = synthesize_rotation({1e-3, 10.0, 1000.0}, field_at(1000.0), s);
  const auto out = detect(rot, 2.5, {}, 1);
  ASSERT_EQ(out.samples.size(), rot.samples.size());
  for (std::size_t i = 0; i < rot.samples.size(); ++i) EXPECT_EQ(out.samples[i], 2.5 * rot.samples[i]);
  EXPECT_EQ(out.gain_used, 2.5);
  EXPECT_EQ(out.modulation_freq, 1000.0);
}

TEST(Detect, ZeroRotationZeroNoiseGivesZeroOutput) {
  SynthesisSettings s;
  s.sample_rate = 8000.0;
  s.duration = 0.1;
  s.shot_noise = false;
  const auto rot = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  const auto out = detect(rot, 1e3, {}, 1);
  for (double x : out.samples) EXPECT_EQ(x, 0.0);
}

TEST(Detect, Errors) {
  EXPECT_THROW(detect(RotationTimeSeries{}, 1.0, {}, 0), ConfigError);
  SynthesisSettings s;
  s.sample_rate = 8000.0;
  s.duration = 0.01;
  s.shot_noise = false;
  const auto rot = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  EXPECT_THROW(detect(rot, -1.0, {}, 0), ConfigError);
}

TEST(Detect, ElectronicNoiseIsFlatAtA) {
  SynthesisSettings s;
  s.sample_rate = 40000.0;
  s.duration = 4.0;
  s.shot_noise = false;
  const auto rot = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  DetectionNoise n;
  n.coef_elec = 6e-15;
  const auto spec = psd_estimate(detect(rot, 1.0, n, 3), coarse_psd(500.0, 19000.0));
  EXPECT_NEAR(band_mean(spec, 500.0, 19000.0) / 6e-15, 1.0, 0.02);
  EXPECT_NEAR(band_mean(spec, 500.0, 5000.0) / band_mean(spec, 14000.0, 19000.0), 1.0, 0.05);
}

TEST(Detect, TechnicalNoiseScalesWithPowerSquared) {
  SynthesisSettings s;
  s.sample_rate = 40000.0;
  s.duration = 4.0;
  s.shot_noise = false;
  s.power = 500e-6;
  const auto rot = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  DetectionNoise n;
  n.coef_tech = 4e-7;
  const auto spec = psd_estimate(detect(rot, 1.0, n, 3), coarse_psd(500.0, 19000.0));
  EXPECT_NEAR(band_mean(spec, 500.0, 19000.0) / (4e-7 * 500e-6 * 500e-6), 1.0, 0.02);
}

// Shot noise lives in phi(t) only: the detected background is g^2 S_phi / 2
// = g^2 / (4 Phi) and nothing else.
TEST(Detect, ShotNoiseNotDoubleCounted) {
  const auto det = default_detector();
  const double power = 100e-6;
  SynthesisSettings s;
  s.sample_rate = 40000.0;
  s.duration = 4.0;
  s.power = power;
  const auto rot = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  const double g = shot_noise_calibrated_gain(power, det, 795e-9);
  const auto spec = psd_estimate(detect(rot, g, {}, 9), coarse_psd(500.0, 19000.0));
  const double flux = power / (oracle::h * oracle::c / 795e-9);
  EXPECT_NEAR(band_mean(spec, 500.0, 19000.0) / (g * g / (4.0 * flux)), 1.0, 0.05);
}

// With unit quantum efficiency the simulated shot background equals the
// photocurrent formula G^2 2 i e / R.
TEST(Detect, ShotBackgroundMatchesTheoryAtUnitEfficiency) {
  auto cfg = ExperimentConfig{};
  cfg.detector.quantum_efficiency = 1.0;
  const auto det = validate_config(cfg).detector;
  const double power = 100e-6;
  SynthesisSettings s;
  s.sample_rate = 40000.0;
  s.duration = 4.0;
  s.power = power;
  const auto rot = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  const double g = shot_noise_calibrated_gain(power, det, 795e-9);
  const auto spec = psd_estimate(detect(rot, g, {}, 11), coarse_psd(500.0, 19000.0));
  EXPECT_NEAR(band_mean(spec, 500.0, 19000.0) / theoretical_shot_noise_level(power, det, 795e-9), 1.0, 0.10);
}

TEST(Detect, ColoredElectronicNoiseFollowsTable) {
  SynthesisSettings s;
  s.sample_rate = 40000.0;
  s.duration = 4.0;
  s.shot_noise = false;
  const auto rot = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  DetectionNoise n;
  n.elec_table = {{2000.0, 4e-14}, {10000.0, 1e-14}};
  const auto spec = psd_estimate(detect(rot, 1.0, n, 5), coarse_psd(500.0, 19000.0));
  EXPECT_NEAR(band_mean(spec, 500.0, 1500.0) / 4e-14, 1.0, 0.08);
  EXPECT_NEAR(band_mean(spec, 5500.0, 6500.0) / 2.5e-14, 1.0, 0.08);
  EXPECT_NEAR(band_mean(spec, 12000.0, 19000.0) / 1e-14, 1.0, 0.05);
}

TEST(Detect, DeterministicPerSeedAndStream) {
  SynthesisSettings s;
  s.sample_rate = 8000.0;
  s.duration = 0.1;
  s.shot_noise = false;
  const auto rot = synthesize_rotation({0.0, 10.0, 1000.0}, field_at(1000.0), s);
  DetectionNoise n;
  n.coef_elec = 1e-15;
  n.coef_tech = 1e-7;
  EXPECT_EQ(detect(rot, 1.0, n, 4, 2).samples, detect(rot, 1.0, n, 4, 2).samples);
  EXPECT_NE(detect(rot, 1.0, n, 4, 2).samples, detect(rot, 1.0, n, 4, 3).samples);
}
