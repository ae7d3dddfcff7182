#include <gtest/gtest.h>

#include <random>

#include "amor/analysis.hpp"
#include "amor/dsp.hpp"
#include "oracles.hpp"

using namespace amor;

TEST(Snr, Examples) {
  EXPECT_NEAR(compute_snr(1e-10, 1e-14, 30.0), std::sqrt(3e5), 1e-9);
  EXPECT_EQ(compute_snr(0.0, 1e-14, 30.0), 0.0);
  EXPECT_THROW(compute_snr(1e-10, 0.0, 30.0), NumericalError);
  EXPECT_THROW(compute_snr(-1.0, 1e-14, 30.0), ConfigError);
  EXPECT_THROW(compute_snr(1e-10, 1e-14, 0.0), ConfigError);
}

// A tone of amplitude a = 100 sqrt(2 N0) over white N0 has SNR 100.
TEST(Snr, ConstructedHundred) {
  const double fs = 20000.0, n0 = 1e-12, a = 100.0 * std::sqrt(2.0 * n0);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, std::sqrt(n0 * fs / 2.0));
  std::vector<double> on(400000), off(400000);
  for (std::size_t i = 0; i < on.size(); ++i) {
    on[i] = a * std::cos(2.0 * oracle::pi * 5000.0 * static_cast<double>(i) / fs) + g(rng);
    off[i] = g(rng);
  }
  PsdSettings ps;
  ps.rbw = 30.0;
  ps.vbw = 30.0;
  ps.f_lo = 2000.0;
  ps.f_hi = 8000.0;
  const auto s_on = psd_estimate(on, fs, ps);
  const auto pb = peak_and_background(s_on, psd_estimate(off, fs, ps), 5000.0, 4000.0);
  EXPECT_NEAR(compute_snr(pb.s_sig, pb.s_bg, s_on.rbw), 100.0, 5.0);
}

TEST(Slope, NominalAndDerived) {
  const double nominal = quadrature_slope(6e-4, 10.0, 1.0 / 3.0);
  EXPECT_LT(oracle::rel(nominal, 6e-4 / 10.0 * oracle::slope_per_rad_hz), 1e-4);
  EXPECT_DOUBLE_EQ(quadrature_slope(6e-4, 10.0, 1.0 / 3.0, SlopeConvention::Derived), 2.0 * nominal);
  EXPECT_DOUBLE_EQ(quadrature_slope(6e-4, 10.0, -1.0 / 3.0), nominal);
  EXPECT_THROW(quadrature_slope(6e-4, 0.0, 1.0 / 3.0), ConfigError);
}

// The derived slope is the numerical derivative of phi_Q with respect to B.
TEST(Slope, DerivedMatchesFiniteDifference) {
  const AtomConfig atom;
  const ResonanceParams res{6e-4, 10.0, 0.0};
  const double db = 1e-15;
  const double d_omega = kTwoPi * larmor_doubled_freq(db, atom);
  const double dq = lorentzian_quadratures(-d_omega, res).phi_q - lorentzian_quadratures(d_omega, res).phi_q;
  EXPECT_NEAR(dq / (2.0 * db) / quadrature_slope(6e-4, 10.0, atom.g_f, SlopeConvention::Derived), 1.0, 1e-6);
}

TEST(Sensitivity, Examples) {
  EXPECT_NEAR(sensitivity(10.0, 14299.0, 1.0 / 3.0), 74.95e-15, 0.01e-15);
  EXPECT_NEAR(sensitivity(10.0, 1.53e4, 1.0 / 3.0), 70.05e-15, 0.01e-15);
  EXPECT_THROW(sensitivity(10.0, 0.0, 1.0 / 3.0), NumericalError);
  EXPECT_THROW(sensitivity(0.0, 10.0, 1.0 / 3.0), ConfigError);
}

// delta_B = sqrt(S_phi) / slope with SNR = phi0 / sqrt(S_phi).
TEST(SensitivityProperty, SlopeRouteAgrees) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double phi0 = 1e-5 + 1e-3 * u(rng), gamma = 1.0 + 100.0 * u(rng), noise = 1e-9 + 1e-7 * u(rng);
    const double direct = sensitivity(gamma, phi0 / noise, 1.0 / 3.0);
    EXPECT_NEAR(direct / (noise / quadrature_slope(phi0, gamma, 1.0 / 3.0)), 1.0, 1e-12);
  }
}

TEST(ProjectionNoise, DefaultCell) {
  const AtomConfig atom;
  EXPECT_LT(oracle::rel(projection_noise(atom, 1.0), oracle::projection_floor), 1e-4);
  EXPECT_NEAR(projection_noise(atom, 1.0) / 0.134e-15, 1.0, 0.05);
  EXPECT_NEAR(projection_noise(atom, 4.0), projection_noise(atom, 1.0) / 2.0, 1e-30);
  EXPECT_THROW(projection_noise(atom, 0.0), ConfigError);
}

TEST(SnlRange, Boundaries) {
  const NoiseBudget b{6e-15, 8e-10, 4e-7, 45e3};
  const auto r = snl_range(b, 4.0);
  EXPECT_DOUBLE_EQ(r.p_low, 4.0 * 6e-15 / 8e-10);
  EXPECT_DOUBLE_EQ(r.p_high, 8e-10 / (4.0 * 4e-7));
  EXPECT_TRUE(r.nonempty);
  EXPECT_FALSE(r.never_snl);
}

TEST(SnlRange, EdgeCases) {
  const auto no_shot = snl_range({1e-15, 0.0, 1e-7, 0.0}, 1.0);
  EXPECT_TRUE(no_shot.never_snl);
  EXPECT_FALSE(no_shot.nonempty);
  const auto no_tech = snl_range({1e-15, 1e-9, 0.0, 0.0}, 2.0);
  EXPECT_TRUE(std::isinf(no_tech.p_high));
  EXPECT_TRUE(no_tech.nonempty);
  const auto empty = snl_range({1e-12, 1e-10, 1e-5, 0.0}, 1.0);
  EXPECT_FALSE(empty.nonempty);
  EXPECT_THROW(snl_range({1e-15, 1e-9, 0.0, 0.0}, 0.5), ConfigError);
  EXPECT_THROW(snl_range({-1e-15, 1e-9, 0.0, 0.0}, 1.0), ConfigError);
}

// At every power inside SNL(k) shot noise exceeds k times each other term.
TEST(SnlRangeProperty, DefinitionAndNesting) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const NoiseBudget b{1e-15 * std::pow(10.0, 2.0 * u(rng)), 1e-10 * std::pow(10.0, 2.0 * u(rng)),
                        1e-8 * std::pow(10.0, 2.0 * u(rng)), 0.0};
    SnlRange prev = snl_range(b, 1.0);
    for (double k : {2.0, 4.0, 8.0}) {
      const auto r = snl_range(b, k);
      EXPECT_GE(r.p_low, prev.p_low);
      EXPECT_LE(r.p_high, prev.p_high);
      if (r.nonempty) {
        for (double w : {0.0, 0.3, 1.0}) {
          const double p = r.p_low + w * (r.p_high - r.p_low);
          EXPECT_GE(b.coef_shot * p, k * b.coef_elec * (1.0 - 1e-12));
          EXPECT_GE(b.coef_shot * p, k * b.coef_tech * p * p * (1.0 - 1e-12));
        }
      }
      prev = r;
    }
  }
}

TEST(SnlMap, OrderedByBudgetThenK) {
  const std::vector<NoiseBudget> budgets{{6e-15, 8e-10, 4e-7, 15e3}, {5e-15, 8e-10, 3e-7, 45e3}};
  const std::vector<double> ks{1.0, 4.0};
  const auto rows = snl_map(budgets, ks);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].freq, 15e3);
  EXPECT_EQ(rows[1].range.k, 4.0);
  EXPECT_EQ(rows[2].freq, 45e3);
  EXPECT_DOUBLE_EQ(rows[3].range.p_low, 4.0 * 5e-15 / 8e-10);
  EXPECT_THROW(snl_map({}, ks), ConfigError);
  EXPECT_THROW(snl_map(budgets, {}), ConfigError);
}

TEST(Classify, RegimesAndClosedBoundaries) {
  const NoiseBudget b{6e-15, 8e-10, 4e-7, 45e3};
  const auto r = snl_range(b, 4.0);
  EXPECT_EQ(classify_operating_point(b, 100e-6, 4.0).regime, SnlRegime::ShotNoiseLimited);
  EXPECT_EQ(to_string(classify_operating_point(b, 100e-6, 4.0)), "SNL(4)");
  EXPECT_EQ(classify_operating_point(b, 1e-6, 4.0).regime, SnlRegime::ElectronicLimited);
  EXPECT_EQ(to_string(classify_operating_point(b, 1e-6, 4.0)), "electronic-limited");
  EXPECT_EQ(classify_operating_point(b, 5e-3, 4.0).regime, SnlRegime::TechnicalLimited);
  EXPECT_EQ(to_string(classify_operating_point(b, 5e-3, 4.0)), "technical-limited");
  EXPECT_EQ(classify_operating_point(b, r.p_low, 4.0).regime, SnlRegime::ShotNoiseLimited);
  EXPECT_EQ(classify_operating_point(b, std::nextafter(r.p_low, 0.0), 4.0).regime, SnlRegime::ElectronicLimited);
  EXPECT_EQ(classify_operating_point(b, r.p_high, 4.0).regime, SnlRegime::ShotNoiseLimited);
  EXPECT_EQ(classify_operating_point(b, std::nextafter(r.p_high, 1.0), 4.0).regime, SnlRegime::TechnicalLimited);
}

TEST(Classify, WithoutShotTerm) {
  const NoiseBudget b{1e-14, 0.0, 1e-7, 0.0};
  EXPECT_EQ(classify_operating_point(b, 1e-5, 1.0).regime, SnlRegime::ElectronicLimited);
  EXPECT_EQ(classify_operating_point(b, 1e-3, 1.0).regime, SnlRegime::TechnicalLimited);
}

TEST(Report, DefaultOperatingPoint) {
  const auto cfg = validate_config(parse_config("b_field = 7.6 uT"));
  const NoiseBudget b{6e-15, 7.96e-10, 4e-7, 71e3};
  const auto r = make_sensitivity_report(cfg, 10.0, 14299.0, 80.5e-6, 71e3, b);
  EXPECT_NEAR(r.delta_B, 74.95e-15, 0.01e-15);
  EXPECT_LT(oracle::rel(r.delta_B_atomic, oracle::projection_floor), 1e-4);
  EXPECT_EQ(to_string(r.snl_class), "SNL(4)");
  EXPECT_EQ(r.slope_convention, "nominal");
  EXPECT_THROW(make_sensitivity_report(cfg, 10.0, 0.0, 80.5e-6, 71e3, b), NumericalError);
}

// A field step of 5 delta_B (derived slope) shows up at SNR 5 in a 1 Hz
// noise bandwidth; with the nominal slope the same step reads SNR 10.
TEST(EndToEnd, FieldStepDetectability) {
  const AtomConfig atom;
  const double power = 80.5e-6, phi0 = 6e-4, gamma = 10.0, fm = 1000.0;
  const double flux = power / (oracle::h * oracle::c / 795e-9);
  const double sqrt_s_phi = std::sqrt(1.0 / (2.0 * flux));
  const double snr = phi0 / sqrt_s_phi;
  const double db_nominal = sensitivity(gamma, snr, atom.g_f);
  const double db_derived = sqrt_s_phi / quadrature_slope(phi0, gamma, atom.g_f, SlopeConvention::Derived);
  EXPECT_NEAR(db_derived / db_nominal, 0.5, 1e-12);

  const auto measure = [&](double step) {
    FieldConfig field;
    field.modulation_freq = fm;
    field.detuning_delta = -kTwoPi * larmor_doubled_freq(step, atom);
    SynthesisSettings s;
    s.sample_rate = 8000.0;
    s.duration = 1.0;  // lock-in averages the settled 0.5 s: 1 Hz noise bandwidth
    s.power = power;
    std::vector<double> q;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      s.seed = seed;
      q.push_back(lock_in_demodulate(synthesize_rotation({phi0, gamma, fm}, field, s), fm, 20.0).phi_q);
    }
    double mean = 0.0, var = 0.0;
    for (double v : q) mean += v / static_cast<double>(q.size());
    for (double v : q) var += (v - mean) * (v - mean) / static_cast<double>(q.size() - 1);
    return std::abs(mean) / std::sqrt(var);
  };
  EXPECT_NEAR(measure(5.0 * db_derived), 5.0, 0.6);
  EXPECT_NEAR(measure(5.0 * db_nominal), 10.0, 1.2);
}
