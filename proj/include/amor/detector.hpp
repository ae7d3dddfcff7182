#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "amor/config.hpp"
#include "amor/constants.hpp"
#include "amor/error.hpp"
#include "amor/fft.hpp"
#include "amor/signal_model.hpp"

namespace amor {

/// Noise power at one detection frequency: N(P) = A + B P + C P^2.
struct NoiseBudget {
  double coef_elec = 0.0;  ///< A, W/Hz
  double coef_shot = 0.0;  ///< B, W/(Hz W)
  double coef_tech = 0.0;  ///< C, W/(Hz W^2)
  double detection_freq = 0.0;  ///< Hz

  void validate() const {
    if (!(coef_elec >= 0.0 && coef_shot >= 0.0 && coef_tech >= 0.0)) {
      throw ConfigError("noise budget coefficients must be >= 0");
    }
  }
};

/// Analyzer-referred detector output. Samples are RF amplitudes in sqrt(W)
/// (voltage over sqrt(R)), so their one-sided PSD comes out in W/Hz.
struct DetectedTimeSeries {
  std::vector<double> samples;  ///< sqrt(W)
  double sample_rate = 0.0;     ///< Hz
  double gain_used = 0.0;       ///< g_det, sqrt(W)/rad
  double mean_power = 0.0;      ///< W
  double modulation_freq = 0.0; ///< Hz

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Electronic and technical noise injected at the detector output.
struct DetectionNoise {
  double coef_elec = 0.0;                      ///< A, W/Hz (white)
  std::vector<NoiseTablePoint> elec_table;     ///< A(freq); used instead of coef_elec when nonempty
  double coef_tech = 0.0;                      ///< C, W/(Hz W^2)

  static DetectionNoise from(const DetectorConfig& det) {
    return {det.electronic_noise_floor, det.electronic_noise_table, det.technical_noise_coef};
  }
};

inline double effective_gain(const DetectorConfig& det) {
  return det.transimpedance_gain_nominal * det.gain_headroom_factor;
}

/// Mean photocurrent. The physical convention multiplies by the quantum
/// efficiency; `as_printed` divides by it.
inline double photocurrent(double power, const DetectorConfig& det, double wavelength,
                           const PhysicalConstants& pc = kConstants) {
  const double electrons_per_joule = pc.electron_charge / photon_energy(wavelength, pc);
  switch (det.photocurrent_convention) {
    case PhotocurrentConvention::Physical:
      return det.quantum_efficiency * power * electrons_per_joule;
    case PhotocurrentConvention::AsPrinted:
      return power * electrons_per_joule / det.quantum_efficiency;
  }
  return 0.0;
}

/// Shot-noise level G^2 * 2 i e / R in W/Hz. Gain roll-off is neglected.
inline double theoretical_shot_noise_level(double power, const DetectorConfig& det, double wavelength,
                                           const PhysicalConstants& pc = kConstants) {
  const double g = effective_gain(det);
  return g * g * 2.0 * photocurrent(power, det, wavelength, pc) * pc.electron_charge / det.analyzer_impedance_R;
}

/// Same level evaluated at G (1 -/+ gain_uncertainty_rel); the band drawn
/// around theory lines.
inline std::pair<double, double> theoretical_shot_noise_band(double power, const DetectorConfig& det,
                                                             double wavelength,
                                                             const PhysicalConstants& pc = kConstants) {
  const double mid = theoretical_shot_noise_level(power, det, wavelength, pc);
  const double lo = 1.0 - det.gain_uncertainty_rel, hi = 1.0 + det.gain_uncertainty_rel;
  return {mid * lo * lo, mid * hi * hi};
}

inline double noise_budget_eval(const NoiseBudget& b, double power) {
  return b.coef_elec + b.coef_shot * power + b.coef_tech * power * power;
}

/// Angle-to-analyzer gain of the balanced polarimeter at a given probe power.
///
/// The differential photocurrent is 2 i phi, giving 2 G i phi volts into R.
/// The extra sqrt(2) places the shot background g^2 S_phi / 2 on the same
/// scale as G^2 2 i e / R, so the two shot-noise formulations can be compared.
inline double shot_noise_calibrated_gain(double power, const DetectorConfig& det, double wavelength,
                                         const PhysicalConstants& pc = kConstants) {
  return 2.0 * effective_gain(det) * photocurrent(power, det, wavelength, pc) *
         std::sqrt(2.0 / det.analyzer_impedance_R);
}

/// Shot-noise background per watt produced by the simulation chain
/// (rotation shot noise through shot_noise_calibrated_gain), W/(Hz W).
inline double simulated_shot_coefficient(const DetectorConfig& det, double wavelength,
                                         const PhysicalConstants& pc = kConstants) {
  const double p = 1e-3;
  const double g = shot_noise_calibrated_gain(p, det, wavelength, pc);
  return g * g * shot_noise_angle_density(photon_flux(p, wavelength, pc)) / 2.0 / p;
}

/// Electronic-noise PSD at `freq`, linearly interpolated in the table and
/// held constant beyond its ends.
inline double electronic_psd_at(const DetectionNoise& noise, double freq) {
  const auto& t = noise.elec_table;
  if (t.empty()) return noise.coef_elec;
  if (freq <= t.front().freq) return t.front().psd;
  if (freq >= t.back().freq) return t.back().psd;
  const auto it = std::upper_bound(t.begin(), t.end(), freq,
                                   [](double f, const NoiseTablePoint& p) { return f < p.freq; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double w = (freq - lo.freq) / (hi.freq - lo.freq);
  return lo.psd + w * (hi.psd - lo.psd);
}

namespace detail {

/// Adds Gaussian noise with the one-sided PSD psd_of(f) by shaping white
/// noise in the frequency domain.
template <class PsdFn>
void add_colored_noise(std::span<double> out, double sample_rate, std::mt19937_64& rng, PsdFn psd_of) {
  const std::size_t n = out.size();
  RealFft fft(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& x : fft.real()) x = gauss(rng);
  fft.forward();
  auto spec = fft.spectrum();
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n);
    // unit-variance white noise has one-sided PSD 2/fs
    spec[k] *= std::sqrt(std::max(0.0, psd_of(f)) * sample_rate / 2.0) / static_cast<double>(n);
  }
  fft.inverse();
  const auto r = fft.real();
  for (std::size_t i = 0; i < n; ++i) out[i] += r[i];
}

}  // namespace detail

/// Balanced-polarimeter output: g_det * phi(t) plus electronic (A) and
/// technical (C P^2) noise, both white at the output node. Shot noise is
/// already in phi(t) and is not added again.
inline DetectedTimeSeries detect(const RotationTimeSeries& rotation, double g_det, const DetectionNoise& noise,
                                 std::uint64_t seed, std::uint64_t stream = 0) {
  if (rotation.samples.empty() || !(rotation.sample_rate > 0.0)) {
    throw ConfigError("detect: empty rotation series");
  }
  if (!(g_det >= 0.0)) throw ConfigError("detect: g_det must be >= 0");

  DetectedTimeSeries out;
  out.sample_rate = rotation.sample_rate;
  out.gain_used = g_det;
  out.mean_power = rotation.mean_optical_power;
  out.modulation_freq = rotation.modulation_freq;
  out.samples.resize(rotation.samples.size());
  std::transform(rotation.samples.begin(), rotation.samples.end(), out.samples.begin(),
                 [g_det](double phi) { return g_det * phi; });

  const double fs = rotation.sample_rate;
  if (!noise.elec_table.empty()) {
    auto rng = make_rng(seed, stream, 1);
    detail::add_colored_noise(out.samples, fs, rng, [&](double f) { return electronic_psd_at(noise, f); });
  } else if (noise.coef_elec > 0.0) {
    auto rng = make_rng(seed, stream, 1);
    std::normal_distribution<double> gauss(0.0, std::sqrt(white_noise_variance(noise.coef_elec, fs)));
    for (auto& x : out.samples) x += gauss(rng);
  }

  const double tech_psd = noise.coef_tech * out.mean_power * out.mean_power;
  if (tech_psd > 0.0) {
    auto rng = make_rng(seed, stream, 2);
    std::normal_distribution<double> gauss(0.0, std::sqrt(white_noise_variance(tech_psd, fs)));
    for (auto& x : out.samples) x += gauss(rng);
  }
  return out;
}

}  // namespace amor
