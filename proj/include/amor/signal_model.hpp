#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "amor/config.hpp"
#include "amor/constants.hpp"
#include "amor/error.hpp"

namespace amor {

/// One AMOR resonance.
struct ResonanceParams {
  double phi0 = 0.0;         ///< rad, maximum rotation angle
  double gamma_fwhm = 1.0;   ///< Hz, gamma = Gamma / 2 pi
  double center_freq = 0.0;  ///< Hz, resonant value of Omega_m / 2 pi

  void validate() const {
    if (!(phi0 >= 0.0)) throw ConfigError("phi0 must be >= 0: " + detail::format_double(phi0));
    if (!(gamma_fwhm > 0.0)) throw ConfigError("gamma_fwhm must be > 0: " + detail::format_double(gamma_fwhm));
    if (!(center_freq >= 0.0))
      throw ConfigError("center_freq must be >= 0: " + detail::format_double(center_freq));
  }
};

struct Quadratures {
  double phi_p = 0.0;  ///< in-phase (absorptive), rad
  double phi_q = 0.0;  ///< quadrature (dispersive), rad
};

/// Sampled rotation angle phi(t), t = n / sample_rate.
struct RotationTimeSeries {
  std::vector<double> samples;  ///< rad
  double sample_rate = 0.0;     ///< Hz
  double mean_optical_power = 0.0;  ///< W
  double photon_flux = 0.0;         ///< photons/s
  double modulation_freq = 0.0;     ///< Hz
  std::uint64_t seed = 0;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Deterministic RNG stream for (seed, stream, substream). Independent
/// sweep points use distinct stream indices so results do not depend on the
/// order in which workers pick them up.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(substream), 0x414d4f52u};
  return std::mt19937_64(seq);
}

/// Carrier phase 2 pi f n / fs reduced to [0, 2 pi). Shared by the
/// synthesizer and the lock-in so both see bit-identical references.
inline double carrier_phase(double freq, double sample_rate, std::size_t n) {
  const double cycles = freq * (static_cast<double>(n) / sample_rate);
  return kTwoPi * (cycles - std::floor(cycles));
}

/// Resonant modulation frequency 2 Omega_L / 2 pi = 2 g_F mu_B B / h.
inline double larmor_doubled_freq(double b_field, const AtomConfig& atom,
                                  const PhysicalConstants& pc = kConstants) {
  if (b_field < 0.0) throw ConfigError("b_field must be >= 0 (field magnitude): " + detail::format_double(b_field));
  return 2.0 * atom.g_f * pc.bohr_magneton * b_field / pc.planck_h;
}

/// In-phase and quadrature amplitudes of the single-Lorentzian response.
///
///   phi_P =  phi0 (Gamma^2/4)       / (Delta^2 + Gamma^2/4)
///   phi_Q = -phi0 (Gamma Delta / 2) / (Delta^2 + Gamma^2/4)
///
/// with Gamma = 2 pi gamma_fwhm and Delta in rad/s.
inline Quadratures lorentzian_quadratures(double delta, const ResonanceParams& res) {
  if (!std::isfinite(delta)) return {0.0, 0.0};
  const double half_width = std::numbers::pi * res.gamma_fwhm;  // Gamma / 2
  const double x = delta / half_width;
  if (std::abs(x) > 1.0) {
    const double inv = 1.0 / x;
    return {res.phi0 * inv * inv / (1.0 + inv * inv), -res.phi0 / (x + inv)};
  }
  const double den = 1.0 + x * x;
  return {res.phi0 / den, -res.phi0 * x / den};
}

/// Photons per second for an optical power at the given wavelength.
inline double photon_flux(double power, double wavelength, const PhysicalConstants& pc = kConstants) {
  return power / photon_energy(wavelength, pc);
}

/// Shot-noise angle density S_phi = 1/(2 Phi_ph), rad^2/Hz.
///
/// This is the density seen in one demodulated quadrature, i.e. the
/// delta-phi-bar^2 entering SNR^2 = phi0^2 / delta-phi-bar^2. On the RF trace
/// the same noise is spread over both quadratures, so the one-sided PSD of
/// delta-phi(t) itself is S_phi / 2.
inline double shot_noise_angle_density(double flux) {
  if (!(flux > 0.0)) throw ConfigError("photon_flux must be > 0: " + detail::format_double(flux));
  return 1.0 / (2.0 * flux);
}

/// Per-sample variance of white noise with one-sided PSD `psd` at `sample_rate`.
inline double white_noise_variance(double psd, double sample_rate) { return psd * sample_rate / 2.0; }

struct SynthesisSettings {
  double duration = 1.0;        ///< s
  double sample_rate = 300e3;   ///< Hz
  double power = 80.5e-6;       ///< W, mean probe power on the detector
  double wavelength = 795e-9;   ///< m
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;     ///< sweep-point index
  bool shot_noise = true;       ///< false models Phi_ph -> infinity
};

/// Rotation angle phi(t) = phi_P cos(Omega_m t) + phi_Q sin(Omega_m t) + delta-phi(t).
///
/// The modulation frequency and detuning come from `field`. delta-phi is
/// white Gaussian with one-sided PSD S_phi/2 (see shot_noise_angle_density).
inline RotationTimeSeries synthesize_rotation(const ResonanceParams& res, const FieldConfig& field,
                                              const SynthesisSettings& s,
                                              const PhysicalConstants& pc = kConstants) {
  res.validate();
  if (!field.modulation_freq || !field.detuning_delta) {
    throw ConfigError("synthesize_rotation: field needs modulation_freq and detuning_delta (validate it first)");
  }
  const double fm = *field.modulation_freq;
  if (!(s.duration > 0.0)) throw ConfigError("duration must be > 0: " + detail::format_double(s.duration));
  if (!(s.sample_rate > 4.0 * fm)) {
    throw ConfigError("sample_rate must exceed 4 x modulation_freq (" + detail::format_double(4.0 * fm) +
                      " Hz): " + detail::format_double(s.sample_rate));
  }
  const auto n = static_cast<std::size_t>(std::llround(s.duration * s.sample_rate));
  if (n < 2) throw ConfigError("duration * sample_rate must give at least 2 samples");

  RotationTimeSeries ts;
  ts.sample_rate = s.sample_rate;
  ts.mean_optical_power = s.power;
  ts.modulation_freq = fm;
  ts.seed = s.seed;
  ts.samples.resize(n);

  const Quadratures q = lorentzian_quadratures(*field.detuning_delta, res);
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = carrier_phase(fm, s.sample_rate, i);
    ts.samples[i] = q.phi_p * std::cos(ph) + q.phi_q * std::sin(ph);
  }

  if (s.shot_noise) {
    ts.photon_flux = photon_flux(s.power, s.wavelength, pc);
    const double rf_psd = shot_noise_angle_density(ts.photon_flux) / 2.0;
    const double sigma = std::sqrt(white_noise_variance(rf_psd, s.sample_rate));
    auto rng = make_rng(s.seed, s.stream, 0);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (auto& x : ts.samples) x += gauss(rng);
  } else {
    ts.photon_flux = std::numeric_limits<double>::infinity();
  }
  return ts;
}

}  // namespace amor
