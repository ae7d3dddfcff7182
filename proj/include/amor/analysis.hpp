#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "amor/config.hpp"
#include "amor/constants.hpp"
#include "amor/detector.hpp"
#include "amor/error.hpp"

namespace amor {

/// SNR per unit bandwidth, sqrt(rbw * S_sig / S_bg).
inline double compute_snr(double s_sig, double s_bg, double rbw) {
  if (!(s_bg > 0.0)) throw NumericalError("compute_snr: zero background");
  if (!(s_sig >= 0.0)) throw ConfigError("compute_snr: s_sig must be >= 0");
  if (!(rbw > 0.0)) throw ConfigError("compute_snr: rbw must be > 0");
  return std::sqrt(rbw * s_sig / s_bg);
}

/// Dispersive-quadrature slope dphi_Q/dB on resonance, rad/T. The derived
/// convention is the exact derivative of the Lorentzian model and is twice
/// the nominal phi0 / (gamma field_per_hertz) form.
inline double quadrature_slope(double phi0, double gamma_fwhm, double g_f,
                               SlopeConvention convention = SlopeConvention::Nominal,
                               const PhysicalConstants& pc = kConstants) {
  if (!(gamma_fwhm > 0.0)) throw ConfigError("quadrature_slope: gamma_fwhm must be > 0");
  const double nominal = phi0 / gamma_fwhm / field_per_hertz(std::abs(g_f), pc);
  return convention == SlopeConvention::Derived ? 2.0 * nominal : nominal;
}

/// Magnetic sensitivity (pi hbar / g_F mu_B) gamma / SNR, T/sqrt(Hz).
inline double sensitivity(double gamma_fwhm, double snr, double g_f, const PhysicalConstants& pc = kConstants) {
  if (!(snr > 0.0)) throw NumericalError("sensitivity: SNR must be > 0");
  if (!(gamma_fwhm > 0.0)) throw ConfigError("sensitivity: gamma_fwhm must be > 0");
  return field_per_hertz(std::abs(g_f), pc) * gamma_fwhm / snr;
}

/// Spin-projection floor (pi hbar / g_F mu_B) sqrt(gamma / (N_at dt)), T/sqrt(Hz).
inline double projection_noise(const AtomConfig& atom, double integration_time,
                               const PhysicalConstants& pc = kConstants) {
  if (!(integration_time > 0.0)) throw ConfigError("projection_noise: integration_time must be > 0");
  const double n_at = atom.density_n * 4.0 / 3.0 * std::numbers::pi * std::pow(atom.cell_radius, 3);
  if (!(n_at > 0.0)) throw ConfigError("projection_noise: atom number must be > 0");
  return field_per_hertz(std::abs(atom.g_f), pc) * std::sqrt(atom.relaxation_gamma / (n_at * integration_time));
}

// ---------------------------------------------------------------------------
// Shot-noise-limited ranges

struct SnlRange {
  double k = 1.0;
  double p_low = 0.0;   ///< W, k A / B
  double p_high = 0.0;  ///< W, B / (k C); +inf when C = 0
  bool nonempty = false;
  bool never_snl = false;  ///< B = 0: shot noise never dominates
};

inline SnlRange snl_range(const NoiseBudget& b, double k) {
  if (!(k >= 1.0)) throw ConfigError("snl_range: k must be >= 1: " + detail::format_double(k));
  b.validate();
  SnlRange r;
  r.k = k;
  if (b.coef_shot == 0.0) {
    r.never_snl = true;
    r.p_low = std::numeric_limits<double>::infinity();
    r.p_high = 0.0;
    return r;
  }
  r.p_low = k * b.coef_elec / b.coef_shot;
  r.p_high = b.coef_tech == 0.0 ? std::numeric_limits<double>::infinity() : b.coef_shot / (k * b.coef_tech);
  r.nonempty = r.p_low < r.p_high;
  return r;
}

struct SnlMapRow {
  double freq = 0.0;  ///< Hz
  SnlRange range;
};

/// SNL ranges for every (budget, k), ordered by budget then by k.
inline std::vector<SnlMapRow> snl_map(std::span<const NoiseBudget> budgets, std::span<const double> ks) {
  if (budgets.empty()) throw ConfigError("snl_map: no budgets");
  if (ks.empty()) throw ConfigError("snl_map: no k values");
  std::vector<SnlMapRow> rows;
  rows.reserve(budgets.size() * ks.size());
  for (const auto& b : budgets)
    for (double k : ks) rows.push_back({b.detection_freq, snl_range(b, k)});
  return rows;
}

enum class SnlRegime { ElectronicLimited, ShotNoiseLimited, TechnicalLimited };

struct SnlClass {
  SnlRegime regime = SnlRegime::ElectronicLimited;
  double k = 1.0;
};

inline std::string to_string(const SnlClass& c) {
  switch (c.regime) {
    case SnlRegime::ElectronicLimited: return "electronic-limited";
    case SnlRegime::TechnicalLimited: return "technical-limited";
    case SnlRegime::ShotNoiseLimited: break;
  }
  return "SNL(" + detail::format_double(c.k) + ")";
}

/// Closed-interval classification: the boundaries k A / B and B / (k C)
/// count as SNL(k). Without a shot term the larger of the other two wins.
inline SnlClass classify_operating_point(const NoiseBudget& b, double power, double k) {
  SnlClass c{SnlRegime::ShotNoiseLimited, k};
  if (b.coef_shot == 0.0) {
    c.regime = b.coef_elec >= b.coef_tech * power * power ? SnlRegime::ElectronicLimited
                                                          : SnlRegime::TechnicalLimited;
    return c;
  }
  const SnlRange r = snl_range(b, k);
  if (power < r.p_low) c.regime = SnlRegime::ElectronicLimited;
  else if (power > r.p_high) c.regime = SnlRegime::TechnicalLimited;
  return c;
}

// ---------------------------------------------------------------------------
// Report

struct SensitivityReport {
  double gamma_fwhm = 0.0;       ///< Hz
  double snr = 0.0;              ///< per sqrt(Hz)
  double delta_B = 0.0;          ///< T/sqrt(Hz)
  double delta_B_atomic = 0.0;   ///< T/sqrt(Hz), reported alongside, never subtracted
  double operating_power = 0.0;  ///< W
  double detection_freq = 0.0;   ///< Hz
  SnlClass snl_class;
  std::string snr_convention = "per-sqrt-Hz: SNR^2 = RBW * S_sig / S_bg";
  std::string slope_convention = "nominal";

  void validate() const {
    if (!(delta_B > 0.0 && delta_B_atomic > 0.0 && snr > 0.0)) {
      throw NumericalError("sensitivity report: delta_B, delta_B_atomic and snr must be > 0");
    }
  }
};

inline SensitivityReport make_sensitivity_report(const ExperimentConfig& cfg, double gamma_fwhm, double snr,
                                                 double power, double detection_freq, const NoiseBudget& budget,
                                                 double k = 4.0, double integration_time = 1.0) {
  SensitivityReport r;
  r.gamma_fwhm = gamma_fwhm;
  r.snr = snr;
  r.delta_B = sensitivity(gamma_fwhm, snr, cfg.atom.g_f);
  r.delta_B_atomic = projection_noise(cfg.atom, integration_time);
  r.operating_power = power;
  r.detection_freq = detection_freq;
  r.snl_class = classify_operating_point(budget, power, k);
  r.slope_convention = cfg.sim.slope_convention == SlopeConvention::Derived ? "derived" : "nominal";
  r.validate();
  return r;
}

}  // namespace amor
