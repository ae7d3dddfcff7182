#pragma once

#include <numbers>

namespace amor {

/// Physical constants in SI units (CODATA 2018).
///
/// The Bohr magneton is spelled out as `bohr_magneton` so it can never be
/// confused with the vacuum permeability.
struct PhysicalConstants {
  double planck_h = 6.62607015e-34;                         ///< J s
  double hbar = 6.62607015e-34 / (2.0 * std::numbers::pi);  ///< J s
  double electron_charge = 1.602176634e-19;                 ///< C
  double bohr_magneton = 9.2740100783e-24;                  ///< J/T
  double speed_of_light = 299792458.0;                      ///< m/s

  constexpr bool operator==(const PhysicalConstants&) const = default;
};

inline constexpr PhysicalConstants kConstants{};

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Photon energy h*nu for a vacuum wavelength in metres.
constexpr double photon_energy(double wavelength_m,
                               const PhysicalConstants& pc = kConstants) {
  return pc.planck_h * pc.speed_of_light / wavelength_m;
}

/// pi*hbar/(g_F*mu_B): converts a linewidth in Hz into a field in tesla.
constexpr double field_per_hertz(double g_f, const PhysicalConstants& pc = kConstants) {
  return std::numbers::pi * pc.hbar / (g_f * pc.bohr_magneton);
}

}  // namespace amor
