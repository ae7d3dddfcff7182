#pragma once

// Reference values computed independently of the library (literal CODATA
// 2018 constants, closed-form evaluations done by hand or in a separate
// numerical session). Tests compare library output against these.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

inline constexpr double h = 6.62607015e-34;
inline constexpr double hbar = h / (2.0 * std::numbers::pi);
inline constexpr double e = 1.602176634e-19;
inline constexpr double mu_b = 9.2740100783e-24;
inline constexpr double c = 299792458.0;
inline constexpr double pi = std::numbers::pi;

// Evaluated values for the default rubidium cell and detector.
inline constexpr double larmor2_7p6uT = 70914.3;         // Hz
inline constexpr double larmor2_75uT = 699812.0;         // Hz
inline constexpr double atom_number = 6.6497e12;
inline constexpr double field_per_hz = 1.07172e-10;      // T/Hz, pi hbar / (g_F mu_B), g_F = 1/3
inline constexpr double slope_per_rad_hz = 9.3308e9;     // rad/T for phi0/gamma = 1 rad/Hz
inline constexpr double projection_floor = 1.3143e-16;   // T/sqrt(Hz)
inline constexpr double flux_80p5uW = 3.2217e14;         // photons/s at 795 nm
inline constexpr double sqrt_s_phi_80p5uW = 3.9395e-8;   // rad/sqrt(Hz)
inline constexpr double photocurrent_100uW = 5.6427e-5;  // A, eta = 0.88
inline constexpr double shot_level_100uW = 9.0405e-14;   // W/Hz, G_eff = 5e5 V/A, R = 50 ohm

inline double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Analytic complex Lorentzian, written out independently of the library.
inline void lorentzian(double f, double f0, double gamma, double phi0, double& p, double& q) {
  const double x = 2.0 * (f - f0) / gamma;
  p = phi0 / (1.0 + x * x);
  q = -phi0 * x / (1.0 + x * x);
}

}  // namespace oracle
