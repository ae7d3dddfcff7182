#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amor/detector.hpp"
#include "amor/dsp.hpp"
#include "amor/error.hpp"

namespace amor {

// ---------------------------------------------------------------------------
// Complex Lorentzian fit
//
// Model for z = phi_P + i phi_Q as a function of modulation frequency f:
//
//   z(f) = phi0 exp(i theta) / (1 + i x) + (b_P + i b_Q),   x = 2 (f - f0) / gamma
//
// With theta = 0 and no baselines this is exactly lorentzian_quadratures().

struct LorentzianParams {
  double center_freq = 0.0;   ///< Hz
  double gamma_fwhm = 1.0;    ///< Hz
  double phi0 = 0.0;          ///< rad
  double phase_offset = 0.0;  ///< rad, lock-in reference phase
  double baseline_P = 0.0;    ///< rad
  double baseline_Q = 0.0;    ///< rad

  static constexpr int kCount = 6;

  Eigen::Matrix<double, kCount, 1> to_vector() const {
    Eigen::Matrix<double, kCount, 1> v;
    v << center_freq, gamma_fwhm, phi0, phase_offset, baseline_P, baseline_Q;
    return v;
  }
  static LorentzianParams from_vector(const Eigen::Matrix<double, kCount, 1>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }

  std::complex<double> eval(double f) const {
    const double x = 2.0 * (f - center_freq) / gamma_fwhm;
    return phi0 * std::polar(1.0, phase_offset) / std::complex<double>(1.0, x) +
           std::complex<double>(baseline_P, baseline_Q);
  }
};

struct InitialGuess {
  LorentzianParams params;
  bool fallback = false;  ///< no interior peak was found; generic guess used
};

struct LorentzianFit {
  double center_freq = 0.0;
  double gamma_fwhm = 0.0;
  double phi0 = 0.0;
  double phase_offset = 0.0;
  double baseline_P = 0.0;
  double baseline_Q = 0.0;
  Eigen::Matrix<double, 6, 6> covariance = Eigen::Matrix<double, 6, 6>::Zero();
  double residual_rms = 0.0;  ///< rad, over both quadratures

  int iterations = 0;
  double gradient_ratio = 0.0;  ///< final / initial gradient norm
  std::string termination;      ///< gradient | step | stalled | iteration-limit
  bool converged = false;
  bool extrapolated = false;    ///< fitted center lies outside the sampled grid
  bool guess_fallback = false;

  LorentzianParams params() const {
    return {center_freq, gamma_fwhm, phi0, phase_offset, baseline_P, baseline_Q};
  }
  double stderr_of(int i) const { return std::sqrt(std::max(0.0, covariance(i, i))); }
};

/// Peak-based starting point: center at the phi_P maximum, width from the
/// half-maximum crossings above the curve minimum, amplitude from the peak
/// height. Falls back to the grid midpoint and span/10 when the maximum
/// sits on an edge of the grid.
inline InitialGuess auto_initial_guess(const ResonanceCurve& curve) {
  curve.validate(1);
  const auto& f = curve.mod_freqs;
  const auto& p = curve.phi_P_values;
  const std::size_t n = f.size();
  const auto [min_it, max_it] = std::minmax_element(p.begin(), p.end());
  const auto imax = static_cast<std::size_t>(max_it - p.begin());
  const double base = *min_it;
  const double height = *max_it - base;
  const double span = f.back() - f.front();

  InitialGuess g;
  if (n < 3 || imax == 0 || imax == n - 1 || !(height > 0.0)) {
    g.fallback = true;
    g.params.center_freq = 0.5 * (f.front() + f.back());
    g.params.gamma_fwhm = span > 0.0 ? span / 10.0 : 1.0;
    double amp = 0.0;
    for (double v : p) amp = std::max(amp, std::abs(v));
    g.params.phi0 = amp;
    return g;
  }

  const double half = base + height / 2.0;
  std::optional<double> left, right;
  for (std::size_t i = imax; i-- > 0;) {
    if (p[i] < half) {
      left = f[i] + (half - p[i]) / (p[i + 1] - p[i]) * (f[i + 1] - f[i]);
      break;
    }
  }
  for (std::size_t i = imax + 1; i < n; ++i) {
    if (p[i] < half) {
      right = f[i - 1] + (p[i - 1] - half) / (p[i - 1] - p[i]) * (f[i] - f[i - 1]);
      break;
    }
  }
  const double c = f[imax];
  double width = span / 10.0;
  if (left && right) width = *right - *left;
  else if (left) width = 2.0 * (c - *left);
  else if (right) width = 2.0 * (*right - c);

  g.params.center_freq = c;
  g.params.gamma_fwhm = width > 0.0 ? width : span / 10.0;
  g.params.phi0 = height;
  return g;
}

namespace detail {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline void lorentzian_residuals(const ResonanceCurve& c, const Vec6& v, Eigen::VectorXd& r,
                                 Eigen::MatrixXd* jac) {
  const std::size_t n = c.size();
  const double f0 = v[0], gamma = v[1], phi0 = v[2], theta = v[3];
  const std::complex<double> rot = std::polar(1.0, theta);
  const std::complex<double> I(0.0, 1.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double x = 2.0 * (c.mod_freqs[k] - f0) / gamma;
    const std::complex<double> L = 1.0 / std::complex<double>(1.0, x);
    const std::complex<double> z = phi0 * rot * L + std::complex<double>(v[4], v[5]);
    const auto kp = static_cast<Eigen::Index>(k), kq = static_cast<Eigen::Index>(n + k);
    r[kp] = z.real() - c.phi_P_values[k];
    r[kq] = z.imag() - c.phi_Q_values[k];
    if (jac) {
      // dz/dx = -i phi0 e^{i theta} L^2, dx/df0 = -2/gamma, dx/dgamma = -x/gamma
      const std::complex<double> dL = phi0 * rot * I * L * L;
      const std::complex<double> d_f0 = dL * (2.0 / gamma);
      const std::complex<double> d_gamma = dL * (x / gamma);
      const std::complex<double> d_phi0 = rot * L;
      const std::complex<double> d_theta = I * phi0 * rot * L;
      const std::complex<double> cols[6] = {d_f0, d_gamma, d_phi0, d_theta, {1.0, 0.0}, {0.0, 1.0}};
      for (int j = 0; j < 6; ++j) {
        (*jac)(kp, j) = cols[j].real();
        (*jac)(kq, j) = cols[j].imag();
      }
    }
  }
}

inline double wrap_phase(double a) {
  a = std::remainder(a, kTwoPi);
  return a <= -std::numbers::pi ? a + kTwoPi : a;
}

}  // namespace detail

struct LorentzianFitOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;  ///< relative to the initial gradient norm
  double step_tolerance = 1e-13;      ///< scaled parameter step
};

/// Joint damped least-squares (Levenberg-Marquardt) fit of both quadratures
/// to the complex Lorentzian: shared center, width, and amplitude, with a free
/// global phase and per-quadrature baselines.
inline LorentzianFit fit_lorentzian(const ResonanceCurve& curve, std::optional<LorentzianParams> initial = {},
                                    const LorentzianFitOptions& opt = {}) {
  curve.validate(7);
  const auto n = static_cast<Eigen::Index>(curve.size());
  {
    const auto flat = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (flat(curve.phi_P_values) && flat(curve.phi_Q_values)) {
      throw NumericalError("fit_lorentzian: degenerate curve (all values equal)");
    }
  }

  LorentzianFit out;
  if (!initial) {
    const auto g = auto_initial_guess(curve);
    initial = g.params;
    out.guess_fallback = g.fallback;
  }
  if (!(initial->gamma_fwhm > 0.0)) throw ConfigError("fit_lorentzian: initial gamma must be > 0");

  detail::Vec6 p = initial->to_vector();
  Eigen::VectorXd r(2 * n), r_try(2 * n);
  Eigen::MatrixXd J(2 * n, 6);
  detail::lorentzian_residuals(curve, p, r, &J);
  double cost = 0.5 * r.squaredNorm();
  detail::Vec6 grad = J.transpose() * r;
  const double grad0 = grad.norm();
  double lambda = 1e-3;

  out.termination = "iteration-limit";
  int it = 0;
  if (cost == 0.0 || grad0 == 0.0) {
    out.termination = "gradient";
    out.converged = true;
  }
  for (; !out.converged && it < opt.max_iterations; ++it) {
    const detail::Mat6 A = J.transpose() * J;
    detail::Vec6 diag = A.diagonal();
    const double dmax = diag.maxCoeff();
    for (int j = 0; j < 6; ++j) diag[j] = std::max(diag[j], 1e-30 * dmax);

    bool accepted = false;
    while (!accepted) {
      detail::Mat6 Ad = A;
      Ad.diagonal() += lambda * diag;
      const detail::Vec6 step = Ad.ldlt().solve(-grad);
      const detail::Vec6 trial = p + step;
      if (!step.allFinite()) {
        lambda *= 10.0;
      } else if (trial[1] <= 0.0) {
        lambda *= 10.0;
      } else {
        detail::lorentzian_residuals(curve, trial, r_try, nullptr);
        const double trial_cost = 0.5 * r_try.squaredNorm();
        if (trial_cost < cost) {
          double scaled = 0.0;
          for (int j = 0; j < 6; ++j) scaled = std::max(scaled, std::abs(step[j]) * std::sqrt(diag[j]));
          const double scale_ref = std::sqrt(2.0 * cost) + std::numeric_limits<double>::min();
          p = trial;
          detail::lorentzian_residuals(curve, p, r, &J);
          cost = 0.5 * r.squaredNorm();
          grad = J.transpose() * r;
          lambda = std::max(lambda / 10.0, 1e-12);
          accepted = true;
          if (grad.norm() <= opt.gradient_tolerance * grad0 || cost == 0.0) {
            out.termination = "gradient";
            out.converged = true;
          } else if (scaled <= opt.step_tolerance * scale_ref) {
            out.termination = "step";
            out.converged = true;
          }
        } else {
          lambda *= 10.0;
        }
      }
      if (!accepted && lambda > 1e16) {
        // No descent direction left at working precision.
        out.termination = "stalled";
        out.converged = true;
        break;
      }
    }
  }
  out.iterations = it;
  out.gradient_ratio = grad0 > 0.0 ? grad.norm() / grad0 : 0.0;
  if (!out.converged) {
    throw NumericalError("fit_lorentzian: no convergence after " + std::to_string(opt.max_iterations) +
                         " iterations");
  }

  // Covariance s^2 (J^T J)^-1 with a PSD-safe pseudo-inverse.
  const detail::Mat6 A = J.transpose() * J;
  Eigen::SelfAdjointEigenSolver<detail::Mat6> es(A);
  const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
  detail::Vec6 inv_eval;
  for (int j = 0; j < 6; ++j) {
    const double e = es.eigenvalues()[j];
    inv_eval[j] = e > 1e-14 * emax ? 1.0 / e : 0.0;
  }
  const double dof = static_cast<double>(2 * n - 6);
  const double s2 = 2.0 * cost / dof;
  detail::Mat6 cov = s2 * es.eigenvectors() * inv_eval.asDiagonal() * es.eigenvectors().transpose();

  if (p[2] < 0.0) {
    p[2] = -p[2];
    p[3] += std::numbers::pi;
    cov.row(2) *= -1.0;
    cov.col(2) *= -1.0;
  }
  p[3] = detail::wrap_phase(p[3]);
  out.covariance = 0.5 * (cov + cov.transpose());

  out.center_freq = p[0];
  out.gamma_fwhm = p[1];
  out.phi0 = p[2];
  out.phase_offset = p[3];
  out.baseline_P = p[4];
  out.baseline_Q = p[5];
  out.residual_rms = std::sqrt(2.0 * cost / static_cast<double>(2 * n));
  out.extrapolated = out.center_freq < curve.mod_freqs.front() || out.center_freq > curve.mod_freqs.back();
  return out;
}

// ---------------------------------------------------------------------------
// Noise polynomial N(P) = A + B P + C P^2

struct PowerPsdPoint {
  double power = 0.0;  ///< W
  double psd = 0.0;    ///< W/Hz
};

struct NoisePolyFit {
  NoiseBudget budget;
  std::array<double, 3> coef_stderr{};  ///< A, B, C; zero for fixed or bound coefficients
  std::array<bool, 3> at_bound{};       ///< coefficient clamped to zero
  bool fixed_elec = false;
  double weighted_rms = 0.0;            ///< rms relative residual
};

/// Weighted least squares for N(P) = A + B P + C P^2 with weights 1/N^2
/// (constant fractional error) and A, B, C >= 0. The nonnegative optimum is
/// found exactly by solving every active set and keeping the best feasible
/// one. With `fixed_elec`, A is pinned to that value.
inline NoisePolyFit fit_noise_polynomial(std::span<const PowerPsdPoint> points,
                                         std::optional<double> fixed_elec = {}, double detection_freq = 0.0) {
  std::vector<double> distinct;
  bool any_nonzero = false;
  for (const auto& pt : points) {
    if (!(pt.power >= 0.0) || !std::isfinite(pt.power))
      throw ConfigError("fit_noise_polynomial: power must be >= 0: " + detail::format_double(pt.power));
    if (pt.psd != 0.0) any_nonzero = true;
    distinct.push_back(pt.power);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 5) {
    throw ConfigError("fit_noise_polynomial: need at least 5 distinct powers, have " +
                      std::to_string(distinct.size()));
  }
  if (!any_nonzero) throw NumericalError("fit_noise_polynomial: all PSD values are zero");
  for (const auto& pt : points) {
    if (!(pt.psd > 0.0)) {
      throw ConfigError("fit_noise_polynomial: PSD must be > 0 for relative weighting: " +
                        detail::format_double(pt.psd));
    }
  }
  if (fixed_elec && !(*fixed_elec >= 0.0)) throw ConfigError("fit_noise_polynomial: fixed_elec must be >= 0");

  const auto m = static_cast<Eigen::Index>(points.size());
  const int first = fixed_elec ? 1 : 0;  // first free coefficient index
  Eigen::MatrixXd X(m, 3);
  Eigen::VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& pt = points[static_cast<std::size_t>(i)];
    const double w = 1.0 / pt.psd;
    X(i, 0) = w;
    X(i, 1) = pt.power * w;
    X(i, 2) = pt.power * pt.power * w;
    y[i] = fixed_elec ? (pt.psd - *fixed_elec) * w : 1.0;
  }

  struct Candidate {
    std::array<double, 3> coef{};
    std::vector<int> support;
    double ssr = std::numeric_limits<double>::infinity();
  };
  Candidate best;
  const int nfree = 3 - first;
  for (int mask = 0; mask < (1 << nfree); ++mask) {
    std::vector<int> cols;
    for (int j = 0; j < nfree; ++j)
      if (mask & (1 << j)) cols.push_back(first + j);
    Candidate c;
    c.support = cols;
    if (!cols.empty()) {
      Eigen::MatrixXd Xs(m, static_cast<Eigen::Index>(cols.size()));
      Eigen::VectorXd norms(static_cast<Eigen::Index>(cols.size()));
      for (std::size_t j = 0; j < cols.size(); ++j) {
        Xs.col(static_cast<Eigen::Index>(j)) = X.col(cols[j]);
        norms[static_cast<Eigen::Index>(j)] = Xs.col(static_cast<Eigen::Index>(j)).norm();
        if (norms[static_cast<Eigen::Index>(j)] == 0.0) norms[static_cast<Eigen::Index>(j)] = 1.0;
        Xs.col(static_cast<Eigen::Index>(j)) /= norms[static_cast<Eigen::Index>(j)];
      }
      const Eigen::VectorXd sol = Xs.colPivHouseholderQr().solve(y);
      bool feasible = true;
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const double v = sol[static_cast<Eigen::Index>(j)] / norms[static_cast<Eigen::Index>(j)];
        if (!(v >= 0.0)) feasible = false;
        c.coef[static_cast<std::size_t>(cols[j])] = v;
      }
      if (!feasible) continue;
    }
    Eigen::VectorXd res = y;
    for (int j : c.support) res -= c.coef[static_cast<std::size_t>(j)] * X.col(j);
    c.ssr = res.squaredNorm();
    if (c.ssr < best.ssr) best = c;
  }

  NoisePolyFit out;
  out.fixed_elec = fixed_elec.has_value();
  out.budget.detection_freq = detection_freq;
  out.budget.coef_elec = fixed_elec ? *fixed_elec : best.coef[0];
  out.budget.coef_shot = best.coef[1];
  out.budget.coef_tech = best.coef[2];
  for (int j = first; j < 3; ++j) {
    out.at_bound[static_cast<std::size_t>(j)] =
        std::find(best.support.begin(), best.support.end(), j) == best.support.end();
  }
  out.weighted_rms = std::sqrt(best.ssr / static_cast<double>(m));

  const auto k = static_cast<Eigen::Index>(best.support.size());
  if (k > 0 && m > k) {
    Eigen::MatrixXd Xs(m, k);
    for (Eigen::Index j = 0; j < k; ++j) Xs.col(j) = X.col(best.support[static_cast<std::size_t>(j)]);
    const Eigen::MatrixXd cov = (Xs.transpose() * Xs).inverse() * (best.ssr / static_cast<double>(m - k));
    for (Eigen::Index j = 0; j < k; ++j) {
      out.coef_stderr[static_cast<std::size_t>(best.support[static_cast<std::size_t>(j)])] =
          std::sqrt(std::max(0.0, cov(j, j)));
    }
  }
  return out;
}

}  // namespace amor
