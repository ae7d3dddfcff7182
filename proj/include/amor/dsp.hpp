#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "amor/detector.hpp"
#include "amor/error.hpp"
#include "amor/fft.hpp"
#include "amor/parallel.hpp"
#include "amor/signal_model.hpp"

namespace amor {

// ---------------------------------------------------------------------------
// Lock-in demodulation

/// Digital lock-in: multiply by 2cos / 2sin of the reference, then a cascade
/// of four single-pole low-pass sections at `output_bandwidth`. For an
/// output bandwidth far below the modulation frequency the 2 Omega_m mixing
/// product is suppressed by well over 60 dB.
class LockInAmplifier {
 public:
  static constexpr int kOrder = 4;

  LockInAmplifier(double sample_rate, double mod_freq, double output_bandwidth)
      : fs_(sample_rate), fm_(mod_freq), alpha_(1.0 - std::exp(-kTwoPi * output_bandwidth / sample_rate)) {}

  /// Pushes sample n of the input; returns the current (phi_P, phi_Q).
  Quadratures push(std::size_t n, double x) {
    const double ph = carrier_phase(fm_, fs_, n);
    double i = 2.0 * x * std::cos(ph);
    double q = 2.0 * x * std::sin(ph);
    for (int k = 0; k < kOrder; ++k) {
      si_[k] += alpha_ * (i - si_[k]);
      sq_[k] += alpha_ * (q - sq_[k]);
      i = si_[k];
      q = sq_[k];
    }
    return {i, q};
  }

 private:
  double fs_, fm_, alpha_;
  std::array<double, kOrder> si_{}, sq_{};
};

/// Demodulates x at mod_freq. Returns the mean of the filter output over the
/// settled second half of the record, divided by `scale` (the detector gain
/// when demodulating a detected series, so the result is in radians).
inline Quadratures lock_in_demodulate(std::span<const double> x, double sample_rate, double mod_freq,
                                      double output_bandwidth, double scale = 1.0) {
  if (!(mod_freq < sample_rate / 2.0)) {
    throw ConfigError("lock_in_demodulate: mod_freq above Nyquist: " + detail::format_double(mod_freq));
  }
  if (!(output_bandwidth > 0.0)) throw ConfigError("lock_in_demodulate: output_bandwidth must be > 0");
  const double duration = static_cast<double>(x.size()) / sample_rate;
  if (duration < 10.0 / output_bandwidth) {
    throw ConfigError("lock_in_demodulate: series too short for output bandwidth (need >= " +
                      detail::format_double(10.0 / output_bandwidth) + " s, have " +
                      detail::format_double(duration) + " s)");
  }
  if (!(scale > 0.0)) throw ConfigError("lock_in_demodulate: scale must be > 0");

  LockInAmplifier li(sample_rate, mod_freq, output_bandwidth);
  const std::size_t settle = x.size() / 2;
  double sum_p = 0.0, sum_q = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const Quadratures o = li.push(n, x[n]);
    if (n >= settle) {
      sum_p += o.phi_p;
      sum_q += o.phi_q;
    }
  }
  const double count = static_cast<double>(x.size() - settle);
  return {sum_p / count / scale, sum_q / count / scale};
}

inline Quadratures lock_in_demodulate(const RotationTimeSeries& ts, double mod_freq, double output_bandwidth) {
  return lock_in_demodulate(ts.samples, ts.sample_rate, mod_freq, output_bandwidth);
}

inline Quadratures lock_in_demodulate(const DetectedTimeSeries& ts, double mod_freq, double output_bandwidth) {
  return lock_in_demodulate(ts.samples, ts.sample_rate, mod_freq, output_bandwidth,
                            ts.gain_used > 0.0 ? ts.gain_used : 1.0);
}

// ---------------------------------------------------------------------------
// Resonance sweep

struct ResonanceCurve {
  std::vector<double> mod_freqs;     ///< Hz, strictly increasing
  std::vector<double> phi_P_values;  ///< rad
  std::vector<double> phi_Q_values;  ///< rad
  bool brackets_resonance = true;    ///< false: grid does not span center_freq

  std::size_t size() const { return mod_freqs.size(); }

  /// Fit-ready check: equal lengths, at least `min_points`, increasing grid.
  void validate(std::size_t min_points = 5) const {
    if (phi_P_values.size() != mod_freqs.size() || phi_Q_values.size() != mod_freqs.size()) {
      throw ConfigError("resonance curve arrays differ in length");
    }
    if (mod_freqs.size() < min_points) {
      throw ConfigError("resonance curve needs at least " + std::to_string(min_points) + " points");
    }
    for (std::size_t i = 1; i < mod_freqs.size(); ++i)
      if (!(mod_freqs[i] > mod_freqs[i - 1])) throw ConfigError("resonance curve frequencies must increase");
  }
};

/// Detection stage applied before demodulation in a sweep.
struct DetectionStage {
  double g_det = 1.0;
  DetectionNoise noise;
};

struct SweepSettings {
  SynthesisSettings synth;          ///< seed + per-point stream = grid index
  double output_bandwidth = 20.0;   ///< Hz
  std::optional<DetectionStage> detection;
  int workers = 1;
};

/// Lock-in response vs modulation frequency. Each grid point is an
/// independent steady-state record with its own RNG stream, so the curve is
/// bit-identical for any worker count.
inline ResonanceCurve sweep_resonance(const ResonanceParams& res, std::span<const double> grid,
                                      const SweepSettings& s, const PhysicalConstants& pc = kConstants) {
  res.validate();
  if (grid.empty()) throw ConfigError("sweep_resonance: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ConfigError("sweep_resonance: grid must be strictly increasing");

  ResonanceCurve curve;
  curve.mod_freqs.assign(grid.begin(), grid.end());
  curve.phi_P_values.resize(grid.size());
  curve.phi_Q_values.resize(grid.size());
  curve.brackets_resonance = grid.size() == 1 ? grid.front() == res.center_freq
                                              : grid.front() < res.center_freq && res.center_freq < grid.back();

  parallel_for(grid.size(), s.workers, [&](std::size_t i) {
    FieldConfig field;
    field.modulation_freq = grid[i];
    field.detuning_delta = kTwoPi * (grid[i] - res.center_freq);
    SynthesisSettings synth = s.synth;
    synth.stream = s.synth.stream + i;
    const RotationTimeSeries rot = synthesize_rotation(res, field, synth, pc);
    Quadratures q;
    if (s.detection) {
      const auto det = detect(rot, s.detection->g_det, s.detection->noise, synth.seed, synth.stream);
      q = lock_in_demodulate(det, grid[i], s.output_bandwidth);
    } else {
      q = lock_in_demodulate(rot, grid[i], s.output_bandwidth);
    }
    curve.phi_P_values[i] = q.phi_p;
    curve.phi_Q_values[i] = q.phi_q;
  });
  return curve;
}

/// `points` frequencies evenly spaced over center +/- half_span.
inline std::vector<double> centered_grid(double center, double half_span, int points) {
  if (points < 1) throw ConfigError("grid needs at least one point");
  if (points == 1) return {center};
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = center - half_span + 2.0 * half_span * i / (points - 1);
  return g;
}

// ---------------------------------------------------------------------------
// Spectrum analyzer emulation

struct PowerSpectrum {
  std::vector<double> freqs;  ///< Hz, strictly increasing
  std::vector<double> psd;    ///< W/Hz, one-sided
  double rbw = 0.0;           ///< Hz, equivalent noise bandwidth of the analysis window
  double vbw = 0.0;           ///< Hz

  std::size_t size() const { return freqs.size(); }
  std::size_t nearest_bin(double f) const {
    const auto it = std::lower_bound(freqs.begin(), freqs.end(), f);
    if (it == freqs.begin()) return 0;
    if (it == freqs.end()) return freqs.size() - 1;
    const auto i = static_cast<std::size_t>(it - freqs.begin());
    return (f - freqs[i - 1] <= freqs[i] - f) ? i - 1 : i;
  }
};

struct PsdSettings {
  double rbw = 30.0;   ///< Hz
  double vbw = 30.0;   ///< Hz
  double f_lo = 0.0;   ///< Hz
  double f_hi = 0.0;   ///< Hz, must be below Nyquist
  int oversample = 4;  ///< zero-padding factor; bounds Hann scalloping to ~2%
};

/// Sweep-time coupling of the emulated analyzer: the trace is treated as
/// swept at rbw * min(rbw, vbw) / kSweepCoupling Hz/s when applying the
/// video filter, so a narrow vbw slows the sweep instead of eroding peaks.
inline constexpr double kSweepCoupling = 2.5;

/// Hann segment length whose equivalent noise bandwidth (1.5 fs / N) is rbw.
inline std::size_t segment_length_for_rbw(double sample_rate, double rbw) {
  return static_cast<std::size_t>(std::llround(1.5 * sample_rate / rbw));
}

namespace detail {

/// Zero-phase single-pole smoothing along the trace. The video time
/// constant 1 / (2 pi vbw) times the sweep rate gives the smoothing scale in
/// Hz, at most rbw / (2 pi kSweepCoupling).
inline void video_filter(std::vector<double>& trace, double bin_hz, double rbw, double vbw) {
  const double sweep_rate = rbw * std::min(rbw, vbw) / kSweepCoupling;
  const double tau_hz = sweep_rate / (kTwoPi * vbw);
  const double a = 1.0 - std::exp(-bin_hz / tau_hz);
  for (std::size_t i = 1; i < trace.size(); ++i) trace[i] = trace[i - 1] + a * (trace[i] - trace[i - 1]);
  for (std::size_t i = trace.size() - 1; i-- > 0;) trace[i] = trace[i + 1] + a * (trace[i] - trace[i + 1]);
}

}  // namespace detail

/// Averaged Hann periodogram (50% overlap) with the window's equivalent noise
/// bandwidth set to rbw, followed by video smoothing at vbw. White noise of
/// one-sided PSD N0 reads N0; a tone of amplitude a peaks at a^2 / (2 rbw).
inline PowerSpectrum psd_estimate(std::span<const double> x, double sample_rate, const PsdSettings& s) {
  if (!(s.rbw > 0.0) || !(s.vbw > 0.0)) throw ConfigError("psd_estimate: rbw and vbw must be > 0");
  if (!(s.f_hi < sample_rate / 2.0)) {
    throw ConfigError("psd_estimate: f_hi must be below Nyquist: " + detail::format_double(s.f_hi));
  }
  if (!(s.f_lo >= 0.0 && s.f_lo < s.f_hi)) throw ConfigError("psd_estimate: need 0 <= f_lo < f_hi");
  if (s.oversample < 1) throw ConfigError("psd_estimate: oversample must be >= 1");

  const std::size_t seg = segment_length_for_rbw(sample_rate, s.rbw);
  const std::size_t hop = seg / 2;
  if (seg < 8 || x.size() < seg + hop) {
    throw ConfigError("psd_estimate: rbw " + detail::format_double(s.rbw) +
                      " Hz is finer than the series supports (need >= " +
                      detail::format_double(static_cast<double>(seg + hop) / sample_rate) + " s)");
  }
  const std::size_t nseg = 1 + (x.size() - seg) / hop;
  const std::size_t nfft = seg * static_cast<std::size_t>(s.oversample);

  std::vector<double> window(seg);
  double sum_w = 0.0, sum_w2 = 0.0;
  for (std::size_t i = 0; i < seg; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(seg));
    sum_w += window[i];
    sum_w2 += window[i] * window[i];
  }

  RealFft fft(nfft);
  std::vector<double> acc(fft.bins(), 0.0);
  for (std::size_t k = 0; k < nseg; ++k) {
    auto buf = fft.real();
    const std::size_t off = k * hop;
    for (std::size_t i = 0; i < seg; ++i) buf[i] = x[off + i] * window[i];
    std::fill(buf.begin() + static_cast<std::ptrdiff_t>(seg), buf.end(), 0.0);
    fft.forward();
    const auto spec = fft.spectrum();
    for (std::size_t b = 0; b < acc.size(); ++b) acc[b] += std::norm(spec[b]);
  }
  const double scale = 2.0 / (sample_rate * sum_w2 * static_cast<double>(nseg));
  for (std::size_t b = 0; b < acc.size(); ++b) {
    const bool edge = b == 0 || (nfft % 2 == 0 && b == acc.size() - 1);
    acc[b] *= edge ? scale / 2.0 : scale;
  }

  const double bin_hz = sample_rate / static_cast<double>(nfft);
  detail::video_filter(acc, bin_hz, s.rbw, s.vbw);

  PowerSpectrum out;
  out.rbw = sample_rate * sum_w2 / (sum_w * sum_w);
  out.vbw = s.vbw;
  for (std::size_t b = 0; b < acc.size(); ++b) {
    const double f = static_cast<double>(b) * bin_hz;
    if (f < s.f_lo || f > s.f_hi) continue;
    out.freqs.push_back(f);
    out.psd.push_back(acc[b]);
  }
  if (out.freqs.empty()) throw ConfigError("psd_estimate: span contains no bins");
  return out;
}

inline PowerSpectrum psd_estimate(const DetectedTimeSeries& ts, const PsdSettings& s) {
  return psd_estimate(ts.samples, ts.sample_rate, s);
}

struct PeakAndBackground {
  double s_sig = 0.0;  ///< W/Hz, signal trace at the bin nearest the modulation frequency
  double s_bg = 0.0;   ///< W/Hz, mean reference trace over the background window
};

inline constexpr double kDefaultBackgroundWindow = 4e3;

/// Peak PSD of the on-resonance trace and background from the reference
/// (field-off) trace averaged over mod_freq +/- bg_window/2.
inline PeakAndBackground peak_and_background(const PowerSpectrum& spec_on, const PowerSpectrum& spec_off,
                                             double mod_freq, double bg_window = kDefaultBackgroundWindow) {
  if (!(bg_window > 0.0)) throw ConfigError("peak_and_background: bg_window must be > 0");
  const double lo = mod_freq - bg_window / 2.0, hi = mod_freq + bg_window / 2.0;
  for (const auto* s : {&spec_on, &spec_off}) {
    if (s->freqs.empty() || mod_freq < s->freqs.front() || mod_freq > s->freqs.back()) {
      throw ConfigError("peak_and_background: mod_freq " + detail::format_double(mod_freq) +
                        " Hz outside spectrum span");
    }
  }
  const double bin = spec_off.size() > 1 ? spec_off.freqs[1] - spec_off.freqs[0] : 0.0;
  if (lo < spec_off.freqs.front() - 0.5 * bin || hi > spec_off.freqs.back() + 0.5 * bin) {
    throw ConfigError("peak_and_background: background window exceeds spectrum span");
  }

  PeakAndBackground r;
  r.s_sig = spec_on.psd[spec_on.nearest_bin(mod_freq)];
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < spec_off.size(); ++i) {
    if (spec_off.freqs[i] >= lo && spec_off.freqs[i] <= hi) {
      sum += spec_off.psd[i];
      ++count;
    }
  }
  if (count == 0) throw ConfigError("peak_and_background: background window contains no bins");
  r.s_bg = sum / static_cast<double>(count);
  return r;
}

/// One averaged frequency bin of a spectrum.
struct SpectrumBin {
  double center = 0.0;  ///< Hz
  double mean_psd = 0.0;  ///< W/Hz
};

/// Averages a trace in consecutive bins of `width` Hz starting at f_lo;
/// partial bins at the top end are dropped.
inline std::vector<SpectrumBin> average_bins(const PowerSpectrum& spec, double f_lo, double f_hi, double width) {
  if (!(width > 0.0) || !(f_hi > f_lo)) throw ConfigError("average_bins: invalid bin layout");
  std::vector<SpectrumBin> out;
  for (double lo = f_lo; lo + width <= f_hi * (1.0 + 1e-12); lo += width) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < spec.size(); ++i) {
      if (spec.freqs[i] >= lo && spec.freqs[i] < lo + width) {
        sum += spec.psd[i];
        ++count;
      }
    }
    if (count > 0) out.push_back({lo + width / 2.0, sum / static_cast<double>(count)});
  }
  return out;
}

}  // namespace amor
