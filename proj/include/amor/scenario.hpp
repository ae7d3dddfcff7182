#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amor/analysis.hpp"
#include "amor/config.hpp"
#include "amor/detector.hpp"
#include "amor/dsp.hpp"
#include "amor/error.hpp"
#include "amor/fitting.hpp"
#include "amor/io.hpp"
#include "amor/parallel.hpp"
#include "amor/signal_model.hpp"

#ifndef AMOR_VERSION
#define AMOR_VERSION "0.1.0"
#endif

namespace amor {

inline constexpr const char* kVersion = AMOR_VERSION;

enum class Mode { Simulate, DemodSweep, Spectrum, NoiseScan, SnlMap, SensitivitySweep };

inline const std::vector<std::pair<Mode, std::string>>& mode_names() {
  static const std::vector<std::pair<Mode, std::string>> names{
      {Mode::Simulate, "simulate"},   {Mode::DemodSweep, "demod-sweep"}, {Mode::Spectrum, "spectrum"},
      {Mode::NoiseScan, "noise-scan"}, {Mode::SnlMap, "snl-map"},        {Mode::SensitivitySweep, "sensitivity-sweep"}};
  return names;
}

inline std::string to_string(Mode m) {
  for (const auto& [mode, name] : mode_names())
    if (mode == m) return name;
  return "unknown";
}

inline Mode parse_mode(const std::string& s) {
  for (const auto& [mode, name] : mode_names())
    if (name == s) return mode;
  throw ConfigError("unknown mode: " + s);
}

struct ScenarioSpec {
  Mode mode = Mode::Simulate;
  std::string config_path;  ///< empty: built-in defaults
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  int workers = 1;
  bool env_overrides = true;  ///< apply AMOR_<KEY> environment variables

  /// Used instead of loading config_path when set.
  std::optional<ExperimentConfig> config;

  // Grid overrides; empty means "take it from the configuration".
  std::vector<double> powers;       ///< W: scan powers or sensitivity-sweep powers
  std::vector<double> fields;       ///< T: demod-sweep as a field scan at fixed modulation frequency
  std::vector<double> frequencies;  ///< Hz: demod-sweep modulation grid

  void validate() const {
    if (workers < 1) throw ConfigError("workers must be >= 1: " + std::to_string(workers));
    if (output_dir.empty()) throw ConfigError("output directory must be set");
    const auto check = [](const std::vector<double>& g, const char* name) {
      for (std::size_t i = 1; i < g.size(); ++i)
        if (!(g[i] > g[i - 1])) throw ConfigError(std::string(name) + " grid must be strictly increasing");
    };
    check(powers, "powers");
    check(fields, "fields");
    check(frequencies, "frequencies");
    for (double p : powers)
      if (!(p >= 0.0)) throw ConfigError("powers must be >= 0: " + detail::format_double(p));
    for (double b : fields)
      if (!(b >= 0.0)) throw ConfigError("fields must be >= 0: " + detail::format_double(b));
  }
};

struct ScenarioOutcome {
  ExitCode code = ExitCode::Success;
  std::vector<std::string> files;  ///< written, relative to output_dir
  Json summary;
  Json error;  ///< set when code != Success
};

// ---------------------------------------------------------------------------
// Shared building blocks

/// Bias used when no field quantity is configured.
inline constexpr double kDefaultBiasField = 7.6e-6;  // T

inline ExperimentConfig prepare_config(ExperimentConfig cfg) {
  if (!cfg.field.b_field && !cfg.field.modulation_freq) cfg.field.b_field = kDefaultBiasField;
  return validate_config(std::move(cfg));
}

/// Resonance at the configured operating point (amplitude phi0, width
/// relaxation_gamma, center from field and detuning).
inline ResonanceParams operating_resonance(const ExperimentConfig& cfg) {
  return {cfg.sim.phi0, cfg.atom.relaxation_gamma,
          *cfg.field.modulation_freq - *cfg.field.detuning_delta / kTwoPi};
}

inline SynthesisSettings synthesis_settings(const ExperimentConfig& cfg, std::uint64_t seed, double power,
                                            double duration, std::uint64_t stream) {
  SynthesisSettings s;
  s.duration = duration;
  s.sample_rate = cfg.sim.sample_rate;
  s.power = power;
  s.wavelength = cfg.atom.probe_wavelength;
  s.seed = seed;
  s.stream = stream;
  s.shot_noise = power > 0.0;
  return s;
}

inline DetectionStage detection_stage(const ExperimentConfig& cfg, double power) {
  return {shot_noise_calibrated_gain(power, cfg.detector, cfg.atom.probe_wavelength),
          DetectionNoise::from(cfg.detector)};
}

/// Analytic budget of the simulation chain at one detection frequency.
inline NoiseBudget model_budget(const ExperimentConfig& cfg, double freq) {
  return {electronic_psd_at(DetectionNoise::from(cfg.detector), freq),
          simulated_shot_coefficient(cfg.detector, cfg.atom.probe_wavelength), cfg.detector.technical_noise_coef,
          freq};
}

/// Lock-in record length per sweep point: just over the settling
/// requirement of the output filter.
inline double lockin_record(const ExperimentConfig& cfg) { return 10.5 / cfg.sim.lockin_bandwidth; }

// RNG stream bases keep modes statistically independent.
inline constexpr std::uint64_t kStreamSweep = 0;
inline constexpr std::uint64_t kStreamSpectrum = 1ull << 20;
inline constexpr std::uint64_t kStreamNoiseScan = 2ull << 20;
inline constexpr std::uint64_t kStreamSensitivity = 3ull << 20;
inline constexpr std::uint64_t kStreamSimulate = 4ull << 20;

struct SpectrumPair {
  PowerSpectrum on, off;
  PeakAndBackground pb;
  double g_det = 0.0;
  double snr = 0.0;
};

/// Signal (resonant) and reference (signal-free) traces around the
/// modulation frequency, and the SNR they give.
inline SpectrumPair measure_spectra(const ExperimentConfig& cfg, const ResonanceParams& res, double power,
                                    std::uint64_t seed, std::uint64_t stream) {
  const double fm = *cfg.field.modulation_freq;
  const auto stage = detection_stage(cfg, power);
  PsdSettings ps;
  ps.rbw = cfg.sim.rbw;
  ps.vbw = cfg.sim.vbw;
  ps.f_lo = std::max(0.0, fm - cfg.sim.span / 2.0);
  ps.f_hi = fm + cfg.sim.span / 2.0;
  ps.oversample = cfg.sim.psd_oversample;

  SpectrumPair out;
  out.g_det = stage.g_det;
  ResonanceParams off = res;
  off.phi0 = 0.0;
  const auto run = [&](const ResonanceParams& r, std::uint64_t st) {
    const auto rot = synthesize_rotation(r, cfg.field, synthesis_settings(cfg, seed, power, cfg.sim.duration, st));
    return psd_estimate(detect(rot, stage.g_det, stage.noise, seed, st), ps);
  };
  out.on = run(res, stream);
  out.off = run(off, stream + 1);
  out.pb = peak_and_background(out.on, out.off, fm, cfg.sim.bg_window);
  out.snr = compute_snr(out.pb.s_sig, out.pb.s_bg, out.on.rbw);
  return out;
}

struct NoiseScanResult {
  std::vector<double> powers;
  std::vector<PowerSpectrum> spectra;              ///< per power
  std::vector<double> bin_centers;                 ///< Hz
  std::vector<std::vector<double>> bin_psd;        ///< [power][bin], W/Hz
  std::vector<NoisePolyFit> fits;                  ///< per bin
  std::size_t report_bin = 0;
};

/// Noise-only traces at each power, averaged in frequency bins, and a noise
/// polynomial per bin. A zero-power point pins the electronic term.
inline NoiseScanResult run_noise_scan(const ExperimentConfig& cfg, const std::vector<double>& powers,
                                      std::uint64_t seed, int workers) {
  NoiseScanResult r;
  r.powers = powers;
  r.spectra.resize(powers.size());
  PsdSettings ps;
  ps.rbw = cfg.sim.rbw;
  ps.vbw = cfg.sim.vbw;
  ps.f_lo = cfg.scan.freq_lo;
  ps.f_hi = cfg.scan.freq_hi;
  ps.oversample = 1;
  ResonanceParams silent = operating_resonance(cfg);
  silent.phi0 = 0.0;

  parallel_for(powers.size(), workers, [&](std::size_t i) {
    const std::uint64_t stream = kStreamNoiseScan + i;
    const auto stage = detection_stage(cfg, powers[i]);
    const auto rot = synthesize_rotation(silent, cfg.field,
                                         synthesis_settings(cfg, seed, powers[i], cfg.scan.duration, stream));
    r.spectra[i] = psd_estimate(detect(rot, stage.g_det, stage.noise, seed, stream), ps);
  });

  for (const auto& spec : r.spectra) {
    const auto bins = average_bins(spec, cfg.scan.freq_lo, cfg.scan.freq_hi, cfg.scan.bin_width);
    std::vector<double> row;
    if (r.bin_centers.empty())
      for (const auto& b : bins) r.bin_centers.push_back(b.center);
    for (const auto& b : bins) row.push_back(b.mean_psd);
    r.bin_psd.push_back(std::move(row));
  }
  if (r.bin_centers.empty()) throw ConfigError("noise scan: no complete frequency bins in the scan range");

  const auto zero = std::find(powers.begin(), powers.end(), 0.0);
  r.fits.resize(r.bin_centers.size());
  parallel_for(r.bin_centers.size(), workers, [&](std::size_t b) {
    std::vector<PowerPsdPoint> pts;
    std::optional<double> fixed;
    for (std::size_t i = 0; i < powers.size(); ++i) {
      const double psd = r.bin_psd[i][b];
      if (zero != powers.end() && static_cast<std::size_t>(zero - powers.begin()) == i) {
        fixed = psd;
        continue;
      }
      pts.push_back({powers[i], psd});
    }
    r.fits[b] = fit_noise_polynomial(pts, fixed, r.bin_centers[b]);
  });

  double best = INFINITY;
  for (std::size_t b = 0; b < r.bin_centers.size(); ++b) {
    const double d = std::abs(r.bin_centers[b] - cfg.scan.report_freq);
    if (d < best) {
      best = d;
      r.report_bin = b;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Plot data

namespace detail {

inline TableMeta plot_meta(const Table& src, const std::string& what, const std::vector<std::string>& col_docs) {
  TableMeta m;
  m.emplace_back("plot", what);
  for (const auto& kv : src.meta) m.push_back(kv);
  for (std::size_t i = 0; i < col_docs.size(); ++i)
    m.emplace_back("column " + std::to_string(i + 1), col_docs[i]);
  return m;
}

inline Table select_columns(const Table& src, const std::vector<std::string>& names) {
  Table t;
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(src.column(n));
  t.columns = names;
  for (const auto& row : src.rows) {
    std::vector<double> r;
    for (auto i : idx) r.push_back(row[i]);
    t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace detail

/// Sentinel written in SNL plot columns when a range is empty.
inline constexpr double kEmptyRangeSentinel = -1.0;

/// Converts result files found in `dir` into whitespace-separated plot data,
/// one file per figure analog. Returns the files written; throws IoError if
/// no result files are present.
inline std::vector<std::string> emit_plotdata(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> written;
  const auto has = [&](const char* name) { return fs::exists(dir / name); };
  const auto emit = [&](const std::string& name, Table t) {
    write_table(dir / name, t, true);
    written.push_back(name);
  };

  if (has("resonance.csv")) {
    const Table src = read_table(dir / "resonance.csv");
    const std::vector<std::string> cols{"mod_freq_hz", "phi_p_rad", "phi_q_rad", "fit_phi_p_rad", "fit_phi_q_rad"};
    Table t = detail::select_columns(src, cols);
    t.meta = detail::plot_meta(src, "in-phase and quadrature lock-in outputs vs modulation frequency",
                               {"modulation frequency [Hz]", "phi_P [rad]", "phi_Q [rad]", "fitted phi_P [rad]",
                                "fitted phi_Q [rad]"});
    emit("fig2_resonance.dat", std::move(t));
  }
  if (has("spectrum.csv") && has("spectrum_off.csv")) {
    const Table on = read_table(dir / "spectrum.csv");
    const Table off = read_table(dir / "spectrum_off.csv");
    if (on.rows.size() != off.rows.size()) throw IoError("spectrum.csv and spectrum_off.csv differ in length");
    Table t;
    t.columns = {"freq_hz", "psd_on_w_per_hz", "psd_off_w_per_hz"};
    for (std::size_t i = 0; i < on.rows.size(); ++i) t.rows.push_back({on.rows[i][0], on.rows[i][1], off.rows[i][1]});
    t.meta = detail::plot_meta(on, "RF spectrum on resonance and signal-free reference",
                               {"frequency [Hz]", "PSD on resonance [W/Hz]", "PSD reference [W/Hz]"});
    emit("fig3_spectrum.dat", std::move(t));
  }
  if (has("noise_decomposition.csv")) {
    const Table src = read_table(dir / "noise_decomposition.csv");
    Table t = src;
    t.meta = detail::plot_meta(src, "magnetometer-mode noise and its model components",
                               {"frequency [Hz]", "measured reference PSD [W/Hz]", "electronic A [W/Hz]",
                                "shot B*P [W/Hz]", "technical C*P^2 [W/Hz]", "model total [W/Hz]"});
    emit("fig8_noise.dat", std::move(t));
  }
  if (has("sensitivity_sweep.csv")) {
    const Table src = read_table(dir / "sensitivity_sweep.csv");
    Table snr = detail::select_columns(src, {"power_w", "snr"});
    snr.meta = detail::plot_meta(src, "SNR vs probe power", {"probe power [W]", "SNR [1/sqrt(Hz) units]"});
    emit("fig4a_snr.dat", std::move(snr));
    Table sens = detail::select_columns(src, {"power_w", "delta_b_t_per_rthz", "delta_b_model_t_per_rthz"});
    sens.meta = detail::plot_meta(src, "magnetic sensitivity vs probe power",
                                  {"probe power [W]", "delta B [T/sqrt(Hz)]", "model delta B [T/sqrt(Hz)]"});
    emit("fig4b_sensitivity.dat", std::move(sens));
  }
  if (has("noise_spectra.csv")) {
    const Table src = read_table(dir / "noise_spectra.csv");
    Table t = src;
    std::vector<std::string> docs{"frequency [Hz]"};
    for (std::size_t i = 1; i < src.columns.size(); ++i) docs.push_back("PSD [W/Hz] " + src.columns[i]);
    t.meta = detail::plot_meta(src, "noise spectra at each probe power", docs);
    emit("fig5_noise_spectra.dat", std::move(t));
  }
  if (has("power_fit.csv")) {
    const Table src = read_table(dir / "power_fit.csv");
    Table t = src;
    t.meta = detail::plot_meta(src, "noise vs probe power at the report frequency with polynomial fit",
                               {"probe power [W]", "measured PSD [W/Hz]", "fit A+BP+CP^2 [W/Hz]",
                                "electronic A [W/Hz]", "shot B*P [W/Hz]", "technical C*P^2 [W/Hz]",
                                "theory G^2 2ie/R [W/Hz]", "theory lower [W/Hz]", "theory upper [W/Hz]"});
    emit("fig5_power_fit.dat", std::move(t));
  }
  if (has("snl_map.csv")) {
    const Table src = read_table(dir / "snl_map.csv");
    const auto* tag = src.find_meta("plot_tag");
    const std::size_t cf = src.column("freq_hz"), ck = src.column("k"), cl = src.column("p_low_w"),
                      ch = src.column("p_high_w"), cn = src.column("nonempty");
    std::vector<double> ks, freqs;
    std::map<std::pair<double, double>, std::pair<double, double>> cells;
    for (const auto& row : src.rows) {
      if (std::find(ks.begin(), ks.end(), row[ck]) == ks.end()) ks.push_back(row[ck]);
      if (std::find(freqs.begin(), freqs.end(), row[cf]) == freqs.end()) freqs.push_back(row[cf]);
      const bool nonempty = row[cn] != 0.0;
      cells[{row[cf], row[ck]}] = nonempty ? std::pair{row[cl], row[ch]}
                                           : std::pair{kEmptyRangeSentinel, kEmptyRangeSentinel};
    }
    Table t;
    t.columns = {"freq_hz"};
    std::vector<std::string> docs{"detection frequency [Hz]"};
    for (double k : ks) {
      const std::string ks_ = format_value(k);
      t.columns.push_back("p_low_k" + ks_ + "_w");
      t.columns.push_back("p_high_k" + ks_ + "_w");
      docs.push_back("SNL lower power k=" + ks_ + " [W]");
      docs.push_back("SNL upper power k=" + ks_ + " [W] (inf: unbounded)");
    }
    for (double f : freqs) {
      std::vector<double> row{f};
      for (double k : ks) {
        const auto it = cells.find({f, k});
        row.push_back(it == cells.end() ? kEmptyRangeSentinel : it->second.first);
        row.push_back(it == cells.end() ? kEmptyRangeSentinel : it->second.second);
      }
      t.rows.push_back(std::move(row));
    }
    t.meta = detail::plot_meta(src, "shot-noise-limited power ranges vs detection frequency", docs);
    t.meta.emplace_back("empty range sentinel", format_value(kEmptyRangeSentinel));
    emit((tag ? *tag : std::string("fig6")) + "_snl.dat", std::move(t));
  }
  if (written.empty()) throw IoError("no result files to convert in " + dir.string());
  return written;
}

// ---------------------------------------------------------------------------
// Modes

namespace detail {

struct ModeContext {
  const ScenarioSpec& spec;
  const ExperimentConfig& cfg;
  std::vector<std::string>& files;
  Json& summary;

  TableMeta meta() const {
    return {{"seed", std::to_string(spec.seed)}, {"mode", to_string(spec.mode)}, {"version", kVersion}};
  }
  void write(const std::string& name, const Table& t) {
    write_table(spec.output_dir / name, t);
    files.push_back(name);
  }
  void write(const std::string& name, const Json& j) {
    write_json(spec.output_dir / name, j);
    files.push_back(name);
  }
};

inline void run_simulate(ModeContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto res = operating_resonance(cfg);
  const double power = cfg.sim.probe_power;
  const std::uint64_t stream = kStreamSimulate;
  const auto rot = synthesize_rotation(res, cfg.field,
                                       synthesis_settings(cfg, ctx.spec.seed, power, cfg.sim.duration, stream));
  const auto stage = detection_stage(cfg, power);
  const auto det = detect(rot, stage.g_det, stage.noise, ctx.spec.seed, stream);

  Table t;
  t.meta = ctx.meta();
  t.meta.emplace_back("sample_rate_hz", format_value(rot.sample_rate));
  t.meta.emplace_back("power_w", format_value(power));
  t.meta.emplace_back("modulation_freq_hz", format_value(rot.modulation_freq));
  t.meta.emplace_back("g_det_sqrt_w_per_rad", format_value(stage.g_det));
  t.columns = {"time_s", "rotation_rad", "detector_sqrt_w"};
  t.rows.reserve(rot.samples.size());
  for (std::size_t i = 0; i < rot.samples.size(); ++i)
    t.rows.push_back({static_cast<double>(i) / rot.sample_rate, rot.samples[i], det.samples[i]});
  ctx.write("timeseries.csv", t);

  const Quadratures expected = lorentzian_quadratures(*cfg.field.detuning_delta, res);
  ctx.summary = {{"samples", rot.samples.size()},
                 {"modulation_freq_hz", rot.modulation_freq},
                 {"center_freq_hz", res.center_freq},
                 {"expected_phi_p_rad", expected.phi_p},
                 {"expected_phi_q_rad", expected.phi_q},
                 {"g_det_sqrt_w_per_rad", stage.g_det}};
  if (rot.duration() >= 10.0 / cfg.sim.lockin_bandwidth) {
    const auto q = lock_in_demodulate(det, rot.modulation_freq, cfg.sim.lockin_bandwidth);
    ctx.summary["lockin_phi_p_rad"] = q.phi_p;
    ctx.summary["lockin_phi_q_rad"] = q.phi_q;
  }
}

inline ResonanceCurve field_scan(const ExperimentConfig& cfg, const std::vector<double>& fields, std::uint64_t seed,
                                 int workers) {
  const double fm = *cfg.field.modulation_freq;
  ResonanceCurve curve;
  curve.mod_freqs.resize(fields.size());
  curve.phi_P_values.resize(fields.size());
  curve.phi_Q_values.resize(fields.size());
  const auto stage = detection_stage(cfg, cfg.sim.probe_power);
  parallel_for(fields.size(), workers, [&](std::size_t i) {
    ResonanceParams res = operating_resonance(cfg);
    res.center_freq = larmor_doubled_freq(fields[i], cfg.atom);
    FieldConfig field;
    field.modulation_freq = fm;
    field.detuning_delta = kTwoPi * (fm - res.center_freq);
    const std::uint64_t stream = kStreamSweep + i;
    const auto rot = synthesize_rotation(
        res, field, synthesis_settings(cfg, seed, cfg.sim.probe_power, lockin_record(cfg), stream));
    const auto q = lock_in_demodulate(detect(rot, stage.g_det, stage.noise, seed, stream), fm,
                                      cfg.sim.lockin_bandwidth);
    curve.mod_freqs[i] = fields[i];
    curve.phi_P_values[i] = q.phi_p;
    curve.phi_Q_values[i] = q.phi_q;
  });
  return curve;
}

inline void run_demod_sweep(ModeContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto res = operating_resonance(cfg);

  if (!ctx.spec.fields.empty()) {
    const auto curve = field_scan(cfg, ctx.spec.fields, ctx.spec.seed, ctx.spec.workers);
    Table t;
    t.meta = ctx.meta();
    t.meta.emplace_back("modulation_freq_hz", format_value(*cfg.field.modulation_freq));
    t.columns = {"b_field_t", "phi_p_rad", "phi_q_rad"};
    for (std::size_t i = 0; i < curve.size(); ++i)
      t.rows.push_back({curve.mod_freqs[i], curve.phi_P_values[i], curve.phi_Q_values[i]});
    ctx.write("resonance_field.csv", t);
    ctx.summary = {{"points", curve.size()}, {"scan", "field"}};
    return;
  }

  const double half = cfg.sim.demod_half_span > 0.0 ? cfg.sim.demod_half_span : 5.0 * res.gamma_fwhm;
  const std::vector<double> grid = ctx.spec.frequencies.empty()
                                       ? centered_grid(res.center_freq, half, cfg.sim.demod_points)
                                       : ctx.spec.frequencies;
  SweepSettings ss;
  ss.synth = synthesis_settings(cfg, ctx.spec.seed, cfg.sim.probe_power, lockin_record(cfg), kStreamSweep);
  ss.output_bandwidth = cfg.sim.lockin_bandwidth;
  ss.detection = detection_stage(cfg, cfg.sim.probe_power);
  ss.workers = ctx.spec.workers;
  const auto curve = sweep_resonance(res, grid, ss);

  std::optional<LorentzianFit> fit;
  std::string fit_error;
  if (curve.size() >= 7) {
    try {
      fit = fit_lorentzian(curve);
    } catch (const NumericalError& e) {
      fit_error = e.what();
    }
  } else {
    fit_error = "too few points to fit (need 7)";
  }

  Table t;
  t.meta = ctx.meta();
  t.meta.emplace_back("center_freq_hz", format_value(res.center_freq));
  t.meta.emplace_back("brackets_resonance", curve.brackets_resonance ? "true" : "false");
  t.columns = {"mod_freq_hz", "phi_p_rad", "phi_q_rad", "fit_phi_p_rad", "fit_phi_q_rad"};
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const auto z = fit ? fit->params().eval(curve.mod_freqs[i]) : std::complex<double>(NAN, NAN);
    t.rows.push_back({curve.mod_freqs[i], curve.phi_P_values[i], curve.phi_Q_values[i], z.real(), z.imag()});
  }
  ctx.write("resonance.csv", t);

  Json j = {{"seed", ctx.spec.seed},
            {"brackets_resonance", curve.brackets_resonance},
            {"truth", {{"center_freq_hz", res.center_freq}, {"gamma_fwhm_hz", res.gamma_fwhm}, {"phi0_rad", res.phi0}}}};
  if (fit) j["fit"] = to_json(*fit);
  else j["fit_error"] = fit_error;
  ctx.write("fit.json", j);
  ctx.summary = j;
  if (!fit && curve.brackets_resonance && curve.size() >= 7) throw NumericalError("resonance fit: " + fit_error);
}

inline void run_spectrum(ModeContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto res = operating_resonance(cfg);
  const double power = cfg.sim.probe_power;
  const double fm = *cfg.field.modulation_freq;
  const auto sp = measure_spectra(cfg, res, power, ctx.spec.seed, kStreamSpectrum);

  const auto spectrum_table = [&](const PowerSpectrum& s, const char* trace) {
    Table t;
    t.meta = ctx.meta();
    t.meta.emplace_back("trace", trace);
    t.meta.emplace_back("rbw_hz", format_value(s.rbw));
    t.meta.emplace_back("vbw_hz", format_value(s.vbw));
    t.meta.emplace_back("power_w", format_value(power));
    t.columns = {"freq_hz", "psd_w_per_hz"};
    for (std::size_t i = 0; i < s.size(); ++i) t.rows.push_back({s.freqs[i], s.psd[i]});
    return t;
  };
  ctx.write("spectrum.csv", spectrum_table(sp.on, "on resonance"));
  ctx.write("spectrum_off.csv", spectrum_table(sp.off, "signal-free reference"));

  Table dec;
  dec.meta = ctx.meta();
  dec.meta.emplace_back("power_w", format_value(power));
  dec.columns = {"freq_hz", "measured_w_per_hz", "electronic_w_per_hz", "shot_w_per_hz", "technical_w_per_hz",
                 "model_w_per_hz"};
  for (std::size_t i = 0; i < sp.off.size(); ++i) {
    const auto b = model_budget(cfg, sp.off.freqs[i]);
    const double shot = b.coef_shot * power, tech = b.coef_tech * power * power;
    dec.rows.push_back({sp.off.freqs[i], sp.off.psd[i], b.coef_elec, shot, tech, b.coef_elec + shot + tech});
  }
  ctx.write("noise_decomposition.csv", dec);

  const auto budget = model_budget(cfg, fm);
  const auto report = make_sensitivity_report(cfg, res.gamma_fwhm, sp.snr, power, fm, budget);
  // Independent route: rotation noise density over the dispersive slope.
  const double dphi = std::sqrt(2.0 * sp.pb.s_bg) / sp.g_det;
  const double slope = quadrature_slope(std::sqrt(2.0 * sp.on.rbw * sp.pb.s_sig) / sp.g_det, res.gamma_fwhm,
                                        cfg.atom.g_f, SlopeConvention::Nominal);
  Json j = {{"seed", ctx.spec.seed},
            {"report", to_json(report)},
            {"s_sig_w_per_hz", sp.pb.s_sig},
            {"s_bg_w_per_hz", sp.pb.s_bg},
            {"rbw_hz", sp.on.rbw},
            {"vbw_hz", sp.on.vbw},
            {"bg_window_hz", cfg.sim.bg_window},
            {"g_det_sqrt_w_per_rad", sp.g_det},
            {"phi_noise_rad_per_rthz", dphi},
            {"slope_route_delta_B_t_per_rthz", dphi / slope},
            {"model_budget", to_json(budget)}};
  ctx.write("sensitivity.json", j);
  ctx.summary = j;
}

inline NoiseScanResult write_noise_scan(ModeContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& powers = ctx.spec.powers.empty() ? cfg.scan.powers : ctx.spec.powers;
  const auto r = run_noise_scan(cfg, powers, ctx.spec.seed, ctx.spec.workers);

  Table spectra;
  spectra.meta = ctx.meta();
  spectra.meta.emplace_back("rbw_hz", format_value(r.spectra.front().rbw));
  spectra.meta.emplace_back("vbw_hz", format_value(r.spectra.front().vbw));
  spectra.columns = {"freq_hz"};
  for (double p : powers) spectra.columns.push_back("psd_w_per_hz@" + format_value(p) + "W");
  for (std::size_t k = 0; k < r.spectra.front().size(); ++k) {
    std::vector<double> row{r.spectra.front().freqs[k]};
    for (const auto& s : r.spectra) row.push_back(s.psd[k]);
    spectra.rows.push_back(std::move(row));
  }
  ctx.write("noise_spectra.csv", spectra);

  Table scan;
  scan.meta = ctx.meta();
  scan.meta.emplace_back("bin_width_hz", format_value(cfg.scan.bin_width));
  scan.columns = {"bin_center_hz", "power_w", "psd_w_per_hz"};
  for (std::size_t b = 0; b < r.bin_centers.size(); ++b)
    for (std::size_t i = 0; i < powers.size(); ++i) scan.rows.push_back({r.bin_centers[b], powers[i], r.bin_psd[i][b]});
  ctx.write("power_scan.csv", scan);

  Table budgets;
  budgets.meta = ctx.meta();
  budgets.columns = {"freq_hz", "coef_elec_w_per_hz", "coef_shot_w_per_hz_w", "coef_tech_w_per_hz_w2",
                     "stderr_elec_w_per_hz", "stderr_shot_w_per_hz_w", "stderr_tech_w_per_hz_w2"};
  Json fits = Json::array();
  for (const auto& f : r.fits) {
    budgets.rows.push_back({f.budget.detection_freq, f.budget.coef_elec, f.budget.coef_shot, f.budget.coef_tech,
                            f.coef_stderr[0], f.coef_stderr[1], f.coef_stderr[2]});
    fits.push_back(to_json(f));
  }
  ctx.write("budgets.csv", budgets);

  const auto& rep = r.fits[r.report_bin];
  Table pf;
  pf.meta = ctx.meta();
  pf.meta.emplace_back("bin_center_hz", format_value(r.bin_centers[r.report_bin]));
  pf.columns = {"power_w", "measured_w_per_hz", "fit_w_per_hz", "electronic_w_per_hz", "shot_w_per_hz",
                "technical_w_per_hz", "theory_shot_w_per_hz", "theory_low_w_per_hz", "theory_high_w_per_hz"};
  for (std::size_t i = 0; i < powers.size(); ++i) {
    const double p = powers[i];
    const auto& b = rep.budget;
    const auto [lo, hi] = theoretical_shot_noise_band(p, cfg.detector, cfg.atom.probe_wavelength);
    pf.rows.push_back({p, r.bin_psd[i][r.report_bin], noise_budget_eval(b, p), b.coef_elec, b.coef_shot * p,
                       b.coef_tech * p * p,
                       theoretical_shot_noise_level(p, cfg.detector, cfg.atom.probe_wavelength), lo, hi});
  }
  ctx.write("power_fit.csv", pf);

  Json j = {{"seed", ctx.spec.seed},
            {"report_bin_hz", r.bin_centers[r.report_bin]},
            {"report_fit", to_json(rep)},
            {"model_budget_at_report", to_json(model_budget(cfg, r.bin_centers[r.report_bin]))},
            {"fits", fits}};
  ctx.write("budgets.json", j);
  ctx.summary = {{"report_bin_hz", r.bin_centers[r.report_bin]}, {"report_fit", to_json(rep)}};
  return r;
}

inline void run_snl_map(ModeContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto scan = write_noise_scan(ctx);
  std::vector<NoiseBudget> budgets;
  for (const auto& f : scan.fits) budgets.push_back(f.budget);
  const auto rows = snl_map(budgets, cfg.scan.snl_k);

  Table t;
  t.meta = ctx.meta();
  t.meta.emplace_back("plot_tag", cfg.scan.plot_tag);
  t.columns = {"freq_hz", "k", "p_low_w", "p_high_w", "nonempty"};
  for (const auto& r : rows)
    t.rows.push_back({r.freq, r.range.k, r.range.p_low, r.range.p_high, r.range.nonempty ? 1.0 : 0.0});
  ctx.write("snl_map.csv", t);

  const auto& rep = scan.fits[scan.report_bin].budget;
  Json ranges = Json::array(), classes = Json::array();
  for (double k : cfg.scan.snl_k) {
    ranges.push_back(to_json(snl_range(rep, k)));
    classes.push_back({{"k", k}, {"class", to_string(classify_operating_point(rep, cfg.sim.probe_power, k))}});
  }
  Json j = {{"seed", ctx.spec.seed},
            {"report_bin_hz", scan.bin_centers[scan.report_bin]},
            {"report_budget", to_json(rep)},
            {"report_ranges", ranges},
            {"operating_power_w", cfg.sim.probe_power},
            {"operating_point_class", classes}};
  ctx.write("snl_map.json", j);
  ctx.summary = j;
}

struct SweepPoint {
  double power = 0.0, phi0 = 0.0, gamma = 0.0, snr = 0.0, delta_b = 0.0, delta_b_model = 0.0;
  std::string snl_class;
};

inline void run_sensitivity_sweep(ModeContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& powers = ctx.spec.powers.empty() ? cfg.sweep.powers : ctx.spec.powers;
  const double fm = *cfg.field.modulation_freq;
  const auto base = operating_resonance(cfg);
  const auto budget = model_budget(cfg, fm);
  std::vector<SweepPoint> pts(powers.size());

  parallel_for(powers.size(), ctx.spec.workers, [&](std::size_t i) {
    const double p = powers[i];
    if (!(p > 0.0)) throw ConfigError("sensitivity sweep powers must be > 0");
    ResonanceParams res = base;
    res.phi0 = cfg.sim.phi0 * p / (p + cfg.sweep.phi0_saturation_power);
    res.gamma_fwhm = cfg.atom.relaxation_gamma + cfg.sweep.gamma_broadening * p;
    const std::uint64_t stream = kStreamSensitivity + (static_cast<std::uint64_t>(i) << 10);

    const double half = cfg.sim.demod_half_span > 0.0 ? cfg.sim.demod_half_span : 5.0 * res.gamma_fwhm;
    SweepSettings ss;
    ss.synth = synthesis_settings(cfg, ctx.spec.seed, p, lockin_record(cfg), stream);
    ss.output_bandwidth = cfg.sim.lockin_bandwidth;
    ss.detection = detection_stage(cfg, p);
    ss.workers = 1;
    const auto grid = centered_grid(res.center_freq, half, std::max(cfg.sim.demod_points, 7));
    const auto fit = fit_lorentzian(sweep_resonance(res, grid, ss));

    const auto sp = measure_spectra(cfg, res, p, ctx.spec.seed, stream + 512);
    auto& o = pts[i];
    o.power = p;
    o.phi0 = fit.phi0;
    o.gamma = fit.gamma_fwhm;
    o.snr = sp.snr;
    o.delta_b = sensitivity(fit.gamma_fwhm, sp.snr, cfg.atom.g_f);
    const double g = sp.g_det;
    const double model_snr = g * res.phi0 / std::sqrt(2.0 * noise_budget_eval(budget, p));
    o.delta_b_model = sensitivity(res.gamma_fwhm, model_snr, cfg.atom.g_f);
    o.snl_class = to_string(classify_operating_point(budget, p, 4.0));
  });

  Table t;
  t.meta = ctx.meta();
  t.meta.emplace_back("modulation_freq_hz", format_value(fm));
  t.meta.emplace_back("phi0_saturation_power_w", format_value(cfg.sweep.phi0_saturation_power));
  t.meta.emplace_back("gamma_broadening_hz_per_w", format_value(cfg.sweep.gamma_broadening));
  t.columns = {"power_w", "phi0_fit_rad", "gamma_fit_hz", "snr", "delta_b_t_per_rthz", "delta_b_model_t_per_rthz"};
  for (const auto& o : pts) t.rows.push_back({o.power, o.phi0, o.gamma, o.snr, o.delta_b, o.delta_b_model});
  ctx.write("sensitivity_sweep.csv", t);

  // Optimum and the contiguous set of points within 10% of it.
  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].delta_b < pts[best].delta_b) best = i;
  const double limit = 1.1 * pts[best].delta_b;
  std::size_t lo = best, hi = best;
  while (lo > 0 && pts[lo - 1].delta_b <= limit) --lo;
  while (hi + 1 < pts.size() && pts[hi + 1].delta_b <= limit) ++hi;
  const auto snl4 = snl_range(budget, 4.0);
  Json rows = Json::array();
  for (const auto& o : pts) rows.push_back({{"power_w", o.power}, {"snl_class", o.snl_class}});
  Json j = {{"seed", ctx.spec.seed},
            {"optimum_power_w", pts[best].power},
            {"optimum_delta_b_t_per_rthz", pts[best].delta_b},
            {"plateau_low_w", pts[lo].power},
            {"plateau_high_w", pts[hi].power},
            {"plateau_ratio", pts[hi].power / pts[lo].power},
            {"plateau_tolerance", 0.1},
            {"optimum_interior", best > 0 && best + 1 < pts.size()},
            {"snl4_range_w", to_json(snl4)},
            {"optimum_in_snl4", pts[best].power >= snl4.p_low && pts[best].power <= snl4.p_high},
            {"snr_convention", "per-sqrt-Hz: SNR^2 = RBW * S_sig / S_bg"},
            {"points", rows}};
  ctx.write("sensitivity_sweep.json", j);
  ctx.summary = j;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline Json error_json(const std::string& kind, const std::string& message, ExitCode code) {
  return {{"error", {{"kind", kind}, {"message", message}, {"exit_code", static_cast<int>(code)}}}};
}

}  // namespace detail

/// Loads the configuration for a spec: explicit config, else file, else
/// defaults; then environment overrides; then validation.
inline ExperimentConfig resolve_config(const ScenarioSpec& spec) {
  ExperimentConfig cfg = spec.config ? *spec.config
                                     : (spec.config_path.empty() ? ExperimentConfig{}
                                                                 : load_config_file(spec.config_path));
  if (spec.env_overrides) apply_env_overrides(cfg);
  return prepare_config(std::move(cfg));
}

/// Runs one scenario, writing result files, plot data, and manifest.json to
/// spec.output_dir. Errors are reported through the outcome (and error.json)
/// rather than thrown.
inline ScenarioOutcome run_scenario(const ScenarioSpec& spec) {
  namespace fs = std::filesystem;
  ScenarioOutcome out;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = detail::utc_timestamp();
  try {
    spec.validate();
    std::error_code ec;
    fs::create_directories(spec.output_dir, ec);
    if (ec || !fs::is_directory(spec.output_dir))
      throw IoError("cannot create output directory: " + spec.output_dir.string());
    fs::remove(spec.output_dir / "error.json", ec);

    const ExperimentConfig cfg = resolve_config(spec);
    detail::ModeContext ctx{spec, cfg, out.files, out.summary};
    switch (spec.mode) {
      case Mode::Simulate: detail::run_simulate(ctx); break;
      case Mode::DemodSweep: detail::run_demod_sweep(ctx); break;
      case Mode::Spectrum: detail::run_spectrum(ctx); break;
      case Mode::NoiseScan: detail::write_noise_scan(ctx); break;
      case Mode::SnlMap: detail::run_snl_map(ctx); break;
      case Mode::SensitivitySweep: detail::run_sensitivity_sweep(ctx); break;
    }
    if (spec.mode != Mode::Simulate && !(spec.mode == Mode::DemodSweep && !spec.fields.empty())) {
      for (auto& f : emit_plotdata(spec.output_dir)) {
        if (std::find(out.files.begin(), out.files.end(), f) == out.files.end()) out.files.push_back(f);
      }
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Json grids = {{"powers_w", spec.powers}, {"fields_t", spec.fields}, {"frequencies_hz", spec.frequencies}};
    Json manifest = {{"tool", "amor"},
                     {"version", kVersion},
                     {"mode", to_string(spec.mode)},
                     {"seed", spec.seed},
                     {"workers", spec.workers},
                     {"config_path", spec.config_path},
                     {"config", config_entries(cfg)},
                     {"grids", grids},
                     {"outputs", out.files},
                     {"started_utc", started},
                     {"wall_time_s", wall}};
    write_json(spec.output_dir / "manifest.json", manifest);
  } catch (const Error& e) {
    out.code = e.exit_code();
    out.error = detail::error_json(e.kind(), e.what(), out.code);
  } catch (const std::exception& e) {
    out.code = ExitCode::NumericalFailure;
    out.error = detail::error_json("internal", e.what(), out.code);
  }
  if (out.code != ExitCode::Success) {
    try {
      if (fs::is_directory(spec.output_dir)) write_json(spec.output_dir / "error.json", out.error);
    } catch (const Error&) {
    }
  }
  return out;
}

}  // namespace amor
