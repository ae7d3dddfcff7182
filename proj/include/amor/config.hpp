#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "amor/constants.hpp"
#include "amor/error.hpp"

namespace amor {

enum class PhotocurrentConvention { Physical, AsPrinted };
enum class SlopeConvention { Nominal, Derived };

struct AtomConfig {
  double g_f = 1.0 / 3.0;           ///< Lande factor, 85Rb F=3
  double density_n = 1.27e16;       ///< atoms/m^3
  double cell_radius = 0.05;        ///< m
  double relaxation_gamma = 10.0;   ///< Hz, FWHM
  double probe_wavelength = 795e-9; ///< m

  // Populated by validate_config().
  double atom_number = 0.0;      ///< density_n * (4/3) pi R^3
  double probe_frequency = 0.0;  ///< c / lambda, Hz

  bool operator==(const AtomConfig&) const = default;
};

/// One (frequency, electronic-noise PSD) knot; linearly interpolated.
struct NoiseTablePoint {
  double freq = 0.0;  ///< Hz
  double psd = 0.0;   ///< W/Hz
  bool operator==(const NoiseTablePoint&) const = default;
};

struct DetectorConfig {
  double transimpedance_gain_nominal = 1e6;  ///< V/A
  double gain_headroom_factor = 0.5;         ///< impedance matching into the analyzer halves the gain
  double gain_uncertainty_rel = 0.10;
  double quantum_efficiency = 0.88;
  double analyzer_impedance_R = 50.0;    ///< ohm
  double electronic_noise_floor = 6e-15; ///< W/Hz, the A coefficient
  double technical_noise_coef = 4e-7;    ///< W/(Hz W^2), the C coefficient
  std::vector<NoiseTablePoint> electronic_noise_table;  ///< optional A(freq); overrides the floor
  PhotocurrentConvention photocurrent_convention = PhotocurrentConvention::Physical;

  double effective_gain = 0.0;  ///< V/A, populated by validate_config()

  bool operator==(const DetectorConfig&) const = default;
};

/// Bias field and modulation. Any two of the three quantities determine the
/// third; validate_config() fills in the missing one and checks consistency.
struct FieldConfig {
  std::optional<double> b_field;          ///< T
  std::optional<double> modulation_freq;  ///< Hz (Omega_m / 2 pi)
  std::optional<double> detuning_delta;   ///< rad/s, Omega_m - 2 Omega_L

  bool operator==(const FieldConfig&) const = default;
};

struct SimulationConfig {
  double phi0 = 6.0e-4;             ///< rad
  double probe_power = 80.5e-6;     ///< W
  double sample_rate = 300e3;       ///< Hz
  double duration = 1.0;            ///< s
  double rbw = 30.0;                ///< Hz
  double vbw = 30.0;                ///< Hz
  double span = 40e3;               ///< Hz, full analyzer span around the modulation frequency
  double bg_window = 4e3;           ///< Hz
  double lockin_bandwidth = 20.0;   ///< Hz
  int demod_points = 41;
  double demod_half_span = 0.0;     ///< Hz; 0 selects 5 linewidths
  int psd_oversample = 4;
  SlopeConvention slope_convention = SlopeConvention::Nominal;

  bool operator==(const SimulationConfig&) const = default;
};

struct ScanConfig {
  std::vector<double> powers{0.0, 10e-6, 20e-6, 50e-6, 100e-6, 200e-6, 400e-6, 700e-6};  ///< W
  double freq_lo = 10e3;        ///< Hz
  double freq_hi = 140e3;       ///< Hz, below Nyquist
  double bin_width = 10e3;      ///< Hz
  double report_freq = 48.5e3;  ///< Hz
  double duration = 0.5;        ///< s
  std::vector<double> snl_k{1.0, 2.0, 4.0};
  std::string plot_tag = "fig6";

  bool operator==(const ScanConfig&) const = default;
};

/// Probe-power response of the resonance used by the sensitivity sweep:
/// phi0(P) = phi0 * P / (P + phi0_saturation_power) and
/// gamma(P) = relaxation_gamma + gamma_broadening * P.
struct SweepConfig {
  std::vector<double> powers{10e-6, 15e-6, 20e-6, 30e-6, 40e-6, 50e-6, 65e-6, 80e-6,
                             100e-6, 130e-6, 170e-6, 220e-6, 300e-6, 450e-6, 700e-6};
  double phi0_saturation_power = 10e-6;   ///< W
  double gamma_broadening = 2e5;          ///< Hz/W

  bool operator==(const SweepConfig&) const = default;
};

struct ExperimentConfig {
  AtomConfig atom;
  DetectorConfig detector;
  FieldConfig field;
  SimulationConfig sim;
  ScanConfig scan;
  SweepConfig sweep;

  bool operator==(const ExperimentConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Units

enum class Dim {
  None,
  Tesla,
  Hertz,
  Watt,
  Meter,
  Ohm,
  VoltPerAmp,
  WattPerHertz,
  TechnicalCoef,
  PerCubicMeter,
  Second,
  Radian,
  RadPerSecond,
  HertzPerWatt,
};

namespace detail {

struct UnitDef {
  std::string_view symbol;
  Dim dim;
  double factor;
};

inline constexpr UnitDef kUnits[] = {
    {"T", Dim::Tesla, 1.0},          {"mT", Dim::Tesla, 1e-3},
    {"uT", Dim::Tesla, 1e-6},        {"nT", Dim::Tesla, 1e-9},
    {"Hz", Dim::Hertz, 1.0},         {"kHz", Dim::Hertz, 1e3},
    {"MHz", Dim::Hertz, 1e6},        {"W", Dim::Watt, 1.0},
    {"mW", Dim::Watt, 1e-3},         {"uW", Dim::Watt, 1e-6},
    {"nW", Dim::Watt, 1e-9},         {"m", Dim::Meter, 1.0},
    {"cm", Dim::Meter, 1e-2},        {"mm", Dim::Meter, 1e-3},
    {"nm", Dim::Meter, 1e-9},        {"ohm", Dim::Ohm, 1.0},
    {"V/A", Dim::VoltPerAmp, 1.0},   {"W/Hz", Dim::WattPerHertz, 1.0},
    {"mW/Hz", Dim::WattPerHertz, 1e-3},
    {"W/Hz/W^2", Dim::TechnicalCoef, 1.0},
    {"m^-3", Dim::PerCubicMeter, 1.0},
    {"cm^-3", Dim::PerCubicMeter, 1e6},
    {"s", Dim::Second, 1.0},         {"ms", Dim::Second, 1e-3},
    {"rad", Dim::Radian, 1.0},       {"mrad", Dim::Radian, 1e-3},
    {"urad", Dim::Radian, 1e-6},     {"rad/s", Dim::RadPerSecond, 1.0},
    {"Hz/W", Dim::HertzPerWatt, 1.0},
};

inline std::string_view si_symbol(Dim d) {
  switch (d) {
    case Dim::None: return "";
    case Dim::Tesla: return "T";
    case Dim::Hertz: return "Hz";
    case Dim::Watt: return "W";
    case Dim::Meter: return "m";
    case Dim::Ohm: return "ohm";
    case Dim::VoltPerAmp: return "V/A";
    case Dim::WattPerHertz: return "W/Hz";
    case Dim::TechnicalCoef: return "W/Hz/W^2";
    case Dim::PerCubicMeter: return "m^-3";
    case Dim::Second: return "s";
    case Dim::Radian: return "rad";
    case Dim::RadPerSecond: return "rad/s";
    case Dim::HertzPerWatt: return "Hz/W";
  }
  return "";
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_number(const std::string& key, const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": cannot parse number '" + tok + "'");
  }
  return v;
}

inline double unit_factor(const std::string& key, Dim dim, const std::string& unit) {
  if (unit.empty()) return 1.0;
  for (const auto& u : kUnits) {
    if (u.symbol == unit) {
      if (u.dim != dim) throw ConfigError(key + ": unit '" + unit + "' has the wrong dimension");
      return u.factor;
    }
  }
  throw ConfigError(key + ": unknown unit '" + unit + "'");
}

/// Splits "1.5, 2, 3 uW" into numbers and a trailing unit.
inline std::pair<std::vector<std::string>, std::string> split_values(const std::string& rhs) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : rhs) {
    if (ch == ',') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(trim(cur));
  std::string unit;
  auto& last = parts.back();
  if (const auto sp = last.find_first_of(" \t"); sp != std::string::npos) {
    unit = trim(last.substr(sp));
    last = trim(last.substr(0, sp));
  }
  return {parts, unit};
}

inline double parse_scalar(const std::string& key, Dim dim, const std::string& rhs) {
  auto [parts, unit] = split_values(rhs);
  if (parts.size() != 1) throw ConfigError(key + ": expected a single value");
  return parse_number(key, parts[0]) * unit_factor(key, dim, unit);
}

inline std::vector<double> parse_list(const std::string& key, Dim dim, const std::string& rhs) {
  auto [parts, unit] = split_values(rhs);
  const double f = unit_factor(key, dim, unit);
  std::vector<double> out;
  out.reserve(parts.size());
  for (const auto& p : parts) out.push_back(parse_number(key, p) * f);
  return out;
}

inline std::string scalar_text(double v, Dim d) {
  std::string s = format_double(v);
  if (const auto sym = si_symbol(d); !sym.empty()) {
    s += ' ';
    s += sym;
  }
  return s;
}

inline std::string list_text(const std::vector<double>& v, Dim d) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  if (const auto sym = si_symbol(d); !sym.empty()) {
    s += ' ';
    s += sym;
  }
  return s;
}

struct KeySpec {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  /// Empty optional means "not set" and the key is omitted on serialization.
  std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

template <class Member>
KeySpec scalar_key(std::string name, Dim dim, Member member) {
  return {name,
          [name, dim, member](ExperimentConfig& c, const std::string& rhs) {
            std::invoke(member, c) = parse_scalar(name, dim, rhs);
          },
          [dim, member](const ExperimentConfig& c) -> std::optional<std::string> {
            return scalar_text(std::invoke(member, c), dim);
          }};
}

template <class Member>
KeySpec optional_key(std::string name, Dim dim, Member member) {
  return {name,
          [name, dim, member](ExperimentConfig& c, const std::string& rhs) {
            std::invoke(member, c) = parse_scalar(name, dim, rhs);
          },
          [dim, member](const ExperimentConfig& c) -> std::optional<std::string> {
            const auto& v = std::invoke(member, c);
            if (!v) return std::nullopt;
            return scalar_text(*v, dim);
          }};
}

template <class Member>
KeySpec int_key(std::string name, Member member) {
  return {name,
          [name, member](ExperimentConfig& c, const std::string& rhs) {
            const double v = parse_scalar(name, Dim::None, rhs);
            if (v != std::floor(v)) throw ConfigError(name + ": expected an integer");
            std::invoke(member, c) = static_cast<int>(v);
          },
          [member](const ExperimentConfig& c) -> std::optional<std::string> {
            return std::to_string(std::invoke(member, c));
          }};
}

template <class Member>
KeySpec list_key(std::string name, Dim dim, Member member) {
  return {name,
          [name, dim, member](ExperimentConfig& c, const std::string& rhs) {
            std::invoke(member, c) = parse_list(name, dim, rhs);
          },
          [dim, member](const ExperimentConfig& c) -> std::optional<std::string> {
            return list_text(std::invoke(member, c), dim);
          }};
}

inline std::vector<KeySpec> make_key_registry() {
  using E = ExperimentConfig;
  std::vector<KeySpec> k;
  k.push_back(scalar_key("g_F", Dim::None, [](auto& c) -> auto& { return c.atom.g_f; }));
  k.push_back(scalar_key("density_n", Dim::PerCubicMeter, [](auto& c) -> auto& { return c.atom.density_n; }));
  k.push_back(scalar_key("cell_radius", Dim::Meter, [](auto& c) -> auto& { return c.atom.cell_radius; }));
  k.push_back(scalar_key("relaxation_gamma", Dim::Hertz, [](auto& c) -> auto& { return c.atom.relaxation_gamma; }));
  k.push_back(scalar_key("probe_wavelength", Dim::Meter, [](auto& c) -> auto& { return c.atom.probe_wavelength; }));

  k.push_back(scalar_key("transimpedance_gain", Dim::VoltPerAmp,
                         [](auto& c) -> auto& { return c.detector.transimpedance_gain_nominal; }));
  k.push_back(scalar_key("gain_headroom_factor", Dim::None,
                         [](auto& c) -> auto& { return c.detector.gain_headroom_factor; }));
  k.push_back(scalar_key("gain_uncertainty_rel", Dim::None,
                         [](auto& c) -> auto& { return c.detector.gain_uncertainty_rel; }));
  k.push_back(scalar_key("quantum_efficiency", Dim::None,
                         [](auto& c) -> auto& { return c.detector.quantum_efficiency; }));
  k.push_back(scalar_key("analyzer_impedance", Dim::Ohm,
                         [](auto& c) -> auto& { return c.detector.analyzer_impedance_R; }));
  k.push_back(scalar_key("electronic_noise_floor", Dim::WattPerHertz,
                         [](auto& c) -> auto& { return c.detector.electronic_noise_floor; }));
  k.push_back(scalar_key("technical_noise_coef", Dim::TechnicalCoef,
                         [](auto& c) -> auto& { return c.detector.technical_noise_coef; }));
  k.push_back({"electronic_noise_table",
               [](E& c, const std::string& rhs) {
                 // "f0:psd0, f1:psd1, ..." in Hz and W/Hz
                 c.detector.electronic_noise_table.clear();
                 auto [parts, unit] = split_values(rhs);
                 if (!unit.empty()) throw ConfigError("electronic_noise_table: values are SI, no unit allowed");
                 for (const auto& p : parts) {
                   const auto colon = p.find(':');
                   if (colon == std::string::npos)
                     throw ConfigError("electronic_noise_table: expected freq:psd, got '" + p + "'");
                   c.detector.electronic_noise_table.push_back(
                       {parse_number("electronic_noise_table", trim(p.substr(0, colon))),
                        parse_number("electronic_noise_table", trim(p.substr(colon + 1)))});
                 }
               },
               [](const E& c) -> std::optional<std::string> {
                 if (c.detector.electronic_noise_table.empty()) return std::nullopt;
                 std::string s;
                 for (std::size_t i = 0; i < c.detector.electronic_noise_table.size(); ++i) {
                   if (i) s += ", ";
                   s += format_double(c.detector.electronic_noise_table[i].freq) + ":" +
                        format_double(c.detector.electronic_noise_table[i].psd);
                 }
                 return s;
               }});
  k.push_back({"photocurrent_convention",
               [](E& c, const std::string& rhs) {
                 if (rhs == "physical") c.detector.photocurrent_convention = PhotocurrentConvention::Physical;
                 else if (rhs == "as_printed") c.detector.photocurrent_convention = PhotocurrentConvention::AsPrinted;
                 else throw ConfigError("photocurrent_convention: expected physical|as_printed, got '" + rhs + "'");
               },
               [](const E& c) -> std::optional<std::string> {
                 return c.detector.photocurrent_convention == PhotocurrentConvention::Physical ? "physical"
                                                                                              : "as_printed";
               }});

  k.push_back(optional_key("b_field", Dim::Tesla, [](auto& c) -> auto& { return c.field.b_field; }));
  k.push_back(optional_key("modulation_freq", Dim::Hertz, [](auto& c) -> auto& { return c.field.modulation_freq; }));
  k.push_back(optional_key("detuning_delta", Dim::RadPerSecond, [](auto& c) -> auto& { return c.field.detuning_delta; }));

  k.push_back(scalar_key("phi0", Dim::Radian, [](auto& c) -> auto& { return c.sim.phi0; }));
  k.push_back(scalar_key("probe_power", Dim::Watt, [](auto& c) -> auto& { return c.sim.probe_power; }));
  k.push_back(scalar_key("sample_rate", Dim::Hertz, [](auto& c) -> auto& { return c.sim.sample_rate; }));
  k.push_back(scalar_key("duration", Dim::Second, [](auto& c) -> auto& { return c.sim.duration; }));
  k.push_back(scalar_key("rbw", Dim::Hertz, [](auto& c) -> auto& { return c.sim.rbw; }));
  k.push_back(scalar_key("vbw", Dim::Hertz, [](auto& c) -> auto& { return c.sim.vbw; }));
  k.push_back(scalar_key("span", Dim::Hertz, [](auto& c) -> auto& { return c.sim.span; }));
  k.push_back(scalar_key("bg_window", Dim::Hertz, [](auto& c) -> auto& { return c.sim.bg_window; }));
  k.push_back(scalar_key("lockin_bandwidth", Dim::Hertz, [](auto& c) -> auto& { return c.sim.lockin_bandwidth; }));
  k.push_back(int_key("demod_points", [](auto& c) -> auto& { return c.sim.demod_points; }));
  k.push_back(scalar_key("demod_half_span", Dim::Hertz, [](auto& c) -> auto& { return c.sim.demod_half_span; }));
  k.push_back(int_key("psd_oversample", [](auto& c) -> auto& { return c.sim.psd_oversample; }));
  k.push_back({"slope_convention",
               [](E& c, const std::string& rhs) {
                 if (rhs == "nominal") c.sim.slope_convention = SlopeConvention::Nominal;
                 else if (rhs == "derived") c.sim.slope_convention = SlopeConvention::Derived;
                 else throw ConfigError("slope_convention: expected nominal|derived, got '" + rhs + "'");
               },
               [](const E& c) -> std::optional<std::string> {
                 return c.sim.slope_convention == SlopeConvention::Nominal ? "nominal" : "derived";
               }});

  k.push_back(list_key("scan_powers", Dim::Watt, [](auto& c) -> auto& { return c.scan.powers; }));
  k.push_back(scalar_key("scan_freq_lo", Dim::Hertz, [](auto& c) -> auto& { return c.scan.freq_lo; }));
  k.push_back(scalar_key("scan_freq_hi", Dim::Hertz, [](auto& c) -> auto& { return c.scan.freq_hi; }));
  k.push_back(scalar_key("scan_bin_width", Dim::Hertz, [](auto& c) -> auto& { return c.scan.bin_width; }));
  k.push_back(scalar_key("scan_report_freq", Dim::Hertz, [](auto& c) -> auto& { return c.scan.report_freq; }));
  k.push_back(scalar_key("scan_duration", Dim::Second, [](auto& c) -> auto& { return c.scan.duration; }));
  k.push_back(list_key("snl_k", Dim::None, [](auto& c) -> auto& { return c.scan.snl_k; }));
  k.push_back({"plot_tag", [](E& c, const std::string& rhs) { c.scan.plot_tag = rhs; },
               [](const E& c) -> std::optional<std::string> { return c.scan.plot_tag; }});

  k.push_back(list_key("sweep_powers", Dim::Watt, [](auto& c) -> auto& { return c.sweep.powers; }));
  k.push_back(scalar_key("phi0_saturation_power", Dim::Watt,
                         [](auto& c) -> auto& { return c.sweep.phi0_saturation_power; }));
  k.push_back(scalar_key("gamma_broadening", Dim::HertzPerWatt,
                         [](auto& c) -> auto& { return c.sweep.gamma_broadening; }));
  return k;
}

inline const std::vector<KeySpec>& key_registry() {
  static const std::vector<KeySpec> reg = make_key_registry();
  return reg;
}

inline const KeySpec& find_key(const std::string& name) {
  for (const auto& k : key_registry())
    if (k.name == name) return k;
  throw ConfigError("unknown configuration key '" + name + "'");
}

inline std::string env_name(std::string_view prefix, const std::string& key) {
  std::string s(prefix);
  for (char ch : key) s += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace detail

/// Prefix for environment-variable overrides, e.g. AMOR_PROBE_POWER="100 uW".
inline constexpr std::string_view kEnvPrefix = "AMOR_";

/// Names of every accepted configuration key.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : detail::key_registry()) out.push_back(k.name);
  return out;
}

/// Sets one key from the right-hand side of a `key = value unit` line.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& rhs) {
  detail::find_key(key).set(cfg, detail::trim(rhs));
}

/// Parses `key = value unit` text. Lines may carry `#` comments. Values are
/// converted to SI here and nowhere else.
inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value [unit]'");
    }
    set_config_value(base, detail::trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return base;
}

inline ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open configuration file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// Applies AMOR_<KEY> environment overrides (key upper-cased).
inline void apply_env_overrides(ExperimentConfig& cfg, std::string_view prefix = kEnvPrefix) {
  for (const auto& k : detail::key_registry()) {
    if (const char* v = std::getenv(detail::env_name(prefix, k.name).c_str())) {
      k.set(cfg, detail::trim(v));
    }
  }
}

/// Writes every key in SI units with round-trip precision.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : detail::key_registry()) {
    if (const auto v = k.get(cfg)) out += k.name + " = " + *v + "\n";
  }
  return out;
}

/// Key/value view used by manifests and reports.
inline std::map<std::string, std::string> config_entries(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& k : detail::key_registry()) {
    if (const auto v = k.get(cfg)) out[k.name] = *v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void require(bool ok, const std::string& field, const std::string& what, double value) {
  if (!ok) throw ConfigError(field + " " + what + ": " + format_double(value));
}

inline void require_grid(const std::vector<double>& g, const std::string& field, bool allow_zero) {
  if (g.empty()) throw ConfigError(field + " must be nonempty");
  for (std::size_t i = 0; i < g.size(); ++i) {
    require(allow_zero ? g[i] >= 0.0 : g[i] > 0.0, field, allow_zero ? "must be >= 0" : "must be > 0", g[i]);
    if (i > 0) require(g[i] > g[i - 1], field, "must be strictly increasing at", g[i]);
  }
}

}  // namespace detail

/// Angular rate 2*g_F*mu_B/hbar per tesla: the doubled Larmor frequency in rad/s per T.
inline double doubled_larmor_rate(double g_f, const PhysicalConstants& pc = kConstants) {
  return 2.0 * g_f * pc.bohr_magneton / pc.hbar;
}

/// Checks every invariant and fills derived quantities (atom number, optical
/// frequency, effective gain, the missing member of the field triple).
/// Throws ConfigError naming the first violated field and its value.
inline ExperimentConfig validate_config(ExperimentConfig cfg, const PhysicalConstants& pc = kConstants) {
  using detail::require;
  auto& a = cfg.atom;
  require(a.g_f != 0.0 && std::isfinite(a.g_f), "g_F", "must be nonzero", a.g_f);
  require(a.density_n > 0.0, "density_n", "must be > 0", a.density_n);
  require(a.cell_radius > 0.0, "cell_radius", "must be > 0", a.cell_radius);
  require(a.relaxation_gamma > 0.0, "relaxation_gamma", "must be > 0", a.relaxation_gamma);
  require(a.probe_wavelength > 0.0, "probe_wavelength", "must be > 0", a.probe_wavelength);
  a.atom_number = a.density_n * (4.0 / 3.0) * std::numbers::pi * std::pow(a.cell_radius, 3);
  a.probe_frequency = pc.speed_of_light / a.probe_wavelength;

  auto& d = cfg.detector;
  require(d.quantum_efficiency > 0.0 && d.quantum_efficiency <= 1.0, "quantum_efficiency", "out of (0,1]",
          d.quantum_efficiency);
  require(d.analyzer_impedance_R > 0.0, "analyzer_impedance", "must be > 0", d.analyzer_impedance_R);
  require(d.electronic_noise_floor >= 0.0, "electronic_noise_floor", "must be >= 0", d.electronic_noise_floor);
  require(d.transimpedance_gain_nominal > 0.0, "transimpedance_gain", "must be > 0", d.transimpedance_gain_nominal);
  require(d.gain_headroom_factor > 0.0, "gain_headroom_factor", "must be > 0", d.gain_headroom_factor);
  require(d.gain_uncertainty_rel >= 0.0 && d.gain_uncertainty_rel < 1.0, "gain_uncertainty_rel", "out of [0,1)",
          d.gain_uncertainty_rel);
  require(d.technical_noise_coef >= 0.0, "technical_noise_coef", "must be >= 0", d.technical_noise_coef);
  for (std::size_t i = 0; i < d.electronic_noise_table.size(); ++i) {
    const auto& p = d.electronic_noise_table[i];
    require(p.freq >= 0.0, "electronic_noise_table", "frequency must be >= 0", p.freq);
    require(p.psd >= 0.0, "electronic_noise_table", "psd must be >= 0", p.psd);
    if (i > 0) {
      require(p.freq > d.electronic_noise_table[i - 1].freq, "electronic_noise_table",
              "frequencies must increase at", p.freq);
    }
  }
  d.effective_gain = d.transimpedance_gain_nominal * d.gain_headroom_factor;

  auto& f = cfg.field;
  const double rate = doubled_larmor_rate(a.g_f, pc);
  if (f.b_field) require(*f.b_field >= 0.0, "b_field", "must be >= 0", *f.b_field);
  if (f.modulation_freq) require(*f.modulation_freq > 0.0, "modulation_freq", "must be > 0", *f.modulation_freq);
  if (f.b_field && f.modulation_freq) {
    const double delta = kTwoPi * *f.modulation_freq - rate * *f.b_field;
    if (f.detuning_delta) {
      const double tol = 1e-9 * kTwoPi * *f.modulation_freq + 1e-9;
      require(std::abs(*f.detuning_delta - delta) <= tol, "detuning_delta",
              "inconsistent with b_field and modulation_freq", *f.detuning_delta);
    } else {
      f.detuning_delta = delta;
    }
  } else if (f.b_field) {
    const double delta = f.detuning_delta.value_or(0.0);
    const double omega_m = rate * *f.b_field + delta;
    require(omega_m > 0.0, "detuning_delta", "gives a non-positive modulation frequency", delta);
    f.modulation_freq = omega_m / kTwoPi;
    f.detuning_delta = delta;
  } else if (f.modulation_freq) {
    const double delta = f.detuning_delta.value_or(0.0);
    const double b = (kTwoPi * *f.modulation_freq - delta) / rate;
    require(b >= 0.0, "detuning_delta", "implies a negative field", delta);
    f.b_field = b;
    f.detuning_delta = delta;
  }

  auto& s = cfg.sim;
  require(s.phi0 >= 0.0, "phi0", "must be >= 0", s.phi0);
  require(s.probe_power >= 0.0, "probe_power", "must be >= 0", s.probe_power);
  require(s.sample_rate > 0.0, "sample_rate", "must be > 0", s.sample_rate);
  require(s.duration > 0.0, "duration", "must be > 0", s.duration);
  require(s.rbw > 0.0, "rbw", "must be > 0", s.rbw);
  require(s.vbw > 0.0, "vbw", "must be > 0", s.vbw);
  require(s.span > 0.0, "span", "must be > 0", s.span);
  require(s.bg_window > 0.0, "bg_window", "must be > 0", s.bg_window);
  require(s.lockin_bandwidth > 0.0, "lockin_bandwidth", "must be > 0", s.lockin_bandwidth);
  require(s.demod_points >= 1, "demod_points", "must be >= 1", s.demod_points);
  require(s.demod_half_span >= 0.0, "demod_half_span", "must be >= 0", s.demod_half_span);
  require(s.psd_oversample >= 1, "psd_oversample", "must be >= 1", s.psd_oversample);

  auto& sc = cfg.scan;
  detail::require_grid(sc.powers, "scan_powers", true);
  require(sc.freq_lo >= 0.0, "scan_freq_lo", "must be >= 0", sc.freq_lo);
  require(sc.freq_hi > sc.freq_lo, "scan_freq_hi", "must exceed scan_freq_lo", sc.freq_hi);
  require(sc.bin_width > 0.0, "scan_bin_width", "must be > 0", sc.bin_width);
  require(sc.duration > 0.0, "scan_duration", "must be > 0", sc.duration);
  detail::require_grid(sc.snl_k, "snl_k", false);
  require(sc.snl_k.front() >= 1.0, "snl_k", "must be >= 1", sc.snl_k.front());
  if (sc.plot_tag.empty()) throw ConfigError("plot_tag must be nonempty");

  auto& sw = cfg.sweep;
  detail::require_grid(sw.powers, "sweep_powers", false);
  require(sw.phi0_saturation_power > 0.0, "phi0_saturation_power", "must be > 0", sw.phi0_saturation_power);
  require(sw.gamma_broadening >= 0.0, "gamma_broadening", "must be >= 0", sw.gamma_broadening);
  return cfg;
}

}  // namespace amor
