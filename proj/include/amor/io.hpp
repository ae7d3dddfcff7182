#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "amor/analysis.hpp"
#include "amor/detector.hpp"
#include "amor/error.hpp"
#include "amor/fitting.hpp"

namespace amor {

using Json = nlohmann::ordered_json;

/// Ordered key/value lines written as `# key: value` above a table.
using TableMeta = std::vector<std::pair<std::string, std::string>>;

/// A numeric table with named columns. Column names carry SI units.
struct Table {
  TableMeta meta;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw IoError("table has no column '" + name + "'");
  }
  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }
};

inline std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Writes `# key: value` lines, then the header and rows. CSV uses ',' and a
/// bare header line; plot data uses ' ' and a commented header line.
inline void write_table(const std::filesystem::path& path, const Table& t, bool plot_style = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  const char sep = plot_style ? ' ' : ',';
  for (const auto& [k, v] : t.meta) out << "# " << k << ": " << v << '\n';
  if (plot_style) out << "# ";
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? std::string(1, sep) : "") << t.columns[i];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? std::string(1, sep) : "") << format_value(row[i]);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline double parse_cell(const std::string& s, const std::filesystem::path& path) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw IoError("malformed number '" + s + "' in " + path.string());
}

/// Reads a CSV written by write_table().
inline Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto colon = line.find(": ");
      if (colon != std::string::npos) t.meta.emplace_back(line.substr(2, colon - 2), line.substr(colon + 2));
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      t.columns = cells;
      have_header = true;
      continue;
    }
    if (cells.size() != t.columns.size()) throw IoError("ragged row in " + path.string());
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_cell(c, path));
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw IoError("no header in " + path.string());
  return t;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// JSON has no infinity; unbounded limits are written as null.
inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

// ---------------------------------------------------------------------------
// Report serializers

inline Json to_json(const NoiseBudget& b) {
  return {{"detection_freq_hz", b.detection_freq},
          {"coef_elec_w_per_hz", b.coef_elec},
          {"coef_shot_w_per_hz_w", b.coef_shot},
          {"coef_tech_w_per_hz_w2", b.coef_tech}};
}

inline Json to_json(const LorentzianFit& f) {
  static constexpr const char* names[6] = {"center_freq_hz", "gamma_fwhm_hz", "phi0_rad",
                                           "phase_offset_rad", "baseline_P_rad", "baseline_Q_rad"};
  const double values[6] = {f.center_freq, f.gamma_fwhm, f.phi0, f.phase_offset, f.baseline_P, f.baseline_Q};
  Json params = Json::object(), errs = Json::object(), cov = Json::array();
  for (int i = 0; i < 6; ++i) {
    params[names[i]] = values[i];
    errs[names[i]] = f.stderr_of(i);
    Json row = Json::array();
    for (int j = 0; j < 6; ++j) row.push_back(f.covariance(i, j));
    cov.push_back(std::move(row));
  }
  return {{"parameters", params},
          {"standard_errors", errs},
          {"covariance", cov},
          {"residual_rms_rad", f.residual_rms},
          {"convergence",
           {{"converged", f.converged},
            {"termination", f.termination},
            {"iterations", f.iterations},
            {"gradient_ratio", f.gradient_ratio}}},
          {"extrapolated", f.extrapolated},
          {"initial_guess_fallback", f.guess_fallback}};
}

inline Json to_json(const NoisePolyFit& f) {
  return {{"budget", to_json(f.budget)},
          {"standard_errors",
           {{"coef_elec", f.coef_stderr[0]}, {"coef_shot", f.coef_stderr[1]}, {"coef_tech", f.coef_stderr[2]}}},
          {"at_zero_bound", {{"coef_elec", f.at_bound[0]}, {"coef_shot", f.at_bound[1]}, {"coef_tech", f.at_bound[2]}}},
          {"fixed_elec", f.fixed_elec},
          {"weighted_rms", f.weighted_rms}};
}

inline Json to_json(const SnlRange& r) {
  return {{"k", r.k},
          {"p_low_w", json_number(r.p_low)},
          {"p_high_w", json_number(r.p_high)},
          {"nonempty", r.nonempty},
          {"never_snl", r.never_snl}};
}

inline Json to_json(const SensitivityReport& r) {
  return {{"gamma_fwhm_hz", r.gamma_fwhm},
          {"snr", r.snr},
          {"snr_convention", r.snr_convention},
          {"delta_B_t_per_rthz", r.delta_B},
          {"delta_B_atomic_t_per_rthz", r.delta_B_atomic},
          {"operating_power_w", r.operating_power},
          {"detection_freq_hz", r.detection_freq},
          {"snl_class", to_string(r.snl_class)},
          {"slope_convention", r.slope_convention}};
}

}  // namespace amor
