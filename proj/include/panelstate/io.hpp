#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "panelstate/errors.hpp"
#include "panelstate/model.hpp"
#include "panelstate/sampler.hpp"
#include "panelstate/simulate.hpp"

namespace panelstate::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------- formatting

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
  if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(what + ": not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline long parse_long(std::string_view s, const std::string& what) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(what + ": not an integer: '" + std::string(s) + "'");
  }
  return v;
}

// ---------------------------------------------------------------- files

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeAbort("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw RuntimeAbort("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

/// FNV-1a 64-bit digest as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_digest(const fs::path& path) { return fnv1a_hex(read_file(path)); }

// ---------------------------------------------------------------- CSV

using CsvRow = std::vector<std::string>;

/// Comma-separated fields; double quotes protect commas and quotes ("").
inline CsvRow split_csv_line(std::string_view line) {
  CsvRow out;
  std::string field;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

struct CsvTable {
  CsvRow header;
  std::vector<CsvRow> rows;

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return static_cast<int>(k);
    }
    return -1;
  }
};

inline CsvTable read_csv(const fs::path& path) {
  const std::string text = read_file(path);
  CsvTable table;
  std::size_t pos = 0;
  bool first = true;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    CsvRow row = split_csv_line(line);
    if (first) {
      table.header = std::move(row);
      first = false;
      continue;
    }
    if (row.size() != table.header.size()) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                      std::to_string(table.header.size()) + " fields, found " + std::to_string(row.size()));
    }
    table.rows.push_back(std::move(row));
  }
  if (first) throw DataError(path.string() + ": empty file");
  return table;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Accumulates CSV text.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k) text_ += ',';
      text_ += csv_field(fields[k]);
    }
    text_ += '\n';
  }

  const std::string& str() const noexcept { return text_; }

 private:
  std::string text_;
};

// ---------------------------------------------------------------- data

inline constexpr const char* kObservationsFile = "observations.csv";
inline constexpr const char* kBaselineFile = "baseline.csv";
inline constexpr const char* kTruthFile = "truth.csv";

/// Reads observations.csv and baseline.csv from `dir`. Subjects are sorted
/// by id; a treatment change is recorded on day 1 and wherever the label
/// differs from the previous day.
inline Dataset load_dataset(const fs::path& dir) {
  const CsvTable obs = read_csv(dir / kObservationsFile);
  const int c_id = obs.column("patient_id");
  const int c_day = obs.column("day");
  const int c_y = obs.column("y");
  const int c_trt = obs.column("treatment");
  if (c_id < 0 || c_day < 0 || c_y < 0 || c_trt < 0) {
    throw DataError("observations.csv must have columns patient_id,day,y,treatment");
  }
  struct Day {
    long day;
    Outcome y;
    std::string treatment;
  };
  std::map<std::string, std::vector<Day>> series;
  for (const auto& row : obs.rows) {
    const std::string& id = row[c_id];
    if (id.empty()) throw DataError("observations.csv: empty patient_id");
    const long day = parse_long(row[c_day], "observations.csv day");
    Outcome y = kMissing;
    const std::string& v = row[c_y];
    if (v == "1") {
      y = 1;
    } else if (v == "0") {
      y = 0;
    } else if (!(v.empty() || v == "NA")) {
      throw DataError("observations.csv: patient " + id + " day " + std::to_string(day) + ": y must be 0, 1 or empty");
    }
    series[id].push_back({day, y, row[c_trt]});
  }

  const CsvTable base = read_csv(dir / kBaselineFile);
  if (base.header.empty() || base.header[0] != "patient_id") {
    throw DataError("baseline.csv must start with a patient_id column");
  }
  Dataset data;
  data.covariate_names.assign(base.header.begin() + 1, base.header.end());
  if (data.covariate_names.empty()) throw DataError("baseline.csv has no covariate columns");
  std::map<std::string, Eigen::VectorXd> covariates;
  for (const auto& row : base.rows) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(row.size() - 1));
    for (std::size_t k = 1; k < row.size(); ++k) {
      x[static_cast<Eigen::Index>(k - 1)] = parse_double(row[k], "baseline.csv " + base.header[k]);
    }
    if (!covariates.emplace(row[0], std::move(x)).second) throw DataError("baseline.csv: duplicate patient " + row[0]);
  }

  for (auto& [id, days] : series) {
    std::sort(days.begin(), days.end(), [](const Day& a, const Day& b) { return a.day < b.day; });
    PatientRecord rec;
    rec.id = id;
    for (std::size_t k = 0; k < days.size(); ++k) {
      if (days[k].day != static_cast<long>(k) + 1) {
        throw DataError("patient " + id + ": days must be 1, 2, ... without gaps or repeats");
      }
      rec.y.push_back(days[k].y);
      rec.treatment_id.push_back(days[k].treatment);
      if (k > 0 && days[k].treatment != days[k - 1].treatment) {
        rec.treatment_changes.push_back(static_cast<int>(k) + 1);
      }
    }
    auto it = covariates.find(id);
    if (it == covariates.end()) throw DataError("patient " + id + " has no row in baseline.csv");
    rec.x = it->second;
    data.subjects.push_back(std::move(rec));
  }
  for (const auto& [id, x] : covariates) {
    if (!series.count(id)) throw DataError("baseline.csv patient " + id + " has no observations");
  }
  data.validate();
  return data;
}

inline void write_dataset(const Dataset& data, const fs::path& dir) {
  CsvWriter obs({"patient_id", "day", "y", "treatment"});
  for (const auto& rec : data.subjects) {
    for (int t = 1; t <= rec.length(); ++t) {
      const Outcome y = rec.y[t - 1];
      const std::string trt = rec.treatment_id.empty() ? "" : rec.treatment_id[t - 1];
      obs.row({rec.id, std::to_string(t), y == kMissing ? "" : std::to_string(static_cast<int>(y)), trt});
    }
  }
  std::vector<std::string> header{"patient_id"};
  header.insert(header.end(), data.covariate_names.begin(), data.covariate_names.end());
  CsvWriter base(header);
  for (const auto& rec : data.subjects) {
    std::vector<std::string> row{rec.id};
    for (Eigen::Index k = 0; k < rec.x.size(); ++k) row.push_back(format_double(rec.x[k]));
    base.row(row);
  }
  write_file(dir / kObservationsFile, obs.str());
  write_file(dir / kBaselineFile, base.str());
}

inline void write_truth(const std::vector<TruthRecord>& truth, const fs::path& path) {
  CsvWriter w({"patient_id", "cluster", "subtype", "true_pattern", "clumps"});
  for (const auto& t : truth) {
    std::string clumps;
    for (std::size_t k = 0; k < t.clumps.size(); ++k) {
      if (k) clumps += ';';
      clumps += std::to_string(t.clumps[k].first) + ":" + std::to_string(t.clumps[k].second);
    }
    w.row({t.id, std::to_string(t.cluster), std::to_string(t.subtype), std::to_string(t.true_pattern), clumps});
  }
  write_file(path, w.str());
}

/// patient_id -> true pattern.
inline std::map<std::string, int> read_truth_patterns(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const int c_id = t.column("patient_id");
  const int c_pat = t.column("true_pattern");
  if (c_id < 0 || c_pat < 0) throw DataError(path.string() + " must have patient_id and true_pattern columns");
  std::map<std::string, int> out;
  for (const auto& row : t.rows) {
    out[row[c_id]] = static_cast<int>(parse_long(row[c_pat], "true_pattern"));
  }
  return out;
}

// ---------------------------------------------------------------- config

namespace detail {

inline void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown config field '" + where + it.key() + "'");
  }
}

inline double get_number(const Json& j, const std::string& name) {
  if (!j.is_number()) throw ConfigError(name + " must be a number");
  return j.get<double>();
}

inline long get_integer(const Json& j, const std::string& name) {
  if (!j.is_number_integer() && !(j.is_number() && j.get<double>() == std::floor(j.get<double>()))) {
    throw ConfigError(name + " must be an integer");
  }
  return j.is_number_integer() ? j.get<long>() : static_cast<long>(j.get<double>());
}

inline bool get_bool(const Json& j, const std::string& name) {
  if (!j.is_boolean()) throw ConfigError(name + " must be true or false");
  return j.get<bool>();
}

inline Eigen::MatrixXd get_matrix(const Json& j, const std::string& name) {
  if (!j.is_array() || j.empty()) throw ConfigError(name + " must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array() || j[0].empty()) throw ConfigError(name + " must be a non-empty array of rows");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(name + " rows must all have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_number(row[static_cast<std::size_t>(c)], name);
  }
  return m;
}

inline Eigen::VectorXd get_vector(const Json& j, const std::string& name) {
  if (!j.is_array() || j.empty()) throw ConfigError(name + " must be a non-empty array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = get_number(j[k], name);
  return v;
}

inline bool is_default_preset(const Json& j) { return j.is_string() && j.get<std::string>() == "appendix_b_default"; }

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

inline Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v[k]);
  return out;
}

}  // namespace detail

struct RunConfig {
  ModelConfig model;
  McmcSettings mcmc;
};

/// Parses a config document. Missing fields take the defaults; unknown
/// fields are errors.
inline RunConfig parse_config(const Json& j) {
  using namespace detail;
  static const std::set<std::string> top{"p", "G", "W", "G_star", "S0", "m0", "delta_prior_mean", "delta_prior_cov",
                                         "M", "sigma", "L", "dirichlet_a", "n_particles", "prior_mc_draws",
                                         "events", "mcmc", "missing_propagation"};
  reject_unknown(j, top, "");
  int p = 12;
  if (j.contains("p")) p = static_cast<int>(get_integer(j["p"], "p"));
  if (p < 1) throw ConfigError("p must be >= 1");
  RunConfig rc;
  ModelConfig& c = rc.model;
  c = ModelConfig::appendix_b_default(p);
  auto matrix = [&](const char* name, Eigen::MatrixXd& target) {
    if (!j.contains(name) || is_default_preset(j[name])) return;
    target = get_matrix(j[name], name);
  };
  matrix("G", c.G);
  matrix("W", c.W);
  matrix("G_star", c.G_star);
  matrix("S0", c.S0);
  if (j.contains("m0") && !is_default_preset(j["m0"])) c.m0 = get_vector(j["m0"], "m0");
  if (j.contains("delta_prior_mean")) c.delta_prior_mean = get_vector(j["delta_prior_mean"], "delta_prior_mean");
  if (j.contains("delta_prior_cov")) c.delta_prior_cov = get_matrix(j["delta_prior_cov"], "delta_prior_cov");
  if (j.contains("M")) c.M = get_number(j["M"], "M");
  if (j.contains("sigma")) c.sigma = get_number(j["sigma"], "sigma");
  if (j.contains("L")) {
    c.L = static_cast<int>(get_integer(j["L"], "L"));
    if (c.L < 1) throw ConfigError("L must be >= 1");
    c.dirichlet_a.assign(c.L, 1.0 / 20.0);
  }
  if (j.contains("dirichlet_a")) {
    const Json& a = j["dirichlet_a"];
    if (a.is_number()) {
      c.dirichlet_a.assign(c.L, a.get<double>());
    } else {
      const Eigen::VectorXd v = get_vector(a, "dirichlet_a");
      c.dirichlet_a.assign(v.data(), v.data() + v.size());
    }
  }
  if (j.contains("n_particles")) c.n_particles = static_cast<int>(get_integer(j["n_particles"], "n_particles"));
  if (j.contains("prior_mc_draws")) {
    c.prior_mc_draws = static_cast<int>(get_integer(j["prior_mc_draws"], "prior_mc_draws"));
  }
  if (j.contains("missing_propagation")) {
    const Json& m = j["missing_propagation"];
    const std::string v = m.is_string() ? m.get<std::string>() : "";
    if (v == "apply_transition") {
      c.missing_propagation = MissingPropagation::kApplyTransition;
    } else if (v == "verbatim") {
      c.missing_propagation = MissingPropagation::kVerbatim;
    } else {
      throw ConfigError("missing_propagation must be \"apply_transition\" or \"verbatim\"");
    }
  }
  if (j.contains("events")) {
    const Json& e = j["events"];
    reject_unknown(e, {"r1_mean_cut", "r2_high_cut", "r2_risk_cut", "r2_ratio_cut", "r3_window"}, "events.");
    if (e.contains("r1_mean_cut")) c.events.r1_mean_cut = get_number(e["r1_mean_cut"], "events.r1_mean_cut");
    if (e.contains("r2_high_cut")) c.events.r2_high_cut = get_number(e["r2_high_cut"], "events.r2_high_cut");
    if (e.contains("r2_risk_cut")) c.events.r2_risk_cut = get_number(e["r2_risk_cut"], "events.r2_risk_cut");
    if (e.contains("r2_ratio_cut")) c.events.r2_ratio_cut = get_number(e["r2_ratio_cut"], "events.r2_ratio_cut");
    if (e.contains("r3_window")) c.events.r3_window = static_cast<int>(get_integer(e["r3_window"], "events.r3_window"));
  }
  if (j.contains("mcmc")) {
    const Json& m = j["mcmc"];
    reject_unknown(m,
                   {"n_chains", "n_iter", "burn_in", "thin", "seed", "sequential", "threads", "store_theta",
                    "theta_every", "update_delta"},
                   "mcmc.");
    McmcSettings& s = rc.mcmc;
    if (m.contains("n_chains")) s.n_chains = static_cast<int>(get_integer(m["n_chains"], "mcmc.n_chains"));
    if (m.contains("n_iter")) s.n_iter = static_cast<int>(get_integer(m["n_iter"], "mcmc.n_iter"));
    if (m.contains("burn_in")) s.burn_in = static_cast<int>(get_integer(m["burn_in"], "mcmc.burn_in"));
    if (m.contains("thin")) s.thin = static_cast<int>(get_integer(m["thin"], "mcmc.thin"));
    if (m.contains("seed")) s.seed = static_cast<std::uint64_t>(get_integer(m["seed"], "mcmc.seed"));
    if (m.contains("sequential")) s.sequential = get_bool(m["sequential"], "mcmc.sequential");
    if (m.contains("threads")) s.threads = static_cast<int>(get_integer(m["threads"], "mcmc.threads"));
    if (m.contains("store_theta")) s.store_theta = get_bool(m["store_theta"], "mcmc.store_theta");
    if (m.contains("theta_every")) s.theta_every = static_cast<int>(get_integer(m["theta_every"], "mcmc.theta_every"));
    if (m.contains("update_delta")) s.update_delta = get_bool(m["update_delta"], "mcmc.update_delta");
  }
  c.validate();
  rc.mcmc.validate();
  return rc;
}

inline RunConfig load_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j);
}

inline Json settings_to_json(const McmcSettings& s) {
  return {{"n_chains", s.n_chains},       {"n_iter", s.n_iter},           {"burn_in", s.burn_in},
          {"thin", s.thin},               {"seed", s.seed},               {"sequential", s.sequential},
          {"threads", s.threads},         {"store_theta", s.store_theta}, {"theta_every", s.theta_every},
          {"update_delta", s.update_delta}};
}

/// Fully expanded config, suitable for parse_config.
inline Json config_to_json(const RunConfig& rc) {
  using namespace detail;
  const ModelConfig& c = rc.model;
  Json j;
  j["p"] = c.p;
  j["G"] = matrix_json(c.G);
  j["W"] = matrix_json(c.W);
  j["G_star"] = matrix_json(c.G_star);
  j["S0"] = matrix_json(c.S0);
  j["m0"] = vector_json(c.m0);
  if (c.delta_prior_mean) j["delta_prior_mean"] = vector_json(*c.delta_prior_mean);
  if (c.delta_prior_cov) j["delta_prior_cov"] = matrix_json(*c.delta_prior_cov);
  j["M"] = c.M;
  j["sigma"] = c.sigma;
  j["L"] = c.L;
  j["dirichlet_a"] = c.dirichlet_a;
  j["n_particles"] = c.n_particles;
  j["prior_mc_draws"] = c.prior_mc_draws;
  j["missing_propagation"] =
      c.missing_propagation == MissingPropagation::kVerbatim ? "verbatim" : "apply_transition";
  j["events"] = {{"r1_mean_cut", c.events.r1_mean_cut},
                 {"r2_high_cut", c.events.r2_high_cut},
                 {"r2_risk_cut", c.events.r2_risk_cut},
                 {"r2_ratio_cut", c.events.r2_ratio_cut},
                 {"r3_window", c.events.r3_window}};
  j["mcmc"] = settings_to_json(rc.mcmc);
  return j;
}

inline ScenarioConfig parse_scenario(const Json& j) {
  using namespace detail;
  reject_unknown(j,
                 {"n_per_cell", "horizon", "change_day", "base_probs", "clump_prob", "clump_len_range",
                  "clumps_per_year", "missing_rate", "seed"},
                 "");
  ScenarioConfig s;
  if (j.contains("n_per_cell")) s.n_per_cell = static_cast<int>(get_integer(j["n_per_cell"], "n_per_cell"));
  if (j.contains("horizon")) s.horizon = static_cast<int>(get_integer(j["horizon"], "horizon"));
  if (j.contains("change_day")) s.change_day = static_cast<int>(get_integer(j["change_day"], "change_day"));
  if (j.contains("base_probs")) {
    const Json& b = j["base_probs"];
    auto bad = [] { return ConfigError("base_probs must be a 2 x 2 x 2 array [group][subtype][period]"); };
    if (!b.is_array() || b.size() != 2) throw bad();
    for (std::size_t g = 0; g < 2; ++g) {
      if (!b[g].is_array() || b[g].size() != 2) throw bad();
      for (std::size_t k = 0; k < 2; ++k) {
        if (!b[g][k].is_array() || b[g][k].size() != 2) throw bad();
        for (std::size_t y = 0; y < 2; ++y) s.base_probs[g][k][y] = get_number(b[g][k][y], "base_probs");
      }
    }
  }
  if (j.contains("clump_prob")) s.clump_prob = get_number(j["clump_prob"], "clump_prob");
  if (j.contains("clump_len_range")) {
    const Json& r = j["clump_len_range"];
    if (!r.is_array() || r.size() != 2) throw ConfigError("clump_len_range must be [min, max]");
    s.clump_len_min = static_cast<int>(get_integer(r[0], "clump_len_range"));
    s.clump_len_max = static_cast<int>(get_integer(r[1], "clump_len_range"));
  }
  if (j.contains("clumps_per_year")) {
    s.clumps_per_year = static_cast<int>(get_integer(j["clumps_per_year"], "clumps_per_year"));
  }
  if (j.contains("missing_rate")) s.missing_rate = get_number(j["missing_rate"], "missing_rate");
  if (j.contains("seed")) s.seed = static_cast<std::uint64_t>(get_integer(j["seed"], "seed"));
  s.validate();
  return s;
}

inline Json scenario_to_json(const ScenarioConfig& s) {
  Json probs = Json::array();
  for (const auto& g : s.base_probs) {
    Json gj = Json::array();
    for (const auto& k : g) gj.push_back({k[0], k[1]});
    probs.push_back(gj);
  }
  return {{"n_per_cell", s.n_per_cell},
          {"horizon", s.horizon},
          {"change_day", s.change_day},
          {"base_probs", probs},
          {"clump_prob", s.clump_prob},
          {"clump_len_range", {s.clump_len_min, s.clump_len_max}},
          {"clumps_per_year", s.clumps_per_year},
          {"missing_rate", s.missing_rate},
          {"seed", s.seed}};
}

inline ScenarioConfig load_scenario(const fs::path& path) {
  try {
    return parse_scenario(Json::parse(read_file(path)));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------- pattern tables

inline void write_g_probs(const Dataset& data, const std::vector<PriorPatternTable>& tables, const fs::path& path) {
  CsvWriter w({"patient_id", "pattern", "probability"});
  for (int i = 0; i < data.size(); ++i) {
    for (std::size_t l = 0; l < tables[i].g_probs.size(); ++l) {
      w.row({data.subjects[i].id, std::to_string(l), format_double(tables[i].g_probs[l])});
    }
  }
  write_file(path, w.str());
}

inline std::vector<PriorPatternTable> read_g_probs(const Dataset& data, int L, const fs::path& path) {
  const CsvTable t = read_csv(path);
  const int c_id = t.column("patient_id");
  const int c_l = t.column("pattern");
  const int c_p = t.column("probability");
  if (c_id < 0 || c_l < 0 || c_p < 0) throw DataError(path.string() + ": expected patient_id,pattern,probability");
  std::map<std::string, std::vector<double>> by_id;
  for (const auto& row : t.rows) {
    auto& v = by_id[row[c_id]];
    if (v.empty()) v.assign(L, -1.0);
    const long l = parse_long(row[c_l], "pattern");
    if (l < 0 || l >= L) throw DataError(path.string() + ": pattern out of range");
    v[l] = parse_double(row[c_p], "probability");
  }
  std::vector<PriorPatternTable> out(data.size());
  for (int i = 0; i < data.size(); ++i) {
    auto it = by_id.find(data.subjects[i].id);
    if (it == by_id.end()) throw DataError(path.string() + ": no entries for patient " + data.subjects[i].id);
    for (double v : it->second) {
      if (!(v > 0.0)) throw DataError(path.string() + ": probabilities must be positive for every pattern");
    }
    out[i].g_probs = it->second;
  }
  return out;
}

// ---------------------------------------------------------------- chain stores

inline constexpr char kThetaMagic[8] = {'P', 'S', 'T', 'H', 'E', 'T', 'A', '1'};

/// Trajectory snapshots of one subject: 16-byte header (magic, uint32 T,
/// uint32 p) then each snapshot as T x p row-major little-endian doubles.
inline std::string encode_theta(const std::vector<Eigen::MatrixXd>& snapshots, int T, int p) {
  std::string out(kThetaMagic, 8);
  const auto put32 = [&out](std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out += static_cast<char>((v >> (8 * k)) & 0xFF);
  };
  put32(static_cast<std::uint32_t>(T));
  put32(static_cast<std::uint32_t>(p));
  for (const auto& m : snapshots) {
    for (int t = 0; t < T; ++t) {
      for (int c = 0; c < p; ++c) {
        const double v = m(t, c);
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int k = 0; k < 8; ++k) out += static_cast<char>((bits >> (8 * k)) & 0xFF);
      }
    }
  }
  return out;
}

inline std::vector<Eigen::MatrixXd> decode_theta(std::string_view bytes, const std::string& what) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kThetaMagic, 8) != 0) {
    throw DataError(what + ": not a trajectory snapshot file");
  }
  const auto get32 = [&bytes](std::size_t at) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + k])) << (8 * k);
    return v;
  };
  const int T = static_cast<int>(get32(8));
  const int p = static_cast<int>(get32(12));
  const std::size_t block = static_cast<std::size_t>(T) * p * 8;
  if (block == 0 || (bytes.size() - 16) % block != 0) throw DataError(what + ": truncated snapshot file");
  const std::size_t n = (bytes.size() - 16) / block;
  std::vector<Eigen::MatrixXd> out(n, Eigen::MatrixXd(T, p));
  std::size_t at = 16;
  for (std::size_t s = 0; s < n; ++s) {
    for (int t = 0; t < T; ++t) {
      for (int c = 0; c < p; ++c) {
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + k])) << (8 * k);
        at += 8;
        std::memcpy(&out[s](t, c), &bits, 8);
      }
    }
  }
  return out;
}

inline fs::path chain_dir(const fs::path& run, int chain) { return run / ("chain_" + std::to_string(chain)); }

inline void write_chain(const ChainStore& s, const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::string> header{"draw", "iteration"};
  header.insert(header.end(), data.covariate_names.begin(), data.covariate_names.end());
  CsvWriter delta(header);
  CsvWriter patterns({"draw", "patient_id", "R"});
  CsvWriter partition({"draw", "patient_id", "label"});
  CsvWriter atoms({"draw", "cluster", "pattern", "xi"});
  for (int k = 0; k < s.draws(); ++k) {
    std::vector<std::string> row{std::to_string(k), std::to_string(s.iterations[k])};
    for (Eigen::Index c = 0; c < s.delta[k].size(); ++c) row.push_back(format_double(s.delta[k][c]));
    delta.row(row);
    for (int i = 0; i < data.size(); ++i) {
      patterns.row({std::to_string(k), data.subjects[i].id, std::to_string(s.patterns[k][i])});
      partition.row({std::to_string(k), data.subjects[i].id, std::to_string(s.partitions[k][i])});
    }
    for (std::size_t h = 0; h < s.atoms[k].size(); ++h) {
      for (std::size_t l = 0; l < s.atoms[k][h].size(); ++l) {
        atoms.row({std::to_string(k), std::to_string(h), std::to_string(l), format_double(s.atoms[k][h][l])});
      }
    }
  }
  write_file(dir / "delta.csv", delta.str());
  write_file(dir / "patterns.csv", patterns.str());
  write_file(dir / "partition.csv", partition.str());
  write_file(dir / "atoms.csv", atoms.str());

  CsvWriter acceptance({"patient_id", "proposed", "accepted"});
  for (int i = 0; i < data.size(); ++i) {
    acceptance.row({data.subjects[i].id, std::to_string(s.proposed[i]), std::to_string(s.accepted[i])});
  }
  write_file(dir / "acceptance.csv", acceptance.str());

  Json status;
  status["chain"] = s.chain_id;
  status["sweeps_completed"] = s.sweeps_completed;
  status["draws"] = s.draws();
  status["low_ess_steps"] = s.low_ess_steps;
  status["allocation_fallbacks"] = s.allocation_fallbacks;
  status["max_clusters"] = s.max_clusters;
  status["aborted"] = s.aborted;
  status["abort_message"] = s.abort_message;
  write_file(dir / "chain.json", status.dump(2) + "\n");

  if (!s.theta.empty()) {
    CsvWriter index({"snapshot", "draw"});
    for (std::size_t k = 0; k < s.theta_draws.size(); ++k) {
      index.row({std::to_string(k), std::to_string(s.theta_draws[k])});
    }
    write_file(dir / "theta" / "index.csv", index.str());
    for (int i = 0; i < data.size(); ++i) {
      std::vector<Eigen::MatrixXd> snaps;
      for (const auto& snap : s.theta) snaps.push_back(snap[i]);
      const auto& rec = data.subjects[i];
      write_file(dir / "theta" / (rec.id + ".bin"),
                 encode_theta(snaps, rec.length(), static_cast<int>(snaps.front().cols())));
    }
  }
}

/// Reads a chain written by write_chain; subjects are matched by id.
inline ChainStore read_chain(const fs::path& dir, const Dataset& data, int chain_id) {
  ChainStore s;
  s.chain_id = chain_id;
  const int N = data.size();
  std::map<std::string, int> index;
  for (int i = 0; i < N; ++i) index[data.subjects[i].id] = i;
  auto subject = [&](const std::string& id) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError(dir.string() + ": unknown patient " + id);
    return it->second;
  };

  const CsvTable delta = read_csv(dir / "delta.csv");
  for (const auto& row : delta.rows) {
    s.iterations.push_back(static_cast<int>(parse_long(row[1], "iteration")));
    Eigen::VectorXd v(static_cast<Eigen::Index>(row.size() - 2));
    for (std::size_t c = 2; c < row.size(); ++c) v[static_cast<Eigen::Index>(c - 2)] = parse_double(row[c], "delta");
    s.delta.push_back(std::move(v));
  }
  const int D = s.draws();
  s.patterns.assign(D, std::vector<int>(N, -1));
  s.partitions.assign(D, std::vector<int>(N, -1));
  s.atoms.assign(D, {});
  for (const auto& row : read_csv(dir / "patterns.csv").rows) {
    s.patterns.at(parse_long(row[0], "draw"))[subject(row[1])] = static_cast<int>(parse_long(row[2], "R"));
  }
  for (const auto& row : read_csv(dir / "partition.csv").rows) {
    s.partitions.at(parse_long(row[0], "draw"))[subject(row[1])] = static_cast<int>(parse_long(row[2], "label"));
  }
  for (const auto& row : read_csv(dir / "atoms.csv").rows) {
    auto& draw = s.atoms.at(parse_long(row[0], "draw"));
    const auto h = static_cast<std::size_t>(parse_long(row[1], "cluster"));
    const auto l = static_cast<std::size_t>(parse_long(row[2], "pattern"));
    if (draw.size() <= h) draw.resize(h + 1);
    if (draw[h].size() <= l) draw[h].resize(l + 1);
    draw[h][l] = parse_double(row[3], "xi");
  }
  for (int k = 0; k < D; ++k) {
    for (int i = 0; i < N; ++i) {
      if (s.patterns[k][i] < 0 || s.partitions[k][i] < 0) {
        throw DataError(dir.string() + ": draw " + std::to_string(k) + " is missing patient " + data.subjects[i].id);
      }
    }
  }
  s.proposed.assign(N, 0);
  s.accepted.assign(N, 0);
  if (fs::exists(dir / "acceptance.csv")) {
    for (const auto& row : read_csv(dir / "acceptance.csv").rows) {
      const int i = subject(row[0]);
      s.proposed[i] = parse_long(row[1], "proposed");
      s.accepted[i] = parse_long(row[2], "accepted");
    }
  }
  if (fs::exists(dir / "chain.json")) {
    const Json status = Json::parse(read_file(dir / "chain.json"));
    s.sweeps_completed = status.value("sweeps_completed", 0);
    s.low_ess_steps = status.value("low_ess_steps", 0L);
    s.allocation_fallbacks = status.value("allocation_fallbacks", 0L);
    s.max_clusters = status.value("max_clusters", 0);
    s.aborted = status.value("aborted", false);
    s.abort_message = status.value("abort_message", std::string());
  }
  if (fs::exists(dir / "theta" / "index.csv")) {
    for (const auto& row : read_csv(dir / "theta" / "index.csv").rows) {
      s.theta_draws.push_back(static_cast<int>(parse_long(row[1], "draw")));
    }
    s.theta.assign(s.theta_draws.size(), std::vector<Eigen::MatrixXd>(N));
    for (int i = 0; i < N; ++i) {
      const fs::path file = dir / "theta" / (data.subjects[i].id + ".bin");
      const auto snaps = decode_theta(read_file(file), file.string());
      if (snaps.size() != s.theta_draws.size()) throw DataError(file.string() + ": snapshot count mismatch");
      for (std::size_t k = 0; k < snaps.size(); ++k) s.theta[k][i] = snaps[k];
    }
  }
  return s;
}

}  // namespace panelstate::io
