#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "panelstate/errors.hpp"
#include "panelstate/events.hpp"
#include "panelstate/io.hpp"
#include "panelstate/log.hpp"
#include "panelstate/reports.hpp"
#include "panelstate/sampler.hpp"
#include "panelstate/simulate.hpp"

#ifndef PANELSTATE_GIT_DESCRIBE
#define PANELSTATE_GIT_DESCRIBE "unknown"
#endif

namespace panelstate::cli {

namespace fs = std::filesystem;
using io::Json;

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeAbort = 4 };

namespace detail {

inline Json build_info() {
  return {{"panelstate", kVersion}, {"git", PANELSTATE_GIT_DESCRIBE}};
}

inline std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Digest of every regular file under `dir`, keyed by relative path.
inline Json directory_digests(const fs::path& dir, const std::set<std::string>& skip) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Json out = Json::object();
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, dir).generic_string();
    if (skip.count(rel)) continue;
    out[rel] = io::file_digest(f);
  }
  return out;
}

inline void prepare_output_dir(const fs::path& out, bool force) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw ConfigError("--out " + out.string() + " exists and is not a directory");
    if (!fs::is_empty(out)) {
      if (!force) throw ConfigError("run directory " + out.string() + " already exists; pass --force to overwrite");
      fs::remove_all(out);
    }
  }
  fs::create_directories(out);
}

inline void write_json(const fs::path& path, const Json& j) { io::write_file(path, j.dump(2) + "\n"); }

struct Run {
  fs::path dir;
  io::RunConfig config;
  Dataset data;
  std::vector<ChainStore> stores;
};

inline Run load_run(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) throw DataError(dir.string() + " is not a run directory (no meta.json)");
  Run run;
  run.dir = dir;
  const Json meta = Json::parse(io::read_file(dir / "meta.json"));
  if (!meta.contains("config")) throw DataError(dir.string() + "/meta.json has no config");
  run.config = io::parse_config(meta["config"]);
  run.data = io::load_dataset(dir / "data");
  const int chains = meta.value("chains", 0);
  for (int k = 0; k < chains; ++k) {
    const fs::path cdir = io::chain_dir(dir, k);
    if (!fs::exists(cdir / "delta.csv")) {
      logger().warn("chain {} has no stored draws; skipped", k);
      continue;
    }
    ChainStore s = io::read_chain(cdir, run.data, k);
    if (s.aborted) logger().warn("chain {} aborted after {} sweeps; using its {} draws", k, s.sweeps_completed, s.draws());
    run.stores.push_back(std::move(s));
  }
  if (total_draws(run.stores) < 1) throw DataError(dir.string() + ": no retained draws");
  return run;
}

inline PartitionLoss parse_loss(const std::string& name) {
  if (name == "binder") return PartitionLoss::kBinder;
  if (name == "vi") return PartitionLoss::kVi;
  throw ConfigError("--loss must be binder or vi");
}

inline std::vector<std::string> pattern_header(const std::string& first, int L) {
  std::vector<std::string> h{first};
  for (int l = 0; l < L; ++l) h.push_back("pattern_" + std::to_string(l));
  return h;
}

inline void write_subject_matrix(const fs::path& path, const Dataset& data, const Eigen::MatrixXd& m) {
  io::CsvWriter w(pattern_header("patient_id", static_cast<int>(m.cols())));
  for (int i = 0; i < data.size(); ++i) {
    std::vector<std::string> row{data.subjects[i].id};
    for (Eigen::Index l = 0; l < m.cols(); ++l) row.push_back(io::format_double(m(i, l)));
    w.row(row);
  }
  io::write_file(path, w.str());
}

// ------------------------------------------------------------ subcommands

struct SimulateArgs {
  std::string scenario;
  std::string out;
  std::uint64_t seed = 1;
};

inline int cmd_simulate(const SimulateArgs& a) {
  ScenarioConfig sc = a.scenario.empty() ? ScenarioConfig{} : io::load_scenario(a.scenario);
  sc.seed = a.seed;
  const Cohort cohort = generate_cohort(sc);
  const fs::path out = a.out;
  fs::create_directories(out);
  io::write_dataset(cohort.data, out);
  io::write_truth(cohort.truth, out / io::kTruthFile);
  Json meta;
  meta["command"] = "simulate";
  meta["seed"] = sc.seed;
  meta["scenario"] = io::scenario_to_json(sc);
  meta["build"] = build_info();
  write_json(out / "meta.json", meta);
  return kOk;
}

struct PriorArgs {
  std::string data;
  std::string config;
  std::string out;
  std::uint64_t seed = 1;
  int threads = 1;
};

inline int cmd_prior_probs(const PriorArgs& a) {
  const io::RunConfig rc = io::load_config(a.config);
  const Dataset data = io::load_dataset(a.data);
  const PatternScheme scheme = clinical_pattern_scheme(rc.model.events);
  if (scheme.L != rc.model.L) throw ConfigError("L must be 8 for the clinical pattern statistic");
  const auto tables = compute_prior_tables(data, rc.model, scheme, a.seed, a.threads);
  io::write_g_probs(data, tables, fs::path(a.out) / "g_probs.csv");
  Json meta;
  meta["command"] = "prior-probs";
  meta["seed"] = a.seed;
  meta["config"] = io::config_to_json(rc);
  meta["build"] = build_info();
  write_json(fs::path(a.out) / "meta.json", meta);
  return kOk;
}

struct FitArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string g_probs;
  std::optional<int> chains, iters, burnin, thin, particles, threads, theta_every;
  std::uint64_t seed = 1;
  bool sequential = false;
  bool force = false;
  bool store_theta = false;
  bool timestamps = false;
};

inline int cmd_fit(const FitArgs& a) {
  io::RunConfig rc = io::load_config(a.config);
  McmcSettings& s = rc.mcmc;
  s.seed = a.seed;
  if (a.chains) s.n_chains = *a.chains;
  if (a.iters) s.n_iter = *a.iters;
  if (a.burnin) s.burn_in = *a.burnin;
  if (a.thin) s.thin = *a.thin;
  if (a.threads) s.threads = *a.threads;
  if (a.theta_every) s.theta_every = *a.theta_every;
  if (a.sequential) s.sequential = true;
  if (a.store_theta) s.store_theta = true;
  if (a.particles) rc.model.n_particles = *a.particles;
  rc.model.validate();
  s.validate();

  const Dataset data = io::load_dataset(a.data);
  const PatternScheme scheme = clinical_pattern_scheme(rc.model.events);
  if (scheme.L != rc.model.L) throw ConfigError("L must be 8 for the clinical pattern statistic");
  const int d = data.d();
  if ((rc.model.delta_prior_mean && rc.model.delta_prior_mean->size() != d) ||
      (rc.model.delta_prior_cov && rc.model.delta_prior_cov->rows() != d)) {
    throw ConfigError("delta prior dimension does not match the " + std::to_string(d) + " baseline covariates");
  }

  const fs::path out = a.out;
  prepare_output_dir(out, a.force);
  io::write_dataset(data, out / "data");

  const Json config_json = io::config_to_json(rc);
  Json meta;
  meta["command"] = "fit";
  meta["seed"] = s.seed;
  meta["chains"] = s.n_chains;
  meta["config"] = config_json;
  meta["build"] = build_info();
  write_json(out / "meta.json", meta);

  Json manifest;
  manifest["config_hash"] = io::fnv1a_hex(config_json.dump());
  manifest["seed"] = s.seed;
  manifest["settings"] = io::settings_to_json(s);
  manifest["versions"] = build_info();
  manifest["inputs"] = {{"observations.csv", io::file_digest(fs::path(a.data) / io::kObservationsFile)},
                        {"baseline.csv", io::file_digest(fs::path(a.data) / io::kBaselineFile)},
                        {"config", io::file_digest(a.config)}};
  if (a.timestamps) manifest["started"] = now_utc();
  manifest["status"] = "running";
  write_json(out / "manifest.json", manifest);

  std::vector<PriorPatternTable> tables;
  if (a.g_probs.empty()) {
    tables = compute_prior_tables(data, rc.model, scheme, s.seed, s.threads);
  } else {
    tables = io::read_g_probs(data, rc.model.L, a.g_probs);
    manifest["inputs"]["g_probs.csv"] = io::file_digest(a.g_probs);
  }
  io::write_g_probs(data, tables, out / "g_probs.csv");

  logger().info("fitting {} subjects, {} chains x {} sweeps", data.size(), s.n_chains, s.n_iter);
  const std::vector<ChainStore> stores = run_chains(data, rc.model, scheme, tables, s, s.n_chains);
  bool aborted = false;
  for (const auto& store : stores) {
    io::write_chain(store, data, io::chain_dir(out, store.chain_id));
    aborted = aborted || store.aborted;
  }

  manifest["status"] = aborted ? "aborted" : "complete";
  if (a.timestamps) manifest["finished"] = now_utc();
  manifest["outputs"] = directory_digests(out, {"manifest.json"});
  write_json(out / "manifest.json", manifest);
  if (aborted) {
    for (const auto& store : stores) {
      if (store.aborted) std::cerr << "chain " << store.chain_id << " aborted: " << store.abort_message << "\n";
    }
    return kRuntimeAbort;
  }
  return kOk;
}

struct SummarizeArgs {
  std::string run;
  std::string out;
  std::string loss = "binder";
};

inline int cmd_summarize(const SummarizeArgs& a) {
  const PartitionLoss loss = parse_loss(a.loss);
  const Run run = load_run(a.run);
  const fs::path out = a.out.empty() ? fs::path(a.run) : fs::path(a.out);
  fs::create_directories(out);
  const Dataset& data = run.data;
  const int N = data.size();
  const int L = run.config.model.L;

  write_subject_matrix(out / "pattern_posterior.csv", data, pattern_posterior(run.stores, N, L));
  write_subject_matrix(out / "xi_posterior_mean.csv", data, xi_posterior_mean(run.stores, N, L));

  const auto partitions = pooled_partitions(run.stores);
  const Eigen::MatrixXd sim = similarity(partitions, N);
  std::vector<std::string> header{"patient_id"};
  for (const auto& rec : data.subjects) header.push_back(rec.id);
  io::CsvWriter sim_csv(header);
  for (int i = 0; i < N; ++i) {
    std::vector<std::string> row{data.subjects[i].id};
    for (int j = 0; j < N; ++j) row.push_back(io::format_double(sim(i, j)));
    sim_csv.row(row);
  }
  io::write_file(out / "similarity.csv", sim_csv.str());

  const PointPartition point = point_partition(sim, partitions, loss);
  io::CsvWriter part({"patient_id", "cluster"});
  for (int i = 0; i < N; ++i) part.row({data.subjects[i].id, std::to_string(point.labels[i] + 1)});
  io::write_file(out / "partition.csv", part.str());

  io::CsvWriter diag({"metric", "name", "value"});
  const auto rates = acceptance_rates(run.stores, N);
  for (int i = 0; i < N; ++i) diag.row({"acceptance_rate", data.subjects[i].id, io::format_double(rates[i])});
  const Eigen::VectorXd rhat = rhat_delta(run.stores);
  for (Eigen::Index c = 0; c < rhat.size(); ++c) {
    const std::string name = c < static_cast<Eigen::Index>(data.covariate_names.size())
                                 ? data.covariate_names[c]
                                 : "delta_" + std::to_string(c);
    diag.row({"rhat_delta", name, io::format_double(rhat[c])});
  }
  for (const auto& s : run.stores) {
    const std::string chain = "chain_" + std::to_string(s.chain_id);
    diag.row({"draws", chain, std::to_string(s.draws())});
    diag.row({"max_clusters", chain, std::to_string(s.max_clusters)});
    diag.row({"low_ess_steps", chain, std::to_string(s.low_ess_steps)});
    diag.row({"allocation_fallbacks", chain, std::to_string(s.allocation_fallbacks)});
    diag.row({"aborted", chain, s.aborted ? "1" : "0"});
  }
  diag.row({"partition_loss", a.loss, io::format_double(point.loss)});
  io::write_file(out / "diagnostics.csv", diag.str());
  return kOk;
}

struct ScoreArgs {
  std::string run;
  std::string truth;
  std::string out;
};

inline int cmd_score(const ScoreArgs& a) {
  const Run run = load_run(a.run);
  const auto truth_map = io::read_truth_patterns(a.truth);
  const Dataset& data = run.data;
  const int L = run.config.model.L;
  std::vector<int> truth(data.size());
  for (int i = 0; i < data.size(); ++i) {
    auto it = truth_map.find(data.subjects[i].id);
    if (it == truth_map.end()) throw DataError("truth file has no entry for patient " + data.subjects[i].id);
    if (it->second < 0 || it->second >= L) throw DataError("true pattern out of range for " + data.subjects[i].id);
    truth[i] = it->second;
  }
  const int draws = total_draws(run.stores);
  const Eigen::MatrixXd post = pattern_posterior(run.stores, data.size(), L);
  std::string text = "cross_entropy " + io::format_double(cross_entropy(post, truth, draws)) + "\n";
  for (int ell = 0; ell < L; ++ell) {
    std::vector<int> rows;
    for (int i = 0; i < data.size(); ++i) {
      if (truth[i] == ell) rows.push_back(i);
    }
    if (rows.empty()) continue;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), L);
    for (std::size_t k = 0; k < rows.size(); ++k) sub.row(static_cast<Eigen::Index>(k)) = post.row(rows[k]);
    const std::vector<int> labels(rows.size(), ell);
    text += "pattern_" + std::to_string(ell) + " " + io::format_double(cross_entropy(sub, labels, draws)) + "\n";
  }
  const fs::path out = a.out.empty() ? fs::path(a.run) : fs::path(a.out);
  io::write_file(out / "cross_entropy.txt", text);
  return kOk;
}

struct TreatmentArgs {
  std::string run;
  std::string out;
  std::string loss = "binder";
  std::optional<int> window;
};

inline int cmd_treatment_effects(const TreatmentArgs& a) {
  const PartitionLoss loss = parse_loss(a.loss);
  const Run run = load_run(a.run);
  const Dataset& data = run.data;
  const int window = a.window.value_or(run.config.model.events.r3_window);
  if (window < 1) throw ConfigError("--window must be >= 1");
  const auto partitions = pooled_partitions(run.stores);
  const PointPartition point = point_partition(similarity(partitions, data.size()), partitions, loss);
  bool any_theta = false;
  for (const auto& s : run.stores) any_theta = any_theta || !s.theta.empty();
  if (!any_theta) throw DataError("run has no trajectory snapshots; fit with --store-theta");
  const auto rows = treatment_effects(run.stores, data, window, point.labels);
  io::CsvWriter w({"group", "treatment", "T_pre", "T_post", "intercept", "slope", "prop_T_pre_lt_T_post",
                   "prop_slope_neg", "n_slices", "n_excluded"});
  for (const auto& r : rows) {
    w.row({r.group, r.treatment, io::format_double(r.T_pre), io::format_double(r.T_post),
           io::format_double(r.intercept), io::format_double(r.slope), io::format_double(r.prop_pre_lt_post),
           io::format_double(r.prop_slope_negative), std::to_string(r.n_slices), std::to_string(r.n_excluded)});
  }
  const fs::path out = a.out.empty() ? fs::path(a.run) : fs::path(a.out);
  io::write_file(out / "treatment_effects.csv", w.str());
  return kOk;
}

}  // namespace detail

/// Entry point of the `panelstate` executable.
inline int run_cli(int argc, char** argv) {
  CLI::App app{"Clustering of binary longitudinal series by trajectory pattern"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion) + " (" + PANELSTATE_GIT_DESCRIBE + ")");

  detail::SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic cohort");
  c_sim->add_option("--scenario", sim.scenario, "Scenario JSON (defaults if omitted)")->check(CLI::ExistingFile);
  c_sim->add_option("--out", sim.out, "Output directory")->required();
  c_sim->add_option("--seed", sim.seed, "Random seed");

  detail::PriorArgs prior;
  auto* c_prior = app.add_subcommand("prior-probs", "Monte Carlo prior pattern probabilities per subject");
  c_prior->add_option("--data", prior.data, "Directory with observations.csv and baseline.csv")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_prior->add_option("--config", prior.config, "Config JSON")->required()->check(CLI::ExistingFile);
  c_prior->add_option("--out", prior.out, "Output directory")->required();
  c_prior->add_option("--seed", prior.seed, "Random seed");
  c_prior->add_option("--threads", prior.threads, "Worker threads")->check(CLI::PositiveNumber);

  detail::FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Run the MCMC sampler");
  c_fit->add_option("--data", fit.data, "Directory with observations.csv and baseline.csv")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_fit->add_option("--config", fit.config, "Config JSON")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--out", fit.out, "Run directory")->required();
  c_fit->add_option("--seed", fit.seed, "Random seed");
  c_fit->add_option("--chains", fit.chains, "Number of chains")->check(CLI::PositiveNumber);
  c_fit->add_option("--iters", fit.iters, "Sweeps per chain")->check(CLI::PositiveNumber);
  c_fit->add_option("--burnin", fit.burnin, "Burn-in sweeps")->check(CLI::NonNegativeNumber);
  c_fit->add_option("--thin", fit.thin, "Thinning interval")->check(CLI::PositiveNumber);
  c_fit->add_option("--particles", fit.particles, "Particles per filter")->check(CLI::PositiveNumber);
  c_fit->add_option("--threads", fit.threads, "Proposal threads per chain")->check(CLI::PositiveNumber);
  c_fit->add_option("--theta-every", fit.theta_every, "Snapshot trajectories every N retained draws")
      ->check(CLI::PositiveNumber);
  c_fit->add_option("--g-probs", fit.g_probs, "Precomputed g_probs.csv")->check(CLI::ExistingFile);
  c_fit->add_flag("--sequential", fit.sequential, "Generate proposals one at a time");
  c_fit->add_flag("--store-theta", fit.store_theta, "Store trajectory snapshots");
  c_fit->add_flag("--force", fit.force, "Overwrite an existing run directory");
  c_fit->add_flag("--timestamps", fit.timestamps, "Record start and end times in manifest.json");

  detail::SummarizeArgs summ;
  auto* c_summ = app.add_subcommand("summarize", "Posterior summaries of a run");
  c_summ->add_option("--run", summ.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  c_summ->add_option("--out", summ.out, "Output directory (default: the run directory)");
  c_summ->add_option("--loss", summ.loss, "Partition loss: binder or vi");

  detail::ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "Cross-entropy against simulation truth");
  c_score->add_option("--run", score.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  c_score->add_option("--truth", score.truth, "truth.csv")->required()->check(CLI::ExistingFile);
  c_score->add_option("--out", score.out, "Output directory (default: the run directory)");

  detail::TreatmentArgs trt;
  auto* c_trt = app.add_subcommand("treatment-effects", "Pre/post treatment summaries from stored trajectories");
  c_trt->add_option("--run", trt.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  c_trt->add_option("--out", trt.out, "Output directory (default: the run directory)");
  c_trt->add_option("--loss", trt.loss, "Partition loss for cluster groups: binder or vi");
  c_trt->add_option("--window", trt.window, "Days before a change averaged for T_pre");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*c_sim) return detail::cmd_simulate(sim);
    if (*c_prior) return detail::cmd_prior_probs(prior);
    if (*c_fit) return detail::cmd_fit(fit);
    if (*c_summ) return detail::cmd_summarize(summ);
    if (*c_score) return detail::cmd_score(score);
    if (*c_trt) return detail::cmd_treatment_effects(trt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const Json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeAbort;
  }
  return kConfigError;
}

}  // namespace panelstate::cli
