#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "panelstate/clustering.hpp"
#include "panelstate/errors.hpp"
#include "panelstate/events.hpp"
#include "panelstate/log.hpp"
#include "panelstate/model.hpp"
#include "panelstate/particle_filter.hpp"
#include "panelstate/rng.hpp"
#include "panelstate/stochastics.hpp"

namespace panelstate {

/// All subjects of a study, ordered by id.
struct Dataset {
  std::vector<PatientRecord> subjects;
  std::vector<std::string> covariate_names;

  int size() const noexcept { return static_cast<int>(subjects.size()); }
  int d() const noexcept { return subjects.empty() ? static_cast<int>(covariate_names.size())
                                                   : static_cast<int>(subjects.front().x.size()); }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& s : subjects) {
      s.validate();
      if (!ids.insert(s.id).second) throw DataError("duplicate patient id " + s.id);
      if (s.x.size() != d()) throw DataError("patient " + s.id + ": covariate vector has the wrong length");
      if (!s.x.allFinite()) throw DataError("patient " + s.id + ": non-finite covariate");
    }
  }

  std::size_t observed_count() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.observed_count();
    return n;
  }
};

/// Chain length and bookkeeping options.
struct McmcSettings {
  int n_chains = 5;
  int n_iter = 13500;
  int burn_in = 1000;
  int thin = 25;
  std::uint64_t seed = 1;
  /// Draw each proposal right before its update instead of batching the
  /// sweep's proposals up front. Both give the same chain.
  bool sequential = false;
  /// Workers for proposal generation within a chain.
  int threads = 1;
  /// Keep trajectory snapshots every `theta_every` retained draws.
  bool store_theta = false;
  int theta_every = 10;
  bool update_delta = true;

  int retained_per_chain() const { return (n_iter - burn_in) / thin; }

  bool retains(int iter) const { return iter > burn_in && (iter - burn_in) % thin == 0; }

  void validate() const {
    if (n_chains < 1) throw ConfigError("mcmc.n_chains must be >= 1");
    if (n_iter < 1) throw ConfigError("mcmc.n_iter must be >= 1");
    if (burn_in < 0 || burn_in >= n_iter) throw ConfigError("mcmc.burn_in must satisfy 0 <= burn_in < n_iter");
    if (thin < 1) throw ConfigError("mcmc.thin must be >= 1");
    if (threads < 1) throw ConfigError("mcmc.threads must be >= 1");
    if (theta_every < 1) throw ConfigError("mcmc.theta_every must be >= 1");
  }
};

/// Retained draws and diagnostics of one chain.
struct ChainStore {
  int chain_id = 0;
  std::vector<int> iterations;
  std::vector<Eigen::VectorXd> delta;
  std::vector<std::vector<int>> patterns;
  std::vector<std::vector<int>> partitions;
  std::vector<std::vector<std::vector<double>>> atoms;
  /// Retained-draw indices that carry a trajectory snapshot, and the
  /// snapshots themselves ([snapshot][subject], T_i x p).
  std::vector<int> theta_draws;
  std::vector<std::vector<Eigen::MatrixXd>> theta;
  std::vector<long> proposed;
  std::vector<long> accepted;
  long low_ess_steps = 0;
  long allocation_fallbacks = 0;
  int max_clusters = 0;
  int sweeps_completed = 0;
  bool aborted = false;
  std::string abort_message;

  int draws() const noexcept { return static_cast<int>(iterations.size()); }
};

namespace detail {

// Stream tags for RngStream::stream_key.
enum StreamTag : std::uint64_t {
  kTagInit = 1,
  kTagProposal = 2,
  kTagAllocate = 3,
  kTagAtoms = 4,
  kTagDelta = 5,
  kTagPrior = 6,
  kTagReference = 7,
};

// Runs fn(k, worker) for k < n on up to `threads` workers with a static
// split; results must not depend on which worker handles k.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int k = 0; k < n; ++k) fn(k, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int k = w; k < n; k += threads) fn(k, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

inline Eigen::VectorXd default_delta_prior_mean(int d) { return Eigen::VectorXd::Zero(d); }
inline Eigen::MatrixXd default_delta_prior_cov(int d) { return 10.0 * Eigen::MatrixXd::Identity(d, d); }

inline double linear_offset(const PatientRecord& record, const Eigen::VectorXd& delta) {
  return record.x.dot(delta);
}

/// Static probit MLE P(y = 1) = Phi(x' delta) pooled over every observed day,
/// by Fisher scoring. Returns delta = 0 (and `converged` false) on failure.
inline Eigen::VectorXd probit_mle(const Dataset& data, bool* converged = nullptr, double tol = 1e-8,
                                  int max_iter = 100) {
  const int d = data.d();
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(d);
  if (converged) *converged = false;
  // Covariates are constant within a subject, so days aggregate into counts.
  struct Group {
    Eigen::VectorXd x;
    double n;
    double ones;
  };
  std::vector<Group> groups;
  for (const auto& s : data.subjects) {
    double n = 0;
    double ones = 0;
    for (Outcome y : s.y) {
      if (y == kMissing) continue;
      n += 1;
      ones += y;
    }
    if (n > 0) groups.push_back({s.x, n, ones});
  }
  if (groups.empty()) {
    logger().warn("no observed outcomes; starting from delta = 0");
    return delta;
  }
  for (int iter = 0; iter < max_iter; ++iter) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
    for (const auto& g : groups) {
      const double eta = g.x.dot(delta);
      const double mu = std::clamp(normal_cdf(eta), 1e-300, 1.0 - 1e-16);
      const double phi = normal_pdf(eta);
      const double var = mu * (1.0 - mu);
      score += g.x * (phi * (g.ones - g.n * mu) / var);
      info += (g.n * phi * phi / var) * (g.x * g.x.transpose());
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0) break;
    const Eigen::VectorXd step = ldlt.solve(score);
    if (!step.allFinite()) break;
    delta += step;
    if (!delta.allFinite() || delta.cwiseAbs().maxCoeff() > 40.0) break;
    if (step.cwiseAbs().maxCoeff() < tol) {
      if (converged) *converged = true;
      return delta;
    }
  }
  logger().warn("probit maximum likelihood did not converge; starting from delta = 0");
  return Eigen::VectorXd::Zero(d);
}

/// Deterministic prior mean path m_t = G_t m_{t-1}, m_0 = m0.
inline Eigen::MatrixXd prior_mean_path(const ModelConfig& config, const PatientRecord& record) {
  Eigen::MatrixXd out(record.length(), config.p);
  Eigen::VectorXd m = config.m0;
  for (int t = 1; t <= record.length(); ++t) {
    m = transition_at(config, record, t).G * m;
    out.row(t - 1) = m.transpose();
  }
  return out;
}

/// Current state of one chain.
struct ChainState {
  GlobalParams global;
  std::vector<SubjectState> subjects;
  ClusterRegistry registry;

  std::vector<int> patterns() const {
    std::vector<int> out(subjects.size());
    for (std::size_t i = 0; i < subjects.size(); ++i) out[i] = subjects[i].R;
    return out;
  }
};

/// Starting point: probit MLE for delta, filtered mean paths for theta, one
/// cluster per distinct starting pattern.
inline ChainState initialize(const Dataset& data, const ModelConfig& config, const PatternScheme& scheme,
                             std::uint64_t seed, int chain_id, int threads = 1) {
  ChainState state;
  state.global.delta = probit_mle(data);
  const int N = data.size();
  state.subjects.resize(N);
  detail::parallel_for(N, threads, [&](int i, int) {
    const auto& rec = data.subjects[i];
    Eigen::MatrixXd theta;
    if (rec.observed_count() == 0) {
      theta = prior_mean_path(config, rec);
    } else {
      RngStream rng(seed, RngStream::stream_key({detail::kTagInit, static_cast<std::uint64_t>(chain_id),
                                                 static_cast<std::uint64_t>(i)}));
      theta = marginal_filter(rec, config, linear_offset(rec, state.global.delta), rng, config.n_particles, true)
                  .mean_path();
    }
    state.subjects[i].set_theta(rec, std::move(theta), scheme);
  });

  // Group subjects by pattern; beyond the cap, the smaller groups join the largest.
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < N; ++i) groups[state.subjects[i].R].push_back(i);
  std::vector<std::vector<int>> ordered;
  for (auto& [ell, members] : groups) ordered.push_back(std::move(members));
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  const int cap = config.cluster_cap();
  if (cap > 0 && static_cast<int>(ordered.size()) > cap) {
    for (std::size_t k = cap; k < ordered.size(); ++k) {
      ordered[0].insert(ordered[0].end(), ordered[k].begin(), ordered[k].end());
    }
    ordered.resize(cap);
  }
  state.registry = ClusterRegistry(N, config.L);
  for (const auto& members : ordered) {
    std::vector<int> counts(config.L, 0);
    for (int i : members) ++counts[state.subjects[i].R];
    const int h = state.registry.add_cluster(dirichlet_posterior_mean(counts, config.dirichlet_a));
    for (int i : members) state.registry.assign(i, h);
  }
  state.registry.validate(cap);
  return state;
}

/// min(1, (p_new / p_cur) (g_cur / g_new)); exactly 1 when the pattern is unchanged.
inline double acceptance_ratio(std::span<const double> p, std::span<const double> g, int ell, int ell_new) {
  if (ell_new == ell) return 1.0;
  if (!(p[ell] > 0.0)) return 1.0;
  const double ratio = (p[ell_new] / p[ell]) * (g[ell] / g[ell_new]);
  return std::min(1.0, ratio);
}

/// Proposed trajectory for one subject.
struct Proposal {
  Eigen::MatrixXd theta;
  double offset = 0.0;
  int low_ess_steps = 0;
};

/// Record of one Metropolis-Hastings step.
struct MhTrace {
  int subject = 0;
  int sweep = 0;
  int ell = 0;
  int ell_new = 0;
  std::vector<double> p;
  std::vector<double> g;
  double alpha = 0.0;
  bool accepted = false;
};

struct MhOutcome {
  bool accepted = false;
  bool fallback = false;
  double alpha = 0.0;
};

/// Joint update of (theta_i, R_i, rho_i) from a proposed trajectory.
inline MhOutcome mh_update_subject(int i, ChainState& state, const Dataset& data, const ModelConfig& config,
                                   const PatternScheme& scheme, std::span<const double> g, Proposal proposal,
                                   RngStream& rng, MhTrace* trace = nullptr) {
  const auto& rec = data.subjects[i];
  // The likelihood cancels from the ratio only if the proposal used the
  // current offset.
  if (proposal.offset != linear_offset(rec, state.global.delta)) {
    throw RuntimeAbort("proposal offset differs from the current linear predictor");
  }
  SubjectState candidate;
  candidate.set_theta(rec, std::move(proposal.theta), scheme);
  const int ell = state.subjects[i].R;
  const int ell_new = candidate.R;

  auto removal = state.registry.unassign(i);
  const std::vector<double> p = predictive_pattern_probs(state.registry, config.dirichlet_a, config.M, config.sigma);
  const AllocationDraw alloc =
      conditional_allocation(state.registry, ell_new, config.dirichlet_a, config.M, config.sigma, rng);
  const double alpha = acceptance_ratio(p, g, ell, ell_new);
  const bool accept = alpha >= 1.0 || rng.uniform() < alpha;

  MhOutcome outcome{accept, alloc.fallback, alpha};
  if (accept) {
    int h = alloc.label;
    if (h == state.registry.H()) h = state.registry.add_cluster(birth_atom(ell_new, config.dirichlet_a, rng));
    state.registry.assign(i, h);
    candidate.rho = h;
    state.subjects[i] = std::move(candidate);
  } else {
    state.registry.restore(std::move(removal));
  }
  const int cap = config.cluster_cap();
  if (cap > 0 && state.registry.H() > cap) {
    throw RuntimeAbort("occupied clusters exceed the cap of " + std::to_string(cap));
  }
  if (trace) {
    trace->subject = i;
    trace->ell = ell;
    trace->ell_new = ell_new;
    trace->p = p;
    trace->g.assign(g.begin(), g.end());
    trace->alpha = alpha;
    trace->accepted = accept;
  }
  return outcome;
}

/// Data-augmentation update of delta given the dynamic scores.
inline Eigen::VectorXd gibbs_update_delta(const Dataset& data, const std::vector<SubjectState>& subjects,
                                          const Eigen::VectorXd& delta, const Eigen::VectorXd& d0,
                                          const Eigen::MatrixXd& D0, RngStream& rng) {
  const int d = static_cast<int>(d0.size());
  const Eigen::MatrixXd D0_inv = D0.llt().solve(Eigen::MatrixXd::Identity(d, d));
  Eigen::MatrixXd precision = D0_inv;
  Eigen::VectorXd rhs = D0_inv * d0;
  for (int i = 0; i < data.size(); ++i) {
    const auto& rec = data.subjects[i];
    const auto& gamma = subjects[i].gamma;
    const double mu = linear_offset(rec, delta);
    double n = 0.0;
    double resid = 0.0;
    for (int t = 0; t < rec.length(); ++t) {
      const Outcome y = rec.y[t];
      if (y == kMissing) continue;
      const double zeta = sample_trunc_normal(mu + gamma[t], 1.0, TruncRegion::for_outcome(y), rng);
      resid += zeta - gamma[t];
      n += 1.0;
    }
    if (n > 0.0) {
      precision += n * (rec.x * rec.x.transpose());
      rhs += resid * rec.x;
    }
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw RuntimeAbort("delta update: posterior precision is not positive definite");
  const Eigen::VectorXd mean = llt.solve(rhs);
  Eigen::VectorXd noise(d);
  for (int k = 0; k < d; ++k) noise[k] = rng.normal();
  // precision = L L', so L^{-T} n has covariance precision^{-1}.
  return mean + llt.matrixU().solve(noise);
}

/// Prior pattern tables for every subject, from stream (seed, prior, subject).
inline std::vector<PriorPatternTable> compute_prior_tables(const Dataset& data, const ModelConfig& config,
                                                           const PatternScheme& scheme, std::uint64_t seed,
                                                           int threads = 1) {
  std::vector<PriorPatternTable> out(data.size());
  detail::parallel_for(data.size(), threads, [&](int i, int) {
    RngStream rng(seed, RngStream::stream_key({detail::kTagPrior, static_cast<std::uint64_t>(i)}));
    out[i] = estimate_prior_patterns(data.subjects[i], config, scheme, config.prior_mc_draws, rng);
  });
  return out;
}

/// Optional observers for tests and diagnostics.
struct ChainHooks {
  std::function<void(const MhTrace&)> on_mh;
  std::function<void(int sweep, const ChainState&)> on_sweep;
};

/// Runs one chain. Errors abort the chain; the draws retained so far are
/// returned with `aborted` set.
inline ChainStore run_chain(const Dataset& data, const ModelConfig& config, const PatternScheme& scheme,
                            const std::vector<PriorPatternTable>& g_tables, const McmcSettings& settings,
                            int chain_id, const ChainHooks& hooks = {}) {
  ChainStore store;
  store.chain_id = chain_id;
  const int N = data.size();
  store.proposed.assign(N, 0);
  store.accepted.assign(N, 0);
  try {
    if (static_cast<int>(g_tables.size()) != N) throw std::invalid_argument("run_chain: one g table per subject");
    for (const auto& table : g_tables) {
      if (static_cast<int>(table.g_probs.size()) != config.L) throw std::invalid_argument("run_chain: g table length");
      for (double v : table.g_probs) {
        if (!(v > 0.0)) throw std::invalid_argument("run_chain: g table entries must be positive");
      }
    }
    const int d = data.d();
    const Eigen::VectorXd d0 = config.delta_prior_mean.value_or(default_delta_prior_mean(d));
    const Eigen::MatrixXd D0 = config.delta_prior_cov.value_or(default_delta_prior_cov(d));
    if (d0.size() != d || D0.rows() != d || D0.cols() != d) {
      throw ConfigError("delta prior dimension does not match the number of covariates (" + std::to_string(d) + ")");
    }
    const std::uint64_t seed = settings.seed;
    const auto chain = static_cast<std::uint64_t>(chain_id);
    const int cap = config.cluster_cap();

    ChainState state = initialize(data, config, scheme, seed, chain_id, settings.threads);
    store.max_clusters = state.registry.H();

    const int workers = std::max(1, std::min(settings.threads, N));
    std::vector<TrajectorySampler> samplers;
    samplers.reserve(workers);
    for (int w = 0; w < workers; ++w) samplers.emplace_back(config);
    std::vector<Proposal> proposals(N);

    auto make_proposal = [&](int i, int worker, int sweep) {
      const auto& rec = data.subjects[i];
      RngStream rng(seed, RngStream::stream_key({detail::kTagProposal, chain, static_cast<std::uint64_t>(sweep),
                                                 static_cast<std::uint64_t>(i)}));
      Proposal prop;
      prop.offset = linear_offset(rec, state.global.delta);
      TrajectoryDraw draw = samplers[worker].sample(rec, prop.offset, rng, config.n_particles);
      prop.theta = std::move(draw.theta);
      prop.low_ess_steps = draw.low_ess_steps;
      return prop;
    };

    MhTrace trace;
    int retained = 0;
    for (int sweep = 1; sweep <= settings.n_iter; ++sweep) {
      if (!settings.sequential) {
        detail::parallel_for(N, workers, [&](int i, int w) { proposals[i] = make_proposal(i, w, sweep); });
      }
      for (int i = 0; i < N; ++i) {
        Proposal prop = settings.sequential ? make_proposal(i, 0, sweep) : std::move(proposals[i]);
        store.low_ess_steps += prop.low_ess_steps;
        RngStream rng(seed, RngStream::stream_key({detail::kTagAllocate, chain, static_cast<std::uint64_t>(sweep),
                                                   static_cast<std::uint64_t>(i)}));
        const MhOutcome outcome = mh_update_subject(i, state, data, config, scheme, g_tables[i].g_probs,
                                                    std::move(prop), rng, hooks.on_mh ? &trace : nullptr);
        ++store.proposed[i];
        if (outcome.accepted) ++store.accepted[i];
        if (outcome.fallback) ++store.allocation_fallbacks;
        store.max_clusters = std::max(store.max_clusters, state.registry.H());
        if (hooks.on_mh) {
          trace.sweep = sweep;
          hooks.on_mh(trace);
        }
      }

      RngStream atom_rng(seed, RngStream::stream_key({detail::kTagAtoms, chain, static_cast<std::uint64_t>(sweep)}));
      const auto patterns = state.patterns();
      const auto counts = state.registry.pattern_counts(patterns);
      for (int h = 0; h < state.registry.H(); ++h) {
        state.registry.set_atom(h, update_atom(counts[h], config.dirichlet_a, atom_rng));
      }

      if (settings.update_delta) {
        RngStream delta_rng(seed,
                            RngStream::stream_key({detail::kTagDelta, chain, static_cast<std::uint64_t>(sweep)}));
        state.global.delta = gibbs_update_delta(data, state.subjects, state.global.delta, d0, D0, delta_rng);
      }
      for (int i = 0; i < N; ++i) state.subjects[i].rho = state.registry.label(i);
      state.registry.validate(cap);
      if (hooks.on_sweep) hooks.on_sweep(sweep, state);

      if (settings.retains(sweep)) {
        store.iterations.push_back(sweep);
        store.delta.push_back(state.global.delta);
        store.patterns.push_back(patterns);
        store.partitions.push_back(state.registry.assignments());
        store.atoms.push_back(state.registry.atoms());
        if (settings.store_theta && retained % settings.theta_every == 0) {
          store.theta_draws.push_back(retained);
          std::vector<Eigen::MatrixXd> snap(N);
          for (int i = 0; i < N; ++i) snap[i] = state.subjects[i].theta;
          store.theta.push_back(std::move(snap));
        }
        ++retained;
      }
      store.sweeps_completed = sweep;
    }
  } catch (const std::exception& e) {
    store.aborted = true;
    store.abort_message = e.what();
    logger().error("chain {} aborted after {} sweeps: {}", chain_id, store.sweeps_completed, e.what());
  }
  return store;
}

/// Runs settings.n_chains chains, up to `parallel_chains` at a time.
inline std::vector<ChainStore> run_chains(const Dataset& data, const ModelConfig& config, const PatternScheme& scheme,
                                          const std::vector<PriorPatternTable>& g_tables,
                                          const McmcSettings& settings, int parallel_chains = 1) {
  std::vector<ChainStore> stores(settings.n_chains);
  detail::parallel_for(settings.n_chains, parallel_chains, [&](int k, int) {
    stores[k] = run_chain(data, config, scheme, g_tables, settings, k);
  });
  return stores;
}

/// Pattern frequencies under the reference model alone: `n_draws`
/// trajectory draws per subject at a fixed delta, without clustering.
inline std::vector<std::vector<double>> reference_pattern_posterior(const Dataset& data, const ModelConfig& config,
                                                                    const PatternScheme& scheme,
                                                                    const Eigen::VectorXd& delta, int n_draws,
                                                                    std::uint64_t seed, int threads = 1) {
  if (n_draws < 1) throw std::invalid_argument("reference_pattern_posterior: need at least one draw");
  const int N = data.size();
  std::vector<std::vector<double>> out(N, std::vector<double>(scheme.L, 0.0));
  const int workers = std::max(1, std::min(threads, N));
  std::vector<TrajectorySampler> samplers;
  for (int w = 0; w < workers; ++w) samplers.emplace_back(config);
  detail::parallel_for(N, workers, [&](int i, int w) {
    const auto& rec = data.subjects[i];
    const double offset = linear_offset(rec, delta);
    for (int k = 0; k < n_draws; ++k) {
      RngStream rng(seed, RngStream::stream_key({detail::kTagReference, static_cast<std::uint64_t>(i),
                                                 static_cast<std::uint64_t>(k)}));
      const TrajectoryDraw draw = samplers[w].sample(rec, offset, rng, config.n_particles);
      const Eigen::VectorXd gamma = compute_gamma(rec, draw.theta);
      const int ell = scheme(std::span<const double>(gamma.data(), gamma.size()), rec.treatment_changes);
      out[i][ell] += 1.0;
    }
    for (double& v : out[i]) v /= n_draws;
  });
  return out;
}

}  // namespace panelstate
