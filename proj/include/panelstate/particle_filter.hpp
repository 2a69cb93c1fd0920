#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelstate/errors.hpp"
#include "panelstate/events.hpp"
#include "panelstate/log.hpp"
#include "panelstate/model.hpp"
#include "panelstate/normal_math.hpp"
#include "panelstate/rng.hpp"
#include "panelstate/stochastics.hpp"

namespace panelstate {

namespace detail {

// Probit resampling weights Phi(sign * r / sqrt(S)), normalised to max 1.
// Falls back to log space when every weight underflows. Returns the log of
// the unnormalised mean weight.
inline double probit_weights(std::span<const double> r_pred, double sign, double inv_sd,
                             std::vector<double>& weights) {
  const std::size_t n = r_pred.size();
  weights.resize(n);
  double max_w = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    weights[k] = normal_cdf(sign * r_pred[k] * inv_sd);
    max_w = std::max(max_w, weights[k]);
  }
  if (max_w > 1e-280) {
    double total = 0.0;
    for (double& w : weights) {
      total += w;
      w /= max_w;
    }
    return std::log(total / static_cast<double>(n));
  }
  double max_log = -kInf;
  for (std::size_t k = 0; k < n; ++k) {
    weights[k] = normal_log_cdf(sign * r_pred[k] * inv_sd);
    max_log = std::max(max_log, weights[k]);
  }
  if (!std::isfinite(max_log)) {
    throw RuntimeAbort("particle filter: all resampling weights are zero");
  }
  double total = 0.0;
  for (double& w : weights) {
    w = std::exp(w - max_log);
    total += w;
  }
  return max_log + std::log(total / static_cast<double>(n));
}

inline double effective_sample_size(std::span<const double> weights) {
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double w : weights) {
    sum += w;
    sum_sq += w * w;
  }
  return sum_sq > 0.0 ? sum * sum / sum_sq : 0.0;
}

}  // namespace detail

/// Output of the marginal (one-step lookahead) filter.
struct MarginalFilterResult {
  /// particles[t-1] is R x p: draws of theta_t.
  std::vector<Eigen::MatrixXd> particles;
  std::vector<Eigen::MatrixXd> P_pred;
  std::vector<Eigen::MatrixXd> P_filt;
  std::vector<double> S_pred;
  int low_ess_steps = 0;

  /// Per-day particle average, T x p.
  Eigen::MatrixXd mean_path() const {
    if (particles.empty()) return {};
    Eigen::MatrixXd out(particles.size(), particles.front().cols());
    for (std::size_t t = 0; t < particles.size(); ++t) {
      out.row(static_cast<Eigen::Index>(t)) = particles[t].colwise().mean();
    }
    return out;
  }
};

/// One-step lookahead particle filter targeting the filtering marginals
/// theta_t | y_1..y_t. Particles carry Gaussian means a^(r) sharing the
/// covariance P; each step resamples by the probit predictive, draws the
/// augmentation zeta and conditions on it.
///
/// The series must be complete unless `allow_missing` is set, in which case
/// a missing day is a pure prediction step.
inline MarginalFilterResult marginal_filter(const PatientRecord& record, const ModelConfig& config, double offset,
                                            RngStream& rng, int n_particles, bool allow_missing = false) {
  if (n_particles < 2) throw std::invalid_argument("marginal_filter: need at least 2 particles");
  const int T = record.length();
  const int p = config.p;
  const int R = n_particles;
  if (!allow_missing) {
    for (Outcome y : record.y) {
      if (y == kMissing) throw std::invalid_argument("marginal_filter: series has missing outcomes");
    }
  }

  MarginalFilterResult result;
  result.particles.reserve(T);
  result.P_pred.reserve(T);
  result.P_filt.reserve(T);
  result.S_pred.reserve(T);

  Eigen::MatrixXd means = config.m0.transpose().replicate(R, 1);  // R x p
  Eigen::MatrixXd P = config.S0;
  Eigen::MatrixXd pred_means(R, p);
  Eigen::VectorXd r_pred(R);
  std::vector<double> weights;
  std::vector<std::size_t> ancestors;
  Eigen::VectorXd noise(p);

  for (int t = 1; t <= T; ++t) {
    const Transition tr = transition_at(config, record, t);
    const Eigen::VectorXd z = design_vector(record, t, p);
    Eigen::MatrixXd P_pred = tr.G * P * tr.G.transpose() + tr.W;
    P_pred = 0.5 * (P_pred + P_pred.transpose());
    const Eigen::VectorXd Pz = P_pred * z;
    const double S = z.dot(Pz) + 1.0;
    pred_means.noalias() = means * tr.G.transpose();
    r_pred.noalias() = pred_means * z;
    r_pred.array() += offset;

    const Outcome y = record.y[t - 1];
    Eigen::MatrixXd draws(R, p);
    if (y == kMissing) {
      const GaussianFactor factor(P_pred);
      for (int k = 0; k < R; ++k) {
        factor.draw(rng, noise.data());
        draws.row(k) = pred_means.row(k) + noise.transpose();
      }
      means = pred_means;
      P = P_pred;
      result.P_filt.push_back(P_pred);
    } else {
      Eigen::MatrixXd P_filt = P_pred - Pz * Pz.transpose() / S;
      P_filt = 0.5 * (P_filt + P_filt.transpose());
      const double sign = y == 1 ? 1.0 : -1.0;
      detail::probit_weights(std::span<const double>(r_pred.data(), R), sign, 1.0 / std::sqrt(S), weights);
      if (detail::effective_sample_size(weights) < R / 10.0) ++result.low_ess_steps;
      systematic_resample(weights, R, rng, ancestors);
      const GaussianFactor factor(P_filt);
      const TruncRegion region = TruncRegion::for_outcome(y);
      Eigen::MatrixXd new_means(R, p);
      for (int k = 0; k < R; ++k) {
        const auto j = static_cast<Eigen::Index>(ancestors[k]);
        const double zeta = sample_trunc_normal(r_pred[j], S, region, rng);
        new_means.row(k) = pred_means.row(j) + ((zeta - r_pred[j]) / S) * Pz.transpose();
        factor.draw(rng, noise.data());
        draws.row(k) = new_means.row(k) + noise.transpose();
      }
      means.swap(new_means);
      P = P_filt;
      result.P_filt.push_back(std::move(P_filt));
    }
    result.P_pred.push_back(std::move(P_pred));
    result.S_pred.push_back(S);
    result.particles.push_back(std::move(draws));
  }
  return result;
}

inline MarginalFilterResult marginal_filter(const PatientRecord& record, const ModelConfig& config, double offset,
                                            RngStream& rng) {
  return marginal_filter(record, config, offset, rng, config.n_particles);
}

/// One posterior trajectory draw.
struct TrajectoryDraw {
  Eigen::MatrixXd theta;       // T x p
  double log_likelihood = 0;   // probit log likelihood of theta at the offset used
  double log_evidence = 0;     // particle estimate of log g(y | offset)
  double offset = 0;           // m_i used for the draw
  int low_ess_steps = 0;
};

/// Joint trajectory sampler: particles are propagated from their current
/// imputed states, whole paths are resampled on observed days, and one path
/// is returned at the end. Missing days are propagated without resampling.
///
/// Particle states are kept component-major (p x R per day) and paths are
/// recovered through an ancestry table, so resampling never copies history.
/// Instances hold scratch buffers and are meant to be reused by one thread.
class TrajectorySampler {
 public:
  explicit TrajectorySampler(const ModelConfig& config) : config_(&config), kernel_(config), p_(config.p) {}

  TrajectoryDraw sample(const PatientRecord& record, double offset, RngStream& rng, int n_particles) {
    if (n_particles < 2) throw std::invalid_argument("joint_trajectory_sample: need at least 2 particles");
    const int T = record.length();
    const int p = p_;
    const int R = n_particles;
    const std::size_t slab = static_cast<std::size_t>(R) * p;
    states_.resize(static_cast<std::size_t>(T + 1) * slab);
    ancestry_.resize(static_cast<std::size_t>(T) * R);
    pred_.resize(slab);
    noise_.resize(slab);
    r_pred_.resize(R);
    zeta_.resize(R);
    const std::vector<int> since = days_since_change(record);
    const bool verbatim = config_->missing_propagation == MissingPropagation::kVerbatim;

    TrajectoryDraw out;
    out.offset = offset;

    double* s0 = states_.data();
    kernel_.S0_noise.draw_block(rng, s0, R);
    for (int c = 0; c < p; ++c) {
      const double m = config_->m0[c];
      for (int k = 0; k < R; ++k) s0[static_cast<std::size_t>(c) * R + k] += m;
    }

    for (int t = 1; t <= T; ++t) {
      const bool change = record.is_change(t);
      const SparseSquare& G = kernel_.transition(change);
      const GaussianFactor& noise = kernel_.noise(change);
      const double* prev = states_.data() + static_cast<std::size_t>(t - 1) * slab;
      double* cur = states_.data() + static_cast<std::size_t>(t) * slab;
      std::int32_t* anc = ancestry_.data() + static_cast<std::size_t>(t - 1) * R;
      const Outcome y = record.y[t - 1];

      if (y == kMissing) {
        if (verbatim) {
          std::copy(prev, prev + slab, cur);
        } else {
          G.apply_block(prev, cur, R);
        }
        noise.draw_block(rng, noise_.data(), R);
        for (std::size_t k = 0; k < slab; ++k) cur[k] += noise_[k];
        for (int r = 0; r < R; ++r) anc[r] = r;
        continue;
      }

      // Wz and S = z' W z + 1 with z the design vector of day t.
      const Eigen::MatrixXd& W_t = change ? config_->S0 : config_->W;
      const Eigen::VectorXd z = design_vector(record, t, p);
      const Eigen::VectorXd Wz = W_t * z;
      const double S = z.dot(Wz) + 1.0;
      const double inv_S = 1.0 / S;
      const double lag_weight = p >= 2 ? static_cast<double>(since[t - 1]) - 1.0 : 0.0;

      G.apply_block(prev, pred_.data(), R);
      design_dot_block(pred_.data(), R, lag_weight, r_pred_.data());
      for (int k = 0; k < R; ++k) r_pred_[k] += offset;

      const double sign = y == 1 ? 1.0 : -1.0;
      out.log_evidence += detail::probit_weights(r_pred_, sign, 1.0 / std::sqrt(S), weights_);
      if (detail::effective_sample_size(weights_) < R / 10.0) {
        ++out.low_ess_steps;
        logger().debug("subject {}: effective sample size below R/10 on day {}", record.id, t);
      }
      systematic_resample(weights_, R, rng, resampled_);

      // theta ~ N(a + Wz (zeta - r) / S, W - Wz z'W / S), drawn by conditioning
      // an unconstrained N(0, W) draw e on its noisy projection z'e + eta.
      const TruncRegion region = TruncRegion::for_outcome(y);
      for (int k = 0; k < R; ++k) {
        const auto j = resampled_[k];
        zeta_[k] = sample_trunc_normal(r_pred_[j], S, region, rng) - r_pred_[j];
        anc[k] = static_cast<std::int32_t>(j);
      }
      noise.draw_block(rng, noise_.data(), R);
      design_dot_block(noise_.data(), R, lag_weight, coef_buffer(R));
      for (int k = 0; k < R; ++k) {
        coef_[k] = (zeta_[k] - coef_[k] - rng.normal()) * inv_S;
      }
      for (int c = 0; c < p; ++c) {
        const double w = Wz[c];
        const double* a = pred_.data() + static_cast<std::size_t>(c) * R;
        const double* e = noise_.data() + static_cast<std::size_t>(c) * R;
        double* to = cur + static_cast<std::size_t>(c) * R;
        for (int k = 0; k < R; ++k) to[k] = a[anc[k]] + e[k] + w * coef_[k];
      }
    }

    // Pick one particle uniformly and trace its path back.
    auto r = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(R)));
    out.theta.resize(T, p);
    for (int t = T; t >= 1; --t) {
      const double* x = states_.data() + static_cast<std::size_t>(t) * slab;
      for (int c = 0; c < p; ++c) out.theta(t - 1, c) = x[static_cast<std::size_t>(c) * R + r];
      r = ancestry_[static_cast<std::size_t>(t - 1) * R + r];
    }
    out.log_likelihood = probit_loglik(record, out.theta, offset);
    return out;
  }

  TrajectoryDraw sample(const PatientRecord& record, double offset, RngStream& rng) {
    return sample(record, offset, rng, config_->n_particles);
  }

 private:
  // out[k] = z' x_k for the columns of a p x R block, with
  // lag_weight = days since change - 1.
  void design_dot_block(const double* __restrict block, int R, double lag_weight, double* __restrict out) const {
    const int p = p_;
    std::copy(block, block + R, out);
    for (int c = 1; c < p; ++c) {
      const double* __restrict row = block + static_cast<std::size_t>(c) * R;
      for (int k = 0; k < R; ++k) out[k] += row[k];
    }
    if (p >= 2) {
      const double* __restrict row = block + R;
      for (int k = 0; k < R; ++k) out[k] += lag_weight * row[k];
    }
  }

  double* coef_buffer(int R) {
    coef_.resize(R);
    return coef_.data();
  }

  const ModelConfig* config_;
  StateKernel kernel_;
  int p_;
  std::vector<double> states_;
  std::vector<std::int32_t> ancestry_;
  std::vector<double> pred_;
  std::vector<double> noise_;
  std::vector<double> r_pred_;
  std::vector<double> zeta_;
  std::vector<double> coef_;
  std::vector<double> weights_;
  std::vector<std::size_t> resampled_;
};

/// Convenience wrapper around TrajectorySampler for single calls.
inline TrajectoryDraw joint_trajectory_sample(const PatientRecord& record, const ModelConfig& config, double offset,
                                              RngStream& rng) {
  TrajectorySampler sampler(config);
  return sampler.sample(record, offset, rng);
}

/// Smoothed prior probabilities g_l of each pattern under the reference model.
struct PriorPatternTable {
  std::vector<double> g_probs;
  std::vector<long> counts;
  int draws = 0;
};

inline constexpr double kPriorPatternSmoothing = 0.5;

/// (count_l + c) / (n + c L) from pattern counts.
inline PriorPatternTable smooth_pattern_counts(std::vector<long> counts, int draws) {
  PriorPatternTable table;
  const double L = static_cast<double>(counts.size());
  const double denom = static_cast<double>(draws) + kPriorPatternSmoothing * L;
  table.g_probs.resize(counts.size());
  for (std::size_t l = 0; l < counts.size(); ++l) {
    table.g_probs[l] = (static_cast<double>(counts[l]) + kPriorPatternSmoothing) / denom;
  }
  table.counts = std::move(counts);
  table.draws = draws;
  return table;
}

/// Estimates g_l by simulating trajectories from the reference prior. The
/// events depend on gamma only, so the table does not depend on m_i or delta.
inline PriorPatternTable estimate_prior_patterns(const PatientRecord& record, const ModelConfig& config,
                                                 const PatternScheme& scheme, int n_draws, RngStream& rng) {
  if (n_draws < 1000) throw std::invalid_argument("estimate_prior_patterns: need at least 1000 draws");
  const StateKernel kernel(config);
  const int p = config.p;
  const int T = record.length();
  const std::vector<int> since = days_since_change(record);
  std::vector<char> change(T);
  for (int t = 1; t <= T; ++t) change[t - 1] = record.is_change(t) ? 1 : 0;

  std::vector<long> counts(scheme.L, 0);
  std::vector<double> prev(p), next(p), noise(p), gamma(T);
  for (int draw = 0; draw < n_draws; ++draw) {
    kernel.S0_noise.draw(rng, prev.data());
    for (int k = 0; k < p; ++k) prev[k] += config.m0[k];
    for (int t = 0; t < T; ++t) {
      kernel.transition(change[t]).apply(prev.data(), next.data());
      kernel.noise(change[t]).draw(rng, noise.data());
      for (int k = 0; k < p; ++k) next[k] += noise[k];
      gamma[t] = design_dot(next.data(), p, since[t]);
      prev.swap(next);
    }
    const int l = scheme(gamma, record.treatment_changes);
    if (l < 0 || l >= scheme.L) throw RuntimeAbort("pattern scheme returned an out-of-range code");
    ++counts[l];
  }
  return smooth_pattern_counts(std::move(counts), n_draws);
}

}  // namespace panelstate
