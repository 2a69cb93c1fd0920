#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelstate/errors.hpp"
#include "panelstate/events.hpp"
#include "panelstate/normal_math.hpp"
#include "panelstate/stochastics.hpp"

namespace panelstate {

/// Daily outcome: 0, 1 or missing.
using Outcome = std::int8_t;
inline constexpr Outcome kMissing = -1;

/// One subject's binary series with baseline covariates and treatment history.
struct PatientRecord {
  std::string id;
  std::vector<Outcome> y;
  Eigen::VectorXd x;
  /// 1-based days on which a treatment starts; always contains day 1.
  std::vector<int> treatment_changes{1};
  /// Treatment label per day; may be empty when labels are not tracked.
  std::vector<std::string> treatment_id;

  int length() const noexcept { return static_cast<int>(y.size()); }

  bool is_change(int t) const {
    return std::binary_search(treatment_changes.begin(), treatment_changes.end(), t);
  }

  std::size_t observed_count() const {
    return static_cast<std::size_t>(std::count_if(y.begin(), y.end(), [](Outcome v) { return v != kMissing; }));
  }

  void validate() const {
    const int T = length();
    if (T < 1) throw DataError("patient " + id + ": empty outcome series");
    for (Outcome v : y) {
      if (v != 0 && v != 1 && v != kMissing) throw DataError("patient " + id + ": outcome not in {0,1,missing}");
    }
    if (treatment_changes.empty() || treatment_changes.front() != 1) {
      throw DataError("patient " + id + ": treatment changes must include day 1");
    }
    if (!std::is_sorted(treatment_changes.begin(), treatment_changes.end()) ||
        std::adjacent_find(treatment_changes.begin(), treatment_changes.end()) != treatment_changes.end()) {
      throw DataError("patient " + id + ": treatment changes must be strictly increasing");
    }
    if (treatment_changes.back() > T) throw DataError("patient " + id + ": treatment change after last day");
    if (!treatment_id.empty()) {
      if (static_cast<int>(treatment_id.size()) != T) {
        throw DataError("patient " + id + ": treatment labels do not cover every day");
      }
      for (int t = 2; t <= T; ++t) {
        if (treatment_id[t - 1] != treatment_id[t - 2] && !is_change(t)) {
          throw DataError("patient " + id + ": treatment label changes outside a change day");
        }
      }
    }
  }
};

/// Days since the most recent treatment change, per day (index t-1 for day t).
inline std::vector<int> days_since_change(const PatientRecord& record) {
  const int T = record.length();
  std::vector<int> out(T);
  int last = 1;
  for (int t = 1; t <= T; ++t) {
    if (record.is_change(t)) last = t;
    out[t - 1] = t - last;
  }
  return out;
}

/// Design vector z_t = (1, days since change, 1, ..., 1) truncated to p.
inline Eigen::VectorXd design_vector(const PatientRecord& record, int t, int p) {
  if (t < 1 || t > record.length()) throw std::out_of_range("design_vector: day out of range");
  if (p < 1) throw std::invalid_argument("design_vector: state dimension must be positive");
  int last = 1;
  for (int c : record.treatment_changes) {
    if (c <= t) last = c;
  }
  Eigen::VectorXd z = Eigen::VectorXd::Ones(p);
  if (p >= 2) z[1] = static_cast<double>(t - last);
  return z;
}

/// z_t' v for the design above, given days since change.
inline double design_dot(const double* v, int p, int since_change) noexcept {
  double s = 0.0;
  for (int k = 0; k < p; ++k) s += v[k];
  if (p >= 2) s += (static_cast<double>(since_change) - 1.0) * v[1];
  return s;
}

enum class MissingPropagation {
  kApplyTransition,  // theta_t ~ N(G_t theta_{t-1}, W_t)
  kVerbatim,         // theta_t ~ N(theta_{t-1}, W_t)
};

/// State-space matrices, clustering hyperparameters and sampler sizes.
struct ModelConfig {
  int p = 12;
  Eigen::MatrixXd G;
  Eigen::MatrixXd W;
  Eigen::MatrixXd G_star;
  Eigen::MatrixXd S0;
  Eigen::VectorXd m0;
  std::optional<Eigen::VectorXd> delta_prior_mean;
  std::optional<Eigen::MatrixXd> delta_prior_cov;
  double M = 10.0;
  double sigma = -1.0;
  int L = 8;
  std::vector<double> dirichlet_a;
  int n_particles = 200;
  int prior_mc_draws = 10000;
  EventThresholds events;
  MissingPropagation missing_propagation = MissingPropagation::kApplyTransition;

  /// Occupied-cluster bound implied by (M, sigma); 0 means unbounded.
  int cluster_cap() const {
    if (sigma >= 0.0) return 0;
    return static_cast<int>(std::lround(M / -sigma));
  }

  /// Defaults: transition/evolution/initial matrices for daily data.
  static ModelConfig appendix_b_default(int p = 12) {
    ModelConfig c;
    c.p = p;
    c.G = default_G(p);
    c.W = default_W(p);
    c.G_star = default_G_star(p);
    c.S0 = default_S0(p);
    c.m0 = Eigen::VectorXd::Zero(p);
    c.dirichlet_a.assign(c.L, 1.0 / 20.0);
    return c;
  }

  // Random walks on components 1-2; component 3 is a fresh shock each day and
  // components 4..p carry it forward as a lag chain.
  static Eigen::MatrixXd default_G(int p) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p, p);
    for (int k = 0; k < std::min(p, 2); ++k) G(k, k) = 1.0;
    for (int k = 3; k < p; ++k) G(k, k - 1) = 1.0;
    return G;
  }

  static Eigen::MatrixXd default_W(int p) {
    Eigen::VectorXd d = Eigen::VectorXd::Constant(p, 1e-4);
    if (p > 0) d[0] = 1e-3 / 3.0;
    if (p > 1) d[1] = 1e-3 / (365.0 * 365.0);
    if (p > 2) d[2] = 1e-2;
    return d.asDiagonal();
  }

  // First row averages all components, remaining rows reset.
  static Eigen::MatrixXd default_G_star(int p) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p, p);
    G.row(0).setConstant(1.0 / static_cast<double>(p));
    return G;
  }

  static Eigen::MatrixXd default_S0(int p) {
    Eigen::VectorXd d = Eigen::VectorXd::Constant(p, 1e-2);
    for (int k = 0; k < std::min(p, 2); ++k) d[k] = 1e-4;
    return d.asDiagonal();
  }

  void validate() const {
    if (p < 1) throw ConfigError("p must be >= 1");
    check_shape("G", G, p, p);
    check_shape("W", W, p, p);
    check_shape("G_star", G_star, p, p);
    check_shape("S0", S0, p, p);
    if (m0.size() != p) throw ConfigError("m0 must have length p = " + std::to_string(p));
    check_finite("G", G);
    check_finite("G_star", G_star);
    check_finite("m0", m0);
    check_spd("W", W);
    check_spd("S0", S0);
    if (delta_prior_cov) check_spd("delta_prior_cov", *delta_prior_cov);
    if (delta_prior_mean && delta_prior_cov && delta_prior_mean->size() != delta_prior_cov->rows()) {
      throw ConfigError("delta_prior_mean and delta_prior_cov dimensions differ");
    }
    if (!(sigma < 1.0)) throw ConfigError("sigma must be < 1");
    if (!(M > -sigma)) throw ConfigError("M must exceed -sigma");
    if (sigma < 0.0) {
      const double k = M / -sigma;
      if (std::fabs(k - std::round(k)) > 1e-9) {
        throw ConfigError("M must equal -k * sigma for an integer k when sigma < 0 (got M/-sigma = " +
                          std::to_string(k) + ")");
      }
    }
    if (L < 1) throw ConfigError("L must be >= 1");
    if (static_cast<int>(dirichlet_a.size()) != L) {
      throw ConfigError("dirichlet_a must have length L = " + std::to_string(L));
    }
    for (double a : dirichlet_a) {
      if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("dirichlet_a entries must be positive");
    }
    if (n_particles < 2) throw ConfigError("n_particles must be >= 2");
    if (prior_mc_draws < 1000) throw ConfigError("prior_mc_draws must be >= 1000");
    events.validate();
  }

  static void check_shape(const char* name, const Eigen::MatrixXd& m, int rows, int cols) {
    if (m.rows() != rows || m.cols() != cols) {
      std::ostringstream os;
      os << name << " must be " << rows << "x" << cols << " (got " << m.rows() << "x" << m.cols() << ")";
      throw ConfigError(os.str());
    }
  }

  template <typename Derived>
  static void check_finite(const char* name, const Eigen::MatrixBase<Derived>& m) {
    if (!m.allFinite()) throw ConfigError(std::string(name) + " has non-finite entries");
  }

  static void check_spd(const char* name, const Eigen::MatrixXd& m) {
    check_finite(name, m);
    if (m.rows() != m.cols()) throw ConfigError(std::string(name) + " must be square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw ConfigError(std::string(name) + " must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
    const double smallest = eig.eigenvalues().minCoeff();
    if (!(smallest > 0.0)) {
      std::ostringstream os;
      os << name << " is not positive definite (smallest eigenvalue " << smallest << ")";
      throw ConfigError(os.str());
    }
  }
};

/// Static probit coefficients.
struct GlobalParams {
  Eigen::VectorXd delta;
};

/// Sparse square matrix in compressed-row form.
class SparseSquare {
 public:
  SparseSquare() = default;
  explicit SparseSquare(const Eigen::MatrixXd& m) : dim_(static_cast<int>(m.rows())) {
    row_start_.push_back(0);
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) {
        if (m(r, c) != 0.0) {
          cols_.push_back(c);
          values_.push_back(m(r, c));
        }
      }
      row_start_.push_back(static_cast<int>(cols_.size()));
    }
  }

  /// out = M * in; `out` must not alias `in`.
  void apply(const double* in, double* out) const noexcept {
    const int* cols = cols_.data();
    const double* values = values_.data();
    for (int r = 0; r < dim_; ++r) {
      double s = 0.0;
      for (int k = row_start_[r]; k < row_start_[r + 1]; ++k) s += values[k] * in[cols[k]];
      out[r] = s;
    }
  }

  /// Applies M to every column of a dim x count component-major block.
  void apply_block(const double* in, double* out, int count) const noexcept {
    for (int r = 0; r < dim_; ++r) {
      double* dst = out + static_cast<std::size_t>(r) * count;
      const int begin = row_start_[r];
      const int end = row_start_[r + 1];
      if (begin == end) {
        std::fill(dst, dst + count, 0.0);
        continue;
      }
      {
        const double v = values_[begin];
        const double* src = in + static_cast<std::size_t>(cols_[begin]) * count;
        for (int k = 0; k < count; ++k) dst[k] = v * src[k];
      }
      for (int e = begin + 1; e < end; ++e) {
        const double v = values_[e];
        const double* src = in + static_cast<std::size_t>(cols_[e]) * count;
        for (int k = 0; k < count; ++k) dst[k] += v * src[k];
      }
    }
  }

  bool is_identity() const noexcept {
    if (static_cast<int>(cols_.size()) != dim_) return false;
    for (int r = 0; r < dim_; ++r) {
      if (row_start_[r + 1] - row_start_[r] != 1 || cols_[row_start_[r]] != r || values_[row_start_[r]] != 1.0) {
        return false;
      }
    }
    return true;
  }

 private:
  int dim_ = 0;
  std::vector<int> row_start_;
  std::vector<int> cols_;
  std::vector<double> values_;
};

/// Precomputed transition pieces shared by prior simulation and the filters.
struct StateKernel {
  int p = 0;
  SparseSquare G;
  SparseSquare G_star;
  GaussianFactor W_noise;
  GaussianFactor S0_noise;

  explicit StateKernel(const ModelConfig& c)
      : p(c.p), G(c.G), G_star(c.G_star), W_noise(c.W), S0_noise(c.S0) {}

  const SparseSquare& transition(bool change) const noexcept { return change ? G_star : G; }
  const GaussianFactor& noise(bool change) const noexcept { return change ? S0_noise : W_noise; }
};

/// (G_t, W_t) for 1-based day t: (G_star, S0) on treatment-change days.
struct Transition {
  const Eigen::MatrixXd& G;
  const Eigen::MatrixXd& W;
};

inline Transition transition_at(const ModelConfig& config, const PatientRecord& record, int t) {
  if (t < 1 || t > record.length()) throw std::out_of_range("transition_at: day out of range");
  if (record.is_change(t)) return {config.G_star, config.S0};
  return {config.G, config.W};
}

/// gamma_t = z_t' theta_t for every day; theta is T x p.
inline Eigen::VectorXd compute_gamma(const PatientRecord& record, const Eigen::MatrixXd& theta) {
  const int T = record.length();
  if (theta.rows() != T) throw std::invalid_argument("compute_gamma: theta must have T rows");
  const int p = static_cast<int>(theta.cols());
  const std::vector<int> since = days_since_change(record);
  Eigen::VectorXd gamma(T);
  Eigen::RowVectorXd row(p);
  for (int t = 0; t < T; ++t) {
    row = theta.row(t);
    gamma[t] = design_dot(row.data(), p, since[t]);
  }
  return gamma;
}

/// Probit log likelihood of the observed days with offset mu; missing days
/// contribute nothing.
inline double probit_loglik(const PatientRecord& record, const Eigen::MatrixXd& theta, double mu) {
  const Eigen::VectorXd gamma = compute_gamma(record, theta);
  double total = 0.0;
  for (int t = 0; t < record.length(); ++t) {
    const Outcome y = record.y[t];
    if (y == kMissing) continue;
    const double score = mu + gamma[t];
    total += normal_log_cdf(y == 1 ? score : -score);
  }
  return total;
}

/// Draw theta_{1:T} from the state model, starting at theta_0 ~ N(m0, S0).
inline Eigen::MatrixXd simulate_prior_trajectory(const ModelConfig& config, const StateKernel& kernel,
                                                 const PatientRecord& record, RngStream& rng) {
  const int p = config.p;
  const int T = record.length();
  Eigen::MatrixXd theta(T, p);
  Eigen::VectorXd prev = config.m0;
  Eigen::VectorXd noise(p);
  Eigen::VectorXd next(p);
  kernel.S0_noise.draw(rng, noise.data());
  prev += noise;
  for (int t = 1; t <= T; ++t) {
    const bool change = record.is_change(t);
    kernel.transition(change).apply(prev.data(), next.data());
    kernel.noise(change).draw(rng, noise.data());
    next += noise;
    theta.row(t - 1) = next.transpose();
    prev.swap(next);
  }
  return theta;
}

inline Eigen::MatrixXd simulate_prior_trajectory(const ModelConfig& config, const PatientRecord& record,
                                                 RngStream& rng) {
  const StateKernel kernel(config);
  return simulate_prior_trajectory(config, kernel, record, rng);
}

/// Current latent trajectory of one subject with its derived quantities.
struct SubjectState {
  Eigen::MatrixXd theta;
  Eigen::VectorXd gamma;
  int R = 0;
  int rho = -1;

  void set_theta(const PatientRecord& record, Eigen::MatrixXd new_theta, const PatternScheme& scheme) {
    theta = std::move(new_theta);
    gamma = compute_gamma(record, theta);
    R = scheme(std::span<const double>(gamma.data(), gamma.size()), record.treatment_changes);
  }
};

}  // namespace panelstate
