#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "panelstate/log.hpp"
#include "panelstate/normal_math.hpp"
#include "panelstate/rng.hpp"

namespace panelstate {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Truncation region for a scalar Gaussian, lower < upper.
struct TruncRegion {
  double lower = -kInf;
  double upper = kInf;

  static constexpr TruncRegion whole() { return {-kInf, kInf}; }
  /// Support of the augmentation variable when the outcome is 1: [0, inf).
  static constexpr TruncRegion nonnegative() { return {0.0, kInf}; }
  /// Support of the augmentation variable when the outcome is 0: (-inf, 0).
  static constexpr TruncRegion negative() { return {-kInf, 0.0}; }
  static constexpr TruncRegion for_outcome(int y) { return y == 1 ? nonnegative() : negative(); }

  bool contains(double v) const noexcept {
    if (upper == 0.0 && lower == -kInf) return v < 0.0;
    return v >= lower && v <= upper;
  }
};

namespace detail {

// Standard normal restricted to [a, inf), a finite.
inline double std_trunc_lower(double a, RngStream& rng) {
  if (a < 0.45) {
    for (;;) {
      const double z = rng.normal();
      if (z >= a) return z;
    }
  }
  // Exponential proposal with the optimal rate (Robert, 1995).
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a + rng.exponential() / rate;
    const double d = z - rate;
    if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
  }
}

// Standard normal restricted to [a, b] with 0 <= a < b < inf.
inline double std_trunc_right_tail_interval(double a, double b, RngStream& rng) {
  const double width = b - a;
  if (a < 0.45) {
    if (width < 0.5) {
      for (;;) {
        const double z = a + width * rng.uniform();
        if (rng.uniform() <= std::exp(0.5 * (a * a - z * z))) return z;
      }
    }
    for (;;) {
      const double z = std::fabs(rng.normal());
      if (z >= a && z <= b) return z;
    }
  }
  if (width * a < 1.0) {
    for (;;) {
      const double z = a + width * rng.uniform();
      if (rng.uniform() <= std::exp(0.5 * (a * a - z * z))) return z;
    }
  }
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a + rng.exponential() / rate;
    if (z > b) continue;
    const double d = z - rate;
    if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
  }
}

// Standard normal restricted to [a, b].
inline double std_trunc(double a, double b, RngStream& rng) {
  const bool lower_open = a == -kInf;
  const bool upper_open = b == kInf;
  if (lower_open && upper_open) return rng.normal();
  if (upper_open) return std_trunc_lower(a, rng);
  if (lower_open) return -std_trunc_lower(-b, rng);
  if (a >= 0.0) return std_trunc_right_tail_interval(a, b, rng);
  if (b <= 0.0) return -std_trunc_right_tail_interval(-b, -a, rng);
  // Interval straddles the mode.
  const double width = b - a;
  if (width >= 2.5066282746310002) {
    for (;;) {
      const double z = rng.normal();
      if (z >= a && z <= b) return z;
    }
  }
  for (;;) {
    const double z = a + width * rng.uniform();
    if (rng.uniform() <= std::exp(-0.5 * z * z)) return z;
  }
}

}  // namespace detail

/// Draws from N(mean, var) conditioned on `region`. Stable deep in either tail.
inline double sample_trunc_normal(double mean, double var, TruncRegion region, RngStream& rng) {
  if (!(var > 0.0) || !std::isfinite(var)) {
    throw std::invalid_argument("sample_trunc_normal: variance must be positive");
  }
  if (!(region.lower < region.upper)) {
    throw std::invalid_argument("sample_trunc_normal: empty truncation region");
  }
  const double sd = std::sqrt(var);
  const double a = (region.lower - mean) / sd;
  const double b = (region.upper - mean) / sd;
  double v = mean + sd * detail::std_trunc(a, b, rng);
  // Rounding in the affine map can step just outside a finite bound.
  if (v < region.lower) v = region.lower;
  if (v > region.upper) v = region.upper;
  if (region.upper == 0.0 && v >= 0.0) v = -std::numeric_limits<double>::denorm_min();
  return v;
}

/// log of a Gamma(shape, 1) draw. Works for arbitrarily small shapes, where
/// the draw itself would underflow.
inline double sample_log_gamma(double shape, RngStream& rng) {
  if (!(shape > 0.0)) throw std::invalid_argument("sample_log_gamma: shape must be positive");
  if (shape < 1.0) {
    // G(a) = G(a + 1) * U^(1/a)
    return sample_log_gamma(shape + 1.0, rng) + std::log(rng.uniform()) / shape;
  }
  // Marsaglia and Tsang (2000).
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

inline double sample_gamma(double shape, RngStream& rng) {
  return std::exp(sample_log_gamma(shape, rng));
}

/// Dirichlet draw computed in log space, so tiny concentration parameters
/// (e.g. 1/20) do not produce 0/0.
inline std::vector<double> sample_dirichlet(std::span<const double> alpha, RngStream& rng) {
  if (alpha.empty()) throw std::invalid_argument("sample_dirichlet: empty parameter vector");
  std::vector<double> out(alpha.size());
  double max_log = -kInf;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (!(alpha[k] > 0.0) || !std::isfinite(alpha[k])) {
      throw std::invalid_argument("sample_dirichlet: parameters must be positive");
    }
    out[k] = sample_log_gamma(alpha[k], rng);
    max_log = std::max(max_log, out[k]);
  }
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - max_log);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

/// Index drawn with probability proportional to `weights`.
/// Returns weights.size() if the total mass is zero.
inline std::size_t sample_categorical(std::span<const double> weights, RngStream& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return weights.size();
  const double target = rng.uniform() * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] > 0.0) last_positive = k;
    cumulative += weights[k];
    if (target < cumulative) return k;
  }
  return last_positive;
}

/// Systematic resampling: `count` ancestor indices, nondecreasing, with the
/// expected multiplicity of j equal to count * w_j / sum(w).
inline void systematic_resample(std::span<const double> weights, std::size_t count,
                                RngStream& rng, std::vector<std::size_t>& out) {
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || std::isnan(w)) throw std::invalid_argument("systematic_resample: negative weight");
    total += w;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw std::invalid_argument("systematic_resample: weights have no positive mass");
  }
  out.resize(count);
  const double step = total / static_cast<double>(count);
  const double offset = rng.uniform();
  double cumulative = weights[0];
  std::size_t j = 0;
  const std::size_t last = weights.size() - 1;
  for (std::size_t k = 0; k < count; ++k) {
    const double point = (offset + static_cast<double>(k)) * step;
    while (point >= cumulative && j < last) {
      ++j;
      cumulative += weights[j];
    }
    // Never land on a zero-weight index through rounding at the tail.
    while (weights[j] == 0.0 && j > 0) --j;
    out[k] = j;
  }
}

inline std::vector<std::size_t> systematic_resample(std::span<const double> weights,
                                                    std::size_t count, RngStream& rng) {
  std::vector<std::size_t> out;
  systematic_resample(weights, count, rng, out);
  return out;
}

/// Factor F with F F^T equal to a symmetric PSD matrix, used to draw
/// correlated Gaussian noise. Negative eigenvalues from rounding are
/// clipped at zero; clipping beyond `tolerance` is logged.
class GaussianFactor {
 public:
  GaussianFactor() = default;

  explicit GaussianFactor(const Eigen::MatrixXd& cov, double tolerance = 1e-10) {
    const Eigen::Index p = cov.rows();
    diagonal_ = cov.isDiagonal(0.0);
    if (diagonal_) {
      sd_.resize(p);
      for (Eigen::Index k = 0; k < p; ++k) {
        const double v = cov(k, k);
        if (v < -tolerance) clipped_ = true;
        sd_[k] = v > 0.0 ? std::sqrt(v) : 0.0;
      }
    } else {
      const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
      Eigen::VectorXd values = eig.eigenvalues();
      const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
      for (Eigen::Index k = 0; k < p; ++k) {
        if (values[k] < -tolerance * scale) clipped_ = true;
        values[k] = values[k] > 0.0 ? std::sqrt(values[k]) : 0.0;
      }
      factor_ = eig.eigenvectors() * values.asDiagonal();
    }
    if (clipped_) {
      logger().warn("covariance is not positive semidefinite; negative eigenvalues clipped at 0");
    }
  }

  Eigen::Index dim() const noexcept { return diagonal_ ? sd_.size() : factor_.rows(); }
  bool is_diagonal() const noexcept { return diagonal_; }
  bool clipped() const noexcept { return clipped_; }

  /// out = F * n with n a fresh standard normal vector.
  void draw(RngStream& rng, double* out) const {
    const Eigen::Index p = dim();
    if (diagonal_) {
      rng.fill_normal(out, static_cast<std::size_t>(p));
      for (Eigen::Index k = 0; k < p; ++k) out[k] *= sd_[k];
      return;
    }
    thread_local Eigen::VectorXd scratch;
    scratch.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) scratch[k] = rng.normal();
    Eigen::Map<Eigen::VectorXd>(out, p).noalias() = factor_ * scratch;
  }

  /// Fills a dim x count component-major block: column k of the block is an
  /// independent draw, stored at out[c * count + k].
  void draw_block(RngStream& rng, double* out, Eigen::Index count) const {
    const Eigen::Index p = dim();
    if (diagonal_) {
      for (Eigen::Index c = 0; c < p; ++c) {
        rng.fill_normal(out + c * count, static_cast<std::size_t>(count), sd_[c]);
      }
      return;
    }
    thread_local Eigen::VectorXd noise;
    thread_local Eigen::VectorXd column;
    noise.resize(p);
    column.resize(p);
    for (Eigen::Index k = 0; k < count; ++k) {
      for (Eigen::Index c = 0; c < p; ++c) noise[c] = rng.normal();
      column.noalias() = factor_ * noise;
      for (Eigen::Index c = 0; c < p; ++c) out[c * count + k] = column[c];
    }
  }

  Eigen::VectorXd draw(RngStream& rng) const {
    Eigen::VectorXd v(dim());
    draw(rng, v.data());
    return v;
  }

 private:
  bool diagonal_ = true;
  bool clipped_ = false;
  Eigen::VectorXd sd_;
  Eigen::MatrixXd factor_;
};

}  // namespace panelstate
