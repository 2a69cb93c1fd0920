#pragma once

// Reference computations used by the tests: sample statistics, dense-grid
// quadrature for scalar state-space models, and small builders.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelstate/panelstate.hpp"

namespace oracle {

using panelstate::ModelConfig;
using panelstate::Outcome;
using panelstate::PatientRecord;

// ---------------------------------------------------------------- statistics

struct SampleMoments {
  double mean = 0.0;
  double var = 0.0;
  double se_mean = 0.0;
  double se_var = 0.0;
  std::size_t n = 0;
};

inline SampleMoments moments(const std::vector<double>& v) {
  SampleMoments m;
  m.n = v.size();
  const double n = static_cast<double>(v.size());
  for (double x : v) m.mean += x;
  m.mean /= n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double x : v) {
    const double d = x - m.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m4 /= n;
  m.var = m2 * n / (n - 1.0);
  m.se_mean = std::sqrt(m.var / n);
  m.se_var = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
  return m;
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
inline double batch_means_se(const std::vector<double>& v, int batches = 50) {
  const std::size_t size = v.size() / batches;
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < size; ++k) s += v[b * size + k];
    means.push_back(s / static_cast<double>(size));
  }
  return moments(means).se_mean;
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
inline double ks_statistic(std::vector<double> v, const std::function<double(double)>& cdf) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double f = cdf(v[k]);
    d = std::max({d, f - k / n, (k + 1) / n - f});
  }
  return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

/// Asymptotic KS critical value at level 0.01 for effective sample size n.
inline double ks_critical_01(double n) { return 1.6276 / std::sqrt(n); }

// ---------------------------------------------------------------- builders

inline PatientRecord make_record(const std::string& id, const std::vector<int>& y, std::vector<int> changes = {1},
                                 Eigen::VectorXd x = Eigen::VectorXd::Ones(1)) {
  PatientRecord r;
  r.id = id;
  for (int v : y) r.y.push_back(static_cast<Outcome>(v));
  r.treatment_changes = std::move(changes);
  r.x = std::move(x);
  return r;
}

/// Scalar state: theta_0 ~ N(m0, s0), theta_t = g theta_{t-1} + N(0, w),
/// with (g_star, s0) on change days.
inline ModelConfig scalar_config(double g = 1.0, double w = 1.0, double g_star = 1.0, double s0 = 1.0,
                                 double m0 = 0.0) {
  ModelConfig c = ModelConfig::appendix_b_default(1);
  c.G = Eigen::MatrixXd::Constant(1, 1, g);
  c.W = Eigen::MatrixXd::Constant(1, 1, w);
  c.G_star = Eigen::MatrixXd::Constant(1, 1, g_star);
  c.S0 = Eigen::MatrixXd::Constant(1, 1, s0);
  c.m0 = Eigen::VectorXd::Constant(1, m0);
  return c;
}

// ---------------------------------------------------------------- quadrature

inline double gauss(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

inline double probit_factor(int y, double score) {
  if (y < 0) return 1.0;
  return 0.5 * std::erfc(-(y == 1 ? score : -score) / std::sqrt(2.0));
}

/// Posterior moments of a scalar model with T <= 2 days, day 1 a change day.
struct GridMoments {
  std::vector<double> filter_mean, filter_var;  // theta_t | y_1..y_t
  std::vector<double> smooth_mean, smooth_var;  // theta_t | y_1..y_T
};

/// Dense tensor-grid quadrature with the given step over [-range, range].
inline GridMoments scalar_posterior_grid(const std::vector<int>& y, double offset, double g, double w,
                                         double g_star, double s0, double m0, double step = 1e-3,
                                         double range = 10.0) {
  const int T = static_cast<int>(y.size());
  if (T < 1 || T > 2) throw std::invalid_argument("scalar_posterior_grid: T must be 1 or 2");
  const int n = static_cast<int>(std::lround(2.0 * range / step)) + 1;
  std::vector<double> grid(n);
  for (int k = 0; k < n; ++k) grid[k] = -range + k * step;
  // theta_1 prior: g_star theta_0 + N(0, s0).
  const double mean1 = g_star * m0;
  const double var1 = g_star * g_star * s0 + s0;
  std::vector<double> a(n);  // prior(theta_1) * f_1(theta_1)
  for (int k = 0; k < n; ++k) a[k] = gauss(grid[k], mean1, var1) * probit_factor(y[0], grid[k] + offset);

  auto summarize = [&](const std::vector<double>& density, double& mean, double& var) {
    double z = 0.0, s1 = 0.0, s2 = 0.0;
    for (int k = 0; k < n; ++k) {
      z += density[k];
      s1 += density[k] * grid[k];
      s2 += density[k] * grid[k] * grid[k];
    }
    mean = s1 / z;
    var = s2 / z - mean * mean;
  };

  GridMoments out;
  out.filter_mean.resize(T);
  out.filter_var.resize(T);
  out.smooth_mean.resize(T);
  out.smooth_var.resize(T);
  summarize(a, out.filter_mean[0], out.filter_var[0]);
  if (T == 1) {
    out.smooth_mean = out.filter_mean;
    out.smooth_var = out.filter_var;
    return out;
  }
  // Transition kernel N(theta_2; g theta_1, w) on the tensor grid. With g = 1
  // it depends on the index difference only.
  std::vector<double> f2(n);
  for (int k = 0; k < n; ++k) f2[k] = probit_factor(y[1], grid[k] + offset);
  std::vector<double> joint2(n, 0.0);  // density of theta_2 (before f_2)
  std::vector<double> back(n, 0.0);    // integral over theta_2 given theta_1
  if (g == 1.0) {
    std::vector<double> kernel(2 * n - 1);
    for (int d = -(n - 1); d <= n - 1; ++d) kernel[d + n - 1] = gauss(d * step, 0.0, w);
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      const double* kj = kernel.data() + j + n - 1;
      for (int i = 0; i < n; ++i) s += a[i] * kj[-i];
      joint2[j] = s;
    }
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      const double* ki = kernel.data() + n - 1 - i;
      for (int j = 0; j < n; ++j) s += ki[j] * f2[j];
      back[i] = s;
    }
  } else {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double k = gauss(grid[j], g * grid[i], w);
        joint2[j] += a[i] * k;
        back[i] += k * f2[j];
      }
    }
  }
  std::vector<double> post2(n), post1(n);
  for (int k = 0; k < n; ++k) {
    post2[k] = joint2[k] * f2[k];
    post1[k] = a[k] * back[k];
  }
  summarize(post2, out.filter_mean[1], out.filter_var[1]);
  out.smooth_mean[1] = out.filter_mean[1];
  out.smooth_var[1] = out.filter_var[1];
  summarize(post1, out.smooth_mean[0], out.smooth_var[0]);
  return out;
}

/// Reference-model mass of {mean(theta_1..theta_T) >= cut} jointly with the
/// data, and without data, for a scalar random walk with day 1 a change day.
/// A lattice recursion over (theta_t, running sum); boundary lattice points
/// of the sum get half weight.
struct MeanEventMass {
  double with_data_hi = 0.0;  // P(y, mean >= cut)
  double with_data_lo = 0.0;  // P(y, mean < cut)
  double prior_hi = 0.0;      // P(mean >= cut)
};

inline MeanEventMass scalar_mean_event_lattice(const std::vector<int>& y, double offset, double w, double s0,
                                               double cut, double step, double range) {
  const int T = static_cast<int>(y.size());
  const int half = static_cast<int>(std::lround(range / step));
  const int n = 2 * half + 1;
  const int n_sum = T * (n - 1) + 1;  // sum index = sum of (index) with offset T*half
  auto value = [&](int k) { return (k - half) * step; };
  // alpha[k][s]: theta_t at lattice k, running sum lattice s.
  std::vector<double> alpha(static_cast<std::size_t>(n) * n_sum, 0.0);
  std::vector<double> alpha_prior(alpha.size(), 0.0);
  const double var1 = 2.0 * s0;  // theta_0 ~ N(0, s0), then + N(0, s0)
  for (int k = 0; k < n; ++k) {
    const double p = gauss(value(k), 0.0, var1) * step;
    alpha[static_cast<std::size_t>(k) * n_sum + k] = p * probit_factor(y[0], value(k) + offset);
    alpha_prior[static_cast<std::size_t>(k) * n_sum + k] = p;
  }
  std::vector<double> kernel(2 * n - 1);
  for (int d = -(n - 1); d <= n - 1; ++d) kernel[d + n - 1] = gauss(d * step, 0.0, w) * step;
  int max_sum = n - 1;
  for (int t = 1; t < T; ++t) {
    std::vector<double> next(alpha.size(), 0.0);
    std::vector<double> next_prior(alpha.size(), 0.0);
    for (int j = 0; j < n; ++j) {
      const double f = probit_factor(y[t], value(j) + offset);
      double* out = next.data() + static_cast<std::size_t>(j) * n_sum;
      double* out_prior = next_prior.data() + static_cast<std::size_t>(j) * n_sum;
      for (int i = 0; i < n; ++i) {
        const double k = kernel[j - i + n - 1];
        if (k < 1e-300) continue;
        const double* in = alpha.data() + static_cast<std::size_t>(i) * n_sum;
        const double* in_prior = alpha_prior.data() + static_cast<std::size_t>(i) * n_sum;
        const double kf = k * f;
        for (int s = 0; s <= max_sum; ++s) {
          out[s + j] += kf * in[s];
          out_prior[s + j] += k * in_prior[s];
        }
      }
    }
    alpha.swap(next);
    alpha_prior.swap(next_prior);
    max_sum += n - 1;
  }
  // sum value = (s - T*half) * step; event: sum >= T*cut.
  const double threshold = T * cut / step + T * half;
  MeanEventMass out;
  for (int k = 0; k < n; ++k) {
    for (int s = 0; s < n_sum; ++s) {
      const std::size_t at = static_cast<std::size_t>(k) * n_sum + s;
      double weight_hi;
      if (std::fabs(s - threshold) < 1e-9) {
        weight_hi = 0.5;
      } else {
        weight_hi = s > threshold ? 1.0 : 0.0;
      }
      out.with_data_hi += weight_hi * alpha[at];
      out.with_data_lo += (1.0 - weight_hi) * alpha[at];
      out.prior_hi += weight_hi * alpha_prior[at];
    }
  }
  return out;
}

}  // namespace oracle
