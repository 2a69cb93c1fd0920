#include <gtest/gtest.h>

#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "panelstate/normal_math.hpp"
#include "panelstate/rng.hpp"
#include "panelstate/stochastics.hpp"

using namespace panelstate;

TEST(RngStream, SameKeyGivesSameSequence) {
  RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  for (int k = 0; k < 1000; ++k) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
    EXPECT_NE(x, d());
  }
}

TEST(RngStream, StreamKeyDependsOnOrderAndValues) {
  EXPECT_EQ(RngStream::stream_key({1, 2, 3}), RngStream::stream_key({1, 2, 3}));
  EXPECT_NE(RngStream::stream_key({1, 2, 3}), RngStream::stream_key({1, 3, 2}));
  EXPECT_NE(RngStream::stream_key({1, 2}), RngStream::stream_key({1, 2, 0}));
}

TEST(RngStream, FillNormalMatchesRepeatedNormal) {
  RngStream a(5, 9), b(5, 9);
  std::vector<double> block(5000);
  a.fill_normal(block.data(), block.size(), 2.5);
  for (double v : block) ASSERT_EQ(v, 2.5 * b.normal());
  EXPECT_EQ(a.position(), b.position());
}

TEST(RngStream, UniformInOpenUnitInterval) {
  RngStream rng(1, 1);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_GT(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(RngStream, NormalPassesKolmogorovSmirnov) {
  RngStream rng(3, 4);
  std::vector<double> v(100000);
  for (double& x : v) x = rng.normal();
  const double d = oracle::ks_statistic(v, [](double x) { return normal_cdf(x); });
  EXPECT_LT(d, oracle::ks_critical_01(v.size()));
  const auto m = oracle::moments(v);
  EXPECT_NEAR(m.mean, 0.0, 4 * m.se_mean);
  EXPECT_NEAR(m.var, 1.0, 4 * m.se_var);
}

TEST(RngStream, NormalTailFrequencyMatches) {
  RngStream rng(11, 0);
  const int n = 2000000;
  int beyond = 0;
  for (int k = 0; k < n; ++k) beyond += std::fabs(rng.normal()) > 3.442619855899 ? 1 : 0;
  const double p = 2.0 * normal_sf(3.442619855899);
  EXPECT_NEAR(static_cast<double>(beyond) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST(RngStream, BelowIsUniformOverRange) {
  RngStream rng(2, 2);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int k = 0; k < n; ++k) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 4.0 * std::sqrt(n * (1.0 / 7) * (6.0 / 7)));
}

TEST(TruncNormal, HalfNormalMean) {
  RngStream rng(7, 1);
  std::vector<double> v(1000000);
  for (double& x : v) x = sample_trunc_normal(0.0, 1.0, TruncRegion::nonnegative(), rng);
  const auto m = oracle::moments(v);
  EXPECT_GE(*std::min_element(v.begin(), v.end()), 0.0);
  EXPECT_NEAR(m.mean, std::sqrt(2.0 / M_PI), 4 * m.se_mean);
}

TEST(TruncNormal, UntruncatedIsNormal) {
  RngStream rng(7, 2);
  std::vector<double> v(50000);
  for (double& x : v) x = sample_trunc_normal(1.5, 4.0, TruncRegion::whole(), rng);
  const double d = oracle::ks_statistic(v, [](double x) { return normal_cdf((x - 1.5) / 2.0); });
  EXPECT_LT(d, oracle::ks_critical_01(v.size()));
}

TEST(TruncNormal, FarTailMeanMatchesQuadrature) {
  // Tail mean of N(0,1) beyond 5 by 1-D quadrature.
  double num = 0.0, den = 0.0;
  for (double x = 5.0; x < 30.0; x += 1e-5) {
    const double w = std::exp(-0.5 * x * x);
    num += w * x;
    den += w;
  }
  const double tail_mean = num / den;
  EXPECT_NEAR(tail_mean, 5.1865, 1e-4);

  RngStream rng(7, 3);
  std::vector<double> v(200000);
  for (double& x : v) x = sample_trunc_normal(0.0, 1.0, TruncRegion{5.0, kInf}, rng);
  EXPECT_GE(*std::min_element(v.begin(), v.end()), 5.0);
  const auto m = oracle::moments(v);
  EXPECT_NEAR(m.mean, tail_mean, 4 * m.se_mean);
}

TEST(TruncNormal, StaysInsideRegionForExtremeInputs) {
  RngStream rng(8, 1);
  const std::vector<TruncRegion> regions{{-kInf, 0.0}, {0.0, kInf}, {40.0, kInf}, {-kInf, -40.0},
                                         {8.0, 8.001}, {-3.0, 3.0}, {35.0, 36.0}, {-1e-9, 1e-9}};
  for (const auto& r : regions) {
    for (double mean : {-50.0, -5.0, 0.0, 5.0, 50.0}) {
      for (int k = 0; k < 2000; ++k) {
        const double v = sample_trunc_normal(mean, 1.0, r, rng);
        ASSERT_TRUE(std::isfinite(v));
        ASSERT_TRUE(r.contains(v)) << v << " outside [" << r.lower << ", " << r.upper << "] mean " << mean;
      }
    }
  }
}

TEST(TruncNormal, IntervalMatchesCdf) {
  RngStream rng(8, 2);
  std::vector<double> v(50000);
  const double a = -0.5, b = 1.2;
  for (double& x : v) x = sample_trunc_normal(0.0, 1.0, TruncRegion{a, b}, rng);
  const double za = normal_cdf(a), zb = normal_cdf(b);
  const double d = oracle::ks_statistic(v, [&](double x) { return (normal_cdf(x) - za) / (zb - za); });
  EXPECT_LT(d, oracle::ks_critical_01(v.size()));
}

TEST(TruncNormal, RejectsBadInput) {
  RngStream rng(1, 1);
  EXPECT_THROW(sample_trunc_normal(0.0, 0.0, TruncRegion::whole(), rng), std::invalid_argument);
  EXPECT_THROW(sample_trunc_normal(0.0, -1.0, TruncRegion::whole(), rng), std::invalid_argument);
  EXPECT_THROW(sample_trunc_normal(0.0, 1.0, TruncRegion{1.0, 1.0}, rng), std::invalid_argument);
}

TEST(Dirichlet, SymmetricUniformMean) {
  RngStream rng(9, 1);
  const std::vector<double> alpha{1, 1, 1};
  std::vector<std::vector<double>> cols(3);
  for (int k = 0; k < 100000; ++k) {
    const auto d = sample_dirichlet(alpha, rng);
    for (int l = 0; l < 3; ++l) cols[l].push_back(d[l]);
  }
  for (const auto& c : cols) {
    const auto m = oracle::moments(c);
    EXPECT_NEAR(m.mean, 1.0 / 3.0, 4 * m.se_mean);
  }
}

TEST(Dirichlet, TinyShapesConcentrateOnCorners) {
  RngStream rng(9, 2);
  const std::vector<double> alpha(8, 1.0 / 20.0);
  const int n = 100000;
  std::vector<std::vector<double>> cols(8);
  int corner = 0;
  for (int k = 0; k < n; ++k) {
    const auto d = sample_dirichlet(alpha, rng);
    double total = 0.0;
    for (int l = 0; l < 8; ++l) {
      ASSERT_GE(d[l], 0.0);
      total += d[l];
      cols[l].push_back(d[l]);
    }
    ASSERT_NEAR(total, 1.0, 1e-12);
    corner += *std::max_element(d.begin(), d.end()) > 0.99 ? 1 : 0;
  }
  for (const auto& c : cols) {
    const auto m = oracle::moments(c);
    EXPECT_NEAR(m.mean, 1.0 / 8.0, 4 * m.se_mean);
  }
  // A coordinate exceeds 0.99 with probability P(Beta(a, 7a) > 0.99); the
  // eight events are disjoint.
  const double expected = 8.0 * boost::math::ibetac(1.0 / 20.0, 7.0 / 20.0, 0.99);
  const double freq = static_cast<double>(corner) / n;
  EXPECT_NEAR(freq, expected, 4.0 * std::sqrt(expected * (1.0 - expected) / n));
}

TEST(Dirichlet, ExtremelySmallShapesStayOnSimplex) {
  RngStream rng(9, 3);
  const std::vector<double> alpha{1e-4, 1e-3, 2.0, 1e-5};
  for (int k = 0; k < 20000; ++k) {
    const auto d = sample_dirichlet(alpha, rng);
    double total = 0.0;
    for (double v : d) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0);
      total += v;
    }
    ASSERT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Dirichlet, RejectsNonPositiveShape) {
  RngStream rng(1, 1);
  EXPECT_THROW(sample_dirichlet(std::vector<double>{1.0, 0.0}, rng), std::invalid_argument);
  EXPECT_THROW(sample_dirichlet(std::vector<double>{1.0, -2.0}, rng), std::invalid_argument);
}

TEST(Gamma, MeanAndVarianceForSmallAndLargeShapes) {
  RngStream rng(10, 1);
  for (double shape : {0.05, 0.7, 1.0, 3.5, 40.0}) {
    std::vector<double> v(200000);
    for (double& x : v) x = sample_gamma(shape, rng);
    const auto m = oracle::moments(v);
    EXPECT_NEAR(m.mean, shape, 4 * m.se_mean) << "shape " << shape;
    EXPECT_NEAR(m.var, shape, 4 * m.se_var) << "shape " << shape;
  }
}

TEST(Categorical, FrequenciesMatchWeights) {
  RngStream rng(12, 1);
  const std::vector<double> w{0.5, 0.0, 2.0, 1.5};
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int k = 0; k < n; ++k) ++counts[sample_categorical(w, rng)];
  EXPECT_EQ(counts[1], 0);
  for (int l : {0, 2, 3}) {
    const double p = w[l] / 4.0;
    EXPECT_NEAR(counts[l], n * p, 4 * std::sqrt(n * p * (1 - p)));
  }
}

TEST(Categorical, ZeroMassReturnsSize) {
  RngStream rng(12, 2);
  const std::vector<double> w{0.0, 0.0};
  EXPECT_EQ(sample_categorical(w, rng), w.size());
}

TEST(SystematicResample, UniformWeightsGiveFloorOrCeil) {
  RngStream rng(13, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 7, R = 23;
    const std::vector<double> w(n, 0.3);
    const auto idx = systematic_resample(w, R, rng);
    ASSERT_EQ(idx.size(), R);
    std::vector<int> counts(n, 0);
    for (auto j : idx) ++counts[j];
    for (int c : counts) {
      EXPECT_TRUE(c == static_cast<int>(R / n) || c == static_cast<int>(R / n + 1));
    }
  }
}

TEST(SystematicResample, DegenerateMassCopiesOneIndex) {
  RngStream rng(13, 2);
  const auto idx = systematic_resample(std::vector<double>{1.0, 0.0, 0.0}, 50, rng);
  for (auto j : idx) EXPECT_EQ(j, 0u);
}

TEST(SystematicResample, ThreeToOneForEveryOffset) {
  for (std::uint64_t s = 0; s < 500; ++s) {
    RngStream rng(14, s);
    const auto idx = systematic_resample(std::vector<double>{0.75, 0.25}, 4, rng);
    EXPECT_EQ(std::count(idx.begin(), idx.end(), 0u), 3);
    EXPECT_EQ(std::count(idx.begin(), idx.end(), 1u), 1);
  }
}

TEST(SystematicResample, UnbiasedMultiplicities) {
  RngStream rng(13, 3);
  const std::vector<double> w{0.1, 0.35, 0.05, 0.5};
  std::vector<double> totals(4, 0.0);
  const int trials = 20000, R = 10;
  for (int k = 0; k < trials; ++k) {
    for (auto j : systematic_resample(w, R, rng)) totals[j] += 1.0;
  }
  // Multiplicity of j is floor or ceil of R w_j, so the per-trial sd is at most 1/2.
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(totals[j] / trials, R * w[j], 4 * 0.5 / std::sqrt(trials));
}

TEST(SystematicResample, PropertyCountsSumToR) {
  RngStream gen(15, 0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + gen.below(40);
    std::vector<double> w(n);
    for (double& v : w) v = gen.uniform() < 0.3 ? 0.0 : gen.exponential();
    w[gen.below(n)] = 1.0;
    const std::size_t R = 1 + gen.below(300);
    RngStream rng(15, trial + 1);
    const auto idx = systematic_resample(w, R, rng);
    ASSERT_EQ(idx.size(), R);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<int> counts(n, 0);
    for (auto j : idx) {
      ASSERT_LT(j, n);
      ASSERT_GT(w[j], 0.0);
      ++counts[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_LE(std::fabs(counts[j] - R * w[j] / total), 1.0 + 1e-9);
    }
  }
}

TEST(SystematicResample, AllZeroWeightsThrow) {
  RngStream rng(13, 4);
  EXPECT_THROW(systematic_resample(std::vector<double>{0.0, 0.0}, 3, rng), std::invalid_argument);
}

TEST(GaussianFactor, DenseCovarianceReproduced) {
  Eigen::MatrixXd cov(3, 3);
  cov << 2.0, 0.3, -0.4, 0.3, 1.0, 0.2, -0.4, 0.2, 0.5;
  const GaussianFactor f(cov);
  RngStream rng(16, 1);
  const int n = 200000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(3, 3);
  Eigen::VectorXd x(3);
  for (int k = 0; k < n; ++k) {
    f.draw(rng, x.data());
    acc += x * x.transpose();
  }
  acc /= n;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / n);
      EXPECT_NEAR(acc(i, j), cov(i, j), 4 * se);
    }
  }
}

TEST(GaussianFactor, SemidefiniteAndZeroCovariance) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2, 2);
  const GaussianFactor zero(cov);
  RngStream rng(16, 2);
  Eigen::Vector2d x;
  zero.draw(rng, x.data());
  EXPECT_EQ(x[0], 0.0);
  EXPECT_EQ(x[1], 0.0);

  Eigen::MatrixXd rank1(2, 2);
  rank1 << 1.0, 1.0, 1.0, 1.0;
  const GaussianFactor f(rank1);
  for (int k = 0; k < 100; ++k) {
    f.draw(rng, x.data());
    EXPECT_NEAR(x[0], x[1], 1e-8);
  }
}
