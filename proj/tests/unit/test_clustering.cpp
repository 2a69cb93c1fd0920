#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "oracles.hpp"
#include "panelstate/clustering.hpp"

using namespace panelstate;

namespace {

ClusterRegistry registry_with(const std::vector<std::vector<double>>& atoms, const std::vector<int>& sizes) {
  int n = 0;
  for (int s : sizes) n += s;
  ClusterRegistry reg(n + 1, static_cast<int>(atoms.front().size()));
  int subject = 0;
  for (std::size_t h = 0; h < atoms.size(); ++h) {
    reg.add_cluster(atoms[h]);
    for (int k = 0; k < sizes[h]; ++k) reg.assign(subject++, static_cast<int>(h));
  }
  return reg;
}

std::vector<double> random_atom(int L, RngStream& rng) { return sample_dirichlet(std::vector<double>(L, 1.0), rng); }

}  // namespace

TEST(AllocationWeights, Examples) {
  const std::vector<int> counts{3, 1};
  const auto w = allocation_weights(counts, 10.0, -1.0);
  EXPECT_DOUBLE_EQ(w.existing[0], 4.0 / 14.0);
  EXPECT_DOUBLE_EQ(w.existing[1], 2.0 / 14.0);
  EXPECT_DOUBLE_EQ(w.fresh, 8.0 / 14.0);

  const auto first = allocation_weights(std::vector<int>{}, 10.0, -1.0);
  EXPECT_TRUE(first.existing.empty());
  EXPECT_EQ(first.fresh, 1.0);

  const auto capped = allocation_weights(std::vector<int>(10, 2), 10.0, -1.0);
  EXPECT_EQ(capped.fresh, 0.0);

  const auto py = allocation_weights(std::vector<int>{2, 2}, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(py.existing[0], 1.5 / 5.0);
  EXPECT_DOUBLE_EQ(py.fresh, 2.0 / 5.0);

  EXPECT_THROW(allocation_weights(std::vector<int>{1, 0}, 10.0, -1.0), std::invalid_argument);
}

TEST(AllocationWeights, PropertySumToOne) {
  RngStream rng(1, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    double sigma, M;
    int cap;
    if (trial % 2 == 0) {
      sigma = -(0.1 + 3.0 * rng.uniform());
      cap = 1 + static_cast<int>(rng.below(12));
      M = -sigma * cap;
    } else {
      sigma = 0.9 * rng.uniform();
      M = 0.1 + 5.0 * rng.uniform() - sigma;
      if (M <= -sigma) M = -sigma + 0.05;
      cap = 15;
    }
    const int H = static_cast<int>(rng.below(static_cast<std::uint64_t>(cap) + 1));
    std::vector<int> counts(H);
    for (int& c : counts) c = 1 + static_cast<int>(rng.below(20));
    const auto w = allocation_weights(counts, M, sigma);
    double total = w.fresh;
    for (double v : w.existing) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_GE(w.fresh, 0.0);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(ClusterRegistry, UnassignRestoreRoundTrip) {
  RngStream rng(2, 2);
  const int n = 12;
  const int L = 4;
  ClusterRegistry reg(n, L);
  for (int i = 0; i < n; ++i) {
    const int h = reg.H() == 0 || rng.uniform() < 0.3 ? reg.add_cluster(random_atom(L, rng))
                                                      : static_cast<int>(rng.below(reg.H()));
    reg.assign(i, h);
  }
  reg.validate();
  for (int step = 0; step < 2000; ++step) {
    const int i = static_cast<int>(rng.below(n));
    const auto labels = reg.assignments();
    const auto atoms = reg.atoms();
    auto removal = reg.unassign(i);
    EXPECT_EQ(reg.label(i), ClusterRegistry::kUnassigned);
    if (rng.uniform() < 0.5) {
      reg.restore(std::move(removal));
      EXPECT_EQ(reg.assignments(), labels);
      EXPECT_EQ(reg.atoms(), atoms);
    } else {
      const int h = rng.uniform() < 0.2 ? reg.add_cluster(random_atom(L, rng)) : static_cast<int>(rng.below(reg.H()));
      reg.assign(i, h);
    }
    reg.validate();
  }
}

TEST(ClusterRegistry, GuardsAndCounts) {
  ClusterRegistry reg(3, 2);
  EXPECT_THROW(reg.add_cluster({0.5, 0.6}), RuntimeAbort);
  EXPECT_THROW(reg.add_cluster({1.0}), std::invalid_argument);
  const int h = reg.add_cluster({0.25, 0.75});
  reg.assign(0, h);
  reg.assign(2, h);
  EXPECT_THROW(reg.assign(0, h), std::logic_error);
  EXPECT_THROW(reg.assign(1, 1), std::out_of_range);
  EXPECT_THROW(reg.unassign(1), std::logic_error);
  const std::vector<int> patterns{1, 0, 1};
  const auto counts = reg.pattern_counts(patterns);
  EXPECT_EQ(counts, (std::vector<std::vector<int>>{{0, 2}}));
  EXPECT_NO_THROW(reg.validate(1));
  reg.add_cluster({1.0, 0.0});
  EXPECT_THROW(reg.validate(), RuntimeAbort);  // empty cluster kept
  reg.assign(1, 1);
  EXPECT_THROW(reg.validate(1), RuntimeAbort);
}

TEST(Predictive, MatchesGenerativeSimulation) {
  RngStream rng(3, 3);
  const std::vector<double> a{0.2, 0.5, 1.0};
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<std::vector<double>> atoms;
    std::vector<int> sizes;
    for (int h = 0; h < trial + 1; ++h) {
      atoms.push_back(random_atom(3, rng));
      sizes.push_back(1 + static_cast<int>(rng.below(4)));
    }
    const auto reg = registry_with(atoms, sizes);
    const auto w = allocation_weights(reg.counts(), 2.0, 0.3);
    std::vector<double> mass(w.existing);
    mass.push_back(w.fresh);
    const int n = 200000;
    std::vector<int> freq(3, 0);
    for (int k = 0; k < n; ++k) {
      const std::size_t h = sample_categorical(mass, rng);
      const std::vector<double> xi = h < atoms.size() ? atoms[h] : sample_dirichlet(a, rng);
      ++freq[sample_categorical(xi, rng)];
    }
    const auto all = predictive_pattern_probs(reg, a, 2.0, 0.3);
    double total = 0.0;
    for (int l = 0; l < 3; ++l) {
      const double p = predictive_pattern_prob(reg, a, 2.0, 0.3, l);
      EXPECT_DOUBLE_EQ(p, all[l]);
      EXPECT_NEAR(static_cast<double>(freq[l]) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
      total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(ConditionalAllocation, MatchesGenerativeConditioning) {
  RngStream rng(4, 4);
  const std::vector<double> a{0.5, 0.5, 0.5};
  const std::vector<std::vector<double>> atoms{{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}};
  const auto reg = registry_with(atoms, {3, 1});
  const double M = 4.0, sigma = -1.0;
  const auto w = allocation_weights(reg.counts(), M, sigma);
  std::vector<double> prior(w.existing);
  prior.push_back(w.fresh);
  const int ell = 1;
  std::map<int, int> joint, direct;
  int kept = 0;
  const int n = 400000;
  for (int k = 0; k < n; ++k) {
    const int h = static_cast<int>(sample_categorical(prior, rng));
    const std::vector<double> xi = h < reg.H() ? atoms[h] : sample_dirichlet(a, rng);
    if (static_cast<int>(sample_categorical(xi, rng)) != ell) continue;
    ++joint[h];
    ++kept;
  }
  for (int k = 0; k < kept; ++k) {
    const auto draw = conditional_allocation(reg, ell, a, M, sigma, rng);
    EXPECT_FALSE(draw.fallback);
    ++direct[draw.label];
  }
  for (int h = 0; h <= reg.H(); ++h) {
    const double p = static_cast<double>(joint[h]) / kept;
    const double q = static_cast<double>(direct[h]) / kept;
    EXPECT_NEAR(p, q, 5.0 * std::sqrt(2.0 * p * (1 - p) / kept) + 1e-9) << "cluster " << h;
  }
}

TEST(ConditionalAllocation, ZeroMassFallsBackToLargest) {
  RngStream rng(5, 5);
  const std::vector<double> a{1.0, 1.0};
  // M = 2, sigma = -1: at most two clusters, so no new one can open.
  const auto reg = registry_with({{0.0, 1.0}, {0.0, 1.0}}, {1, 3});
  const auto draw = conditional_allocation(reg, 0, a, 2.0, -1.0, rng);
  EXPECT_TRUE(draw.fallback);
  EXPECT_EQ(draw.label, 1);
  ClusterRegistry empty(1, 2);
  const auto first = conditional_allocation(empty, 0, a, 2.0, -1.0, rng);
  EXPECT_EQ(first.label, 0);
  EXPECT_FALSE(first.fallback);
}

TEST(AtomUpdate, DirichletMoments) {
  RngStream rng(6, 6);
  const std::vector<double> a{0.05, 0.05, 0.05, 0.05};
  const std::vector<int> n{3, 0, 1, 0};
  const double A = 4.2;
  const std::vector<double> alpha{3.05, 0.05, 1.05, 0.05};
  std::vector<std::vector<double>> cols(4);
  for (int k = 0; k < 50000; ++k) {
    const auto xi = update_atom(n, a, rng);
    for (int l = 0; l < 4; ++l) cols[l].push_back(xi[l]);
  }
  const auto mean = dirichlet_posterior_mean(n, a);
  for (int l = 0; l < 4; ++l) {
    const auto m = oracle::moments(cols[l]);
    const double var = alpha[l] * (A - alpha[l]) / (A * A * (A + 1.0));
    EXPECT_DOUBLE_EQ(mean[l], alpha[l] / A);
    EXPECT_NEAR(m.mean, alpha[l] / A, 4.0 * m.se_mean);
    EXPECT_NEAR(m.var, var, 4.0 * m.se_var);
  }
  EXPECT_THROW(update_atom(std::vector<int>{1}, a, rng), std::invalid_argument);
}

TEST(AtomUpdate, BirthIsSingletonUpdate) {
  const std::vector<double> a{0.3, 0.6, 0.9};
  RngStream r1(7, 7), r2(7, 7);
  for (int k = 0; k < 100; ++k) {
    EXPECT_EQ(birth_atom(2, a, r1), update_atom(std::vector<int>{0, 0, 1}, a, r2));
  }
  EXPECT_THROW(birth_atom(3, a, r1), std::out_of_range);
}
