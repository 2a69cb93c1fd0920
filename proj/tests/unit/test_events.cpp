#include <gtest/gtest.h>

#include <set>
#include <span>
#include <vector>

#include "oracles.hpp"
#include "panelstate/events.hpp"
#include "panelstate/model.hpp"

using namespace panelstate;

namespace {
const EventThresholds kDefault{};

int r1(const std::vector<double>& g) { return event_r1(g, kDefault); }
int r2(const std::vector<double>& g) { return event_r2(g, kDefault); }
int r3(const std::vector<double>& g, const std::vector<int>& changes) { return event_r3(g, changes, kDefault); }
}  // namespace

TEST(EventR1, MeanCutIsInclusive) {
  EXPECT_EQ(r1(std::vector<double>(10, 1.0)), 1);
  EXPECT_EQ(r1(std::vector<double>(10, 0.0)), 0);
  EXPECT_EQ(r1({0.5, 1.5, 2.0}), 1);
  EXPECT_EQ(r1({0.5, 1.0, 1.0}), 0);
  EXPECT_THROW(r1({}), std::invalid_argument);
}

TEST(EventR2, RatioOfHighToRiskDays) {
  EXPECT_EQ(r2({0.1, 0.9, -3.0}), 0);
  std::vector<double> g(10, 1.7);
  g.insert(g.end(), 5, 1.2);
  g.insert(g.end(), 20, 0.0);
  EXPECT_EQ(r2(g), 1);  // 10 / 16
  std::vector<double> h(3, 1.7);
  h.insert(h.end(), 6, 1.2);
  h.insert(h.end(), 4, -1.0);
  EXPECT_EQ(r2(h), 0);  // 3 / 10
  EXPECT_EQ(r2({1.6448536269514722}), 1);  // 1 / 2 at the cut
  EXPECT_EQ(r2({}), 0);
}

TEST(EventR3, WindowsAroundLastChange) {
  EXPECT_EQ(r3(std::vector<double>(50, 0.3), {1, 20}), 1);
  EXPECT_EQ(r3({2.0, 0.0, 0.0}, {1}), 0);
  std::vector<double> dec(200);
  for (int t = 0; t < 200; ++t) dec[t] = 5.0 - 0.01 * t;
  EXPECT_EQ(r3(dec, {1, 101}), 0);
  std::vector<double> inc(200);
  for (int t = 0; t < 200; ++t) inc[t] = 0.01 * t;
  EXPECT_EQ(r3(inc, {1, 101}), 1);
}

TEST(EventR3, PreWindowIsClippedAndIncludesChangeDay) {
  // Window 90 before day 150 covers days 60..150; day 150 is in both means.
  std::vector<double> g(200, 0.0);
  for (int t = 60; t <= 150; ++t) g[t - 1] = 1.0;  // pre mean 1
  for (int t = 151; t <= 200; ++t) g[t - 1] = 0.99;
  // post mean over 150..200 = (1 + 50 * 0.99) / 51 < 1 -> not a non-response
  EXPECT_EQ(r3(g, {1, 150}), 0);
  g[58] = -100.0;  // day 59 is outside the pre window
  EXPECT_EQ(r3(g, {1, 150}), 0);
  g[59] = -100.0;  // day 60 is inside
  EXPECT_EQ(r3(g, {1, 150}), 1);
}

TEST(Encode, TableOrderingAndBijection) {
  EXPECT_EQ(encode(0, 0, 0), 0);
  EXPECT_EQ(encode(0, 1, 0), 2);
  EXPECT_EQ(encode(1, 1, 1), 7);
  std::set<int> seen;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (int c = 0; c < 2; ++c) {
        const int code = encode(a, b, c);
        seen.insert(code);
        const auto bits = decode(code);
        EXPECT_EQ(bits[0], a);
        EXPECT_EQ(bits[1], b);
        EXPECT_EQ(bits[2], c);
      }
    }
  }
  EXPECT_EQ(seen.size(), 8u);
  EXPECT_THROW(encode(2, 0, 0), std::invalid_argument);
  EXPECT_THROW(decode(8), std::invalid_argument);
}

TEST(Thresholds, Validation) {
  EventThresholds th;
  EXPECT_NO_THROW(th.validate());
  th.r2_high_cut = 0.5;
  EXPECT_THROW(th.validate(), ConfigError);
  th = EventThresholds{};
  th.r3_window = 0;
  EXPECT_THROW(th.validate(), ConfigError);
}

TEST(PatternScheme, CodeIsEncodedEventTriple) {
  const ModelConfig c = ModelConfig::appendix_b_default();
  const PatternScheme scheme = clinical_pattern_scheme(c.events);
  const auto rec = oracle::make_record("A", std::vector<int>(120, 0), {1, 60});
  RngStream rng(1, 1);
  std::set<int> codes;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::MatrixXd theta = simulate_prior_trajectory(c, rec, rng) * 20.0;
    SubjectState s;
    s.set_theta(rec, theta, scheme);
    const std::span<const double> g(s.gamma.data(), s.gamma.size());
    EXPECT_EQ(s.R, encode(event_r1(g, c.events), event_r2(g, c.events), event_r3(g, rec.treatment_changes, c.events)));
    codes.insert(s.R);
  }
  EXPECT_GT(codes.size(), 2u);
}

TEST(EventR2, PropertyDenominatorGuard) {
  RngStream rng(2, 2);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> g(1 + rng.below(60));
    for (double& v : g) v = 3.0 * rng.normal();
    int high = 0, risk = 0;
    for (double v : g) {
      high += v >= kDefault.r2_high_cut;
      risk += v >= kDefault.r2_risk_cut;
    }
    EXPECT_EQ(r2(g), static_cast<double>(high) / (risk + 1) >= 0.5 ? 1 : 0);
  }
}
