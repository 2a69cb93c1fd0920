#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "panelstate/errors.hpp"

namespace panelstate {

/// Thresholds for the three clinical events computed from the dynamic
/// score gamma.
struct EventThresholds {
  double r1_mean_cut = 1.0;
  double r2_high_cut = 1.6448536269514722;  // Phi^{-1}(0.95)
  double r2_risk_cut = 1.0;
  double r2_ratio_cut = 0.5;
  int r3_window = 90;

  void validate() const {
    if (!(r2_high_cut > r2_risk_cut)) {
      throw ConfigError("events.r2_high_cut must exceed events.r2_risk_cut");
    }
    if (r3_window < 1) throw ConfigError("events.r3_window must be >= 1");
  }
};

/// 1 iff the mean of gamma reaches the cut.
inline int event_r1(std::span<const double> gamma, const EventThresholds& th) {
  if (gamma.empty()) throw std::invalid_argument("event_r1: empty gamma");
  double sum = 0.0;
  for (double g : gamma) sum += g;
  return sum / static_cast<double>(gamma.size()) >= th.r1_mean_cut ? 1 : 0;
}

/// Clumping: share of extreme-risk days among at-risk days (plus one).
inline int event_r2(std::span<const double> gamma, const EventThresholds& th) {
  int high = 0;
  int risk = 0;
  for (double g : gamma) {
    if (g >= th.r2_high_cut) ++high;
    if (g >= th.r2_risk_cut) ++risk;
  }
  return static_cast<double>(high) / static_cast<double>(risk + 1) >= th.r2_ratio_cut ? 1 : 0;
}

/// Non-response to the last treatment: mean gamma over the window ending at
/// the last change day is no larger than the mean from that day on. Both
/// windows include the change day. `changes` holds 1-based days.
inline int event_r3(std::span<const double> gamma, std::span<const int> changes,
                    const EventThresholds& th) {
  if (changes.empty()) throw std::invalid_argument("event_r3: no treatment changes");
  const int T = static_cast<int>(gamma.size());
  const int last = *std::max_element(changes.begin(), changes.end());
  if (last < 1 || last > T) throw std::invalid_argument("event_r3: change day out of range");
  const int pre_start = std::max(last - th.r3_window, 1);
  double pre = 0.0;
  for (int t = pre_start; t <= last; ++t) pre += gamma[t - 1];
  pre /= static_cast<double>(last - pre_start + 1);
  double post = 0.0;
  for (int t = last; t <= T; ++t) post += gamma[t - 1];
  post /= static_cast<double>(T - last + 1);
  return pre <= post ? 1 : 0;
}

inline int encode(int r1, int r2, int r3) {
  if ((r1 | r2 | r3) & ~1) throw std::invalid_argument("encode: event bits must be 0 or 1");
  return 4 * r1 + 2 * r2 + r3;
}

inline std::array<int, 3> decode(int pattern) {
  if (pattern < 0 || pattern > 7) throw std::invalid_argument("decode: pattern out of range");
  return {(pattern >> 2) & 1, (pattern >> 1) & 1, pattern & 1};
}

/// Maps a trajectory's dynamic score to a pattern code in {0..L-1}.
struct PatternScheme {
  using Classifier = std::function<int(std::span<const double> gamma, std::span<const int> changes)>;

  int L = 8;
  Classifier classify;

  int operator()(std::span<const double> gamma, std::span<const int> changes) const {
    return classify(gamma, changes);
  }
};

/// The three-event clinical statistic, L = 8.
inline PatternScheme clinical_pattern_scheme(const EventThresholds& th) {
  return PatternScheme{8, [th](std::span<const double> gamma, std::span<const int> changes) {
                         return encode(event_r1(gamma, th), event_r2(gamma, th),
                                       event_r3(gamma, changes, th));
                       }};
}

}  // namespace panelstate
