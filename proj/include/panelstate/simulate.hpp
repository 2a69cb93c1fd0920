#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "panelstate/errors.hpp"
#include "panelstate/model.hpp"
#include "panelstate/normal_math.hpp"
#include "panelstate/rng.hpp"
#include "panelstate/sampler.hpp"

namespace panelstate {

/// Two groups x two risk subtypes with a treatment switch, clumping
/// episodes in the second group and random missingness.
struct ScenarioConfig {
  int n_per_cell = 25;
  int horizon = 730;
  int change_day = 366;
  /// base_probs[group][subtype][period]: daily event probability before
  /// (period 0) and from (period 1) the change day.
  std::array<std::array<std::array<double, 2>, 2>, 2> base_probs{{
      {{{1.0 / 60.0, 1.0 / 365.0}, {2.0 / 60.0, 4.0 / 365.0}}},
      {{{5.0 / 365.0, 1.0 / 730.0}, {10.0 / 365.0, 1.0 / 365.0}}},
  }};
  double clump_prob = 0.99;
  int clump_len_min = 7;
  int clump_len_max = 31;
  int clumps_per_year = 1;
  double missing_rate = 0.10;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_per_cell < 1) throw ConfigError("n_per_cell must be >= 1");
    if (horizon < 2) throw ConfigError("horizon must be >= 2");
    if (change_day < 2 || change_day > horizon) throw ConfigError("change_day must lie in [2, horizon]");
    for (const auto& g : base_probs) {
      for (const auto& s : g) {
        for (double v : s) {
          if (!(v > 0.0 && v < 1.0)) throw ConfigError("base_probs entries must lie in (0, 1)");
        }
      }
    }
    if (!(clump_prob > 0.0 && clump_prob < 1.0)) throw ConfigError("clump_prob must lie in (0, 1)");
    if (clump_len_min < 1 || clump_len_max < clump_len_min) {
      throw ConfigError("clump_len_range must satisfy 1 <= min <= max");
    }
    if (clumps_per_year < 0) throw ConfigError("clumps_per_year must be >= 0");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("missing_rate must lie in [0, 1)");
    const int shortest = std::min(change_day - 1, horizon - change_day + 1);
    if (clumps_per_year > 0 && clumps_per_year * clump_len_max > shortest) {
      throw ConfigError("clump windows do not fit in a period of " + std::to_string(shortest) + " days");
    }
  }
};

/// Simulation truth for one subject.
struct TruthRecord {
  std::string id;
  int cluster = 1;  // 1 or 2
  int subtype = 0;  // 0 low, 1 high
  int true_pattern = 0;
  std::vector<std::pair<int, int>> clumps;  // (start day, length)
  Eigen::VectorXd latent;                   // probit-scale truth per day
};

inline int true_pattern(const TruthRecord& truth) { return truth.cluster == 1 ? 0 : 2; }

struct Cohort {
  Dataset data;
  std::vector<TruthRecord> truth;
};

namespace detail {

// Non-overlapping windows with the given lengths placed uniformly in
// [first, first + span): gaps are a uniform composition of the free days.
inline std::vector<std::pair<int, int>> place_windows(const std::vector<int>& lengths, int first, int span,
                                                      RngStream& rng) {
  int used = 0;
  for (int len : lengths) used += len;
  const int free_days = span - used;
  if (free_days < 0) throw ConfigError("clump windows do not fit in their period");
  std::vector<int> cuts(lengths.size());
  for (int& c : cuts) c = static_cast<int>(rng.below(static_cast<std::uint64_t>(free_days) + 1));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::pair<int, int>> out;
  int offset = 0;
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    out.emplace_back(first + cuts[k] + offset, lengths[k]);
    offset += lengths[k];
  }
  return out;
}

inline constexpr std::uint64_t kTagSimulate = 11;

}  // namespace detail

/// Draws the cohort. Subjects are laid out cell by cell: group 1 low,
/// group 1 high, group 2 low, group 2 high.
inline Cohort generate_cohort(const ScenarioConfig& sc) {
  sc.validate();
  Cohort cohort;
  cohort.data.covariate_names = {"intercept", "subtype"};
  const int total = 4 * sc.n_per_cell;
  const int width = std::max(3, static_cast<int>(std::to_string(total).size()));
  const int T = sc.horizon;
  int index = 0;
  for (int group = 0; group < 2; ++group) {
    for (int subtype = 0; subtype < 2; ++subtype) {
      for (int k = 0; k < sc.n_per_cell; ++k, ++index) {
        RngStream rng(sc.seed, RngStream::stream_key({detail::kTagSimulate, static_cast<std::uint64_t>(index)}));
        const std::string number = std::to_string(index + 1);
        const std::string id = "S" + std::string(width - number.size(), '0') + number;

        TruthRecord truth;
        truth.id = id;
        truth.cluster = group + 1;
        truth.subtype = subtype;
        truth.true_pattern = group == 0 ? 0 : 2;
        std::vector<double> prob(T);
        for (int t = 1; t <= T; ++t) prob[t - 1] = sc.base_probs[group][subtype][t < sc.change_day ? 0 : 1];
        if (group == 1) {
          const std::array<std::pair<int, int>, 2> periods{{{1, sc.change_day - 1}, {sc.change_day, T - sc.change_day + 1}}};
          for (const auto& [first, span] : periods) {
            std::vector<int> lengths(sc.clumps_per_year);
            for (int& len : lengths) {
              len = sc.clump_len_min +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(sc.clump_len_max - sc.clump_len_min + 1)));
            }
            for (const auto& w : detail::place_windows(lengths, first, span, rng)) {
              truth.clumps.push_back(w);
              for (int t = w.first; t < w.first + w.second; ++t) prob[t - 1] = sc.clump_prob;
            }
          }
        }
        truth.latent.resize(T);
        for (int t = 0; t < T; ++t) truth.latent[t] = normal_quantile(prob[t]);

        PatientRecord rec;
        rec.id = id;
        rec.x = Eigen::Vector2d(1.0, subtype);
        rec.treatment_changes = {1, sc.change_day};
        rec.y.resize(T);
        rec.treatment_id.resize(T);
        for (int t = 1; t <= T; ++t) {
          const bool event = rng.uniform() < prob[t - 1];
          const bool missing = rng.uniform() < sc.missing_rate;
          rec.y[t - 1] = missing ? kMissing : static_cast<Outcome>(event ? 1 : 0);
          rec.treatment_id[t - 1] = t < sc.change_day ? "A" : "B";
        }
        cohort.data.subjects.push_back(std::move(rec));
        cohort.truth.push_back(std::move(truth));
      }
    }
  }
  return cohort;
}

}  // namespace panelstate
