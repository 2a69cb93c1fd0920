#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelstate/events.hpp"
#include "panelstate/model.hpp"
#include "panelstate/sampler.hpp"

namespace panelstate {

inline int total_draws(const std::vector<ChainStore>& stores) {
  int n = 0;
  for (const auto& s : stores) n += s.draws();
  return n;
}

/// Per-subject frequency of each pattern over all retained draws, N x L.
inline Eigen::MatrixXd pattern_posterior(const std::vector<ChainStore>& stores, int n_subjects, int L) {
  const int draws = total_draws(stores);
  if (draws < 1) throw std::invalid_argument("pattern_posterior: no retained draws");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_subjects, L);
  for (const auto& s : stores) {
    for (const auto& row : s.patterns) {
      for (int i = 0; i < n_subjects; ++i) out(i, row[i]) += 1.0;
    }
  }
  return out / static_cast<double>(draws);
}

/// All retained partitions, chains in order.
inline std::vector<std::vector<int>> pooled_partitions(const std::vector<ChainStore>& stores) {
  std::vector<std::vector<int>> out;
  for (const auto& s : stores) out.insert(out.end(), s.partitions.begin(), s.partitions.end());
  return out;
}

/// Co-clustering frequencies.
inline Eigen::MatrixXd similarity(const std::vector<std::vector<int>>& partitions, int n_subjects) {
  if (partitions.empty()) throw std::invalid_argument("similarity: no partitions");
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n_subjects, n_subjects);
  for (int i = 0; i < n_subjects; ++i) {
    for (int j = i + 1; j < n_subjects; ++j) {
      long same = 0;
      for (const auto& labels : partitions) same += labels[i] == labels[j];
      const double v = static_cast<double>(same) / static_cast<double>(partitions.size());
      a(i, j) = v;
      a(j, i) = v;
    }
  }
  return a;
}

inline Eigen::MatrixXd similarity(const std::vector<ChainStore>& stores, int n_subjects) {
  return similarity(pooled_partitions(stores), n_subjects);
}

/// Sum over pairs i < j of |1{same cluster} - a_ij|.
inline double binder_loss(std::span<const int> labels, const Eigen::MatrixXd& sim) {
  const int n = static_cast<int>(labels.size());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) loss += std::fabs((labels[i] == labels[j] ? 1.0 : 0.0) - sim(i, j));
  }
  return loss;
}

/// Variation of information between two partitions (log base 2).
inline double variation_of_information(std::span<const int> a, std::span<const int> b) {
  const auto n = static_cast<double>(a.size());
  std::map<int, double> ca;
  std::map<int, double> cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    joint[{a[i], b[i]}] += 1;
  }
  auto entropy_term = [n](double c) { return c / n * std::log2(c / n); };
  double ha = 0.0;
  double hb = 0.0;
  double hab = 0.0;
  for (const auto& [k, c] : ca) ha -= entropy_term(c);
  for (const auto& [k, c] : cb) hb -= entropy_term(c);
  for (const auto& [k, c] : joint) hab -= entropy_term(c);
  // VI = H(A|B) + H(B|A) = 2 H(A,B) - H(A) - H(B).
  return std::max(0.0, 2.0 * hab - ha - hb);
}

/// Mean VI of a candidate against the sampled partitions.
inline double vi_loss(std::span<const int> labels, const std::vector<std::vector<int>>& partitions) {
  double total = 0.0;
  for (const auto& p : partitions) total += variation_of_information(labels, p);
  return total / static_cast<double>(partitions.size());
}

enum class PartitionLoss { kBinder, kVi };

struct PointPartition {
  std::vector<int> labels;
  int draw = 0;
  double loss = 0.0;
};

/// Relabels clusters by first appearance (0, 1, ...).
inline std::vector<int> canonical_labels(std::span<const int> labels) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = remap.emplace(labels[i], static_cast<int>(remap.size())).first;
    out[i] = it->second;
  }
  return out;
}

/// The sampled partition with the smallest loss; the earliest draw wins ties.
inline PointPartition point_partition(const Eigen::MatrixXd& sim, const std::vector<std::vector<int>>& partitions,
                                      PartitionLoss loss) {
  if (partitions.empty()) throw std::invalid_argument("point_partition: no partitions");
  PointPartition best;
  best.loss = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < partitions.size(); ++k) {
    const double v = loss == PartitionLoss::kBinder ? binder_loss(partitions[k], sim) : vi_loss(partitions[k], partitions);
    if (v < best.loss) {
      best.loss = v;
      best.draw = static_cast<int>(k);
    }
  }
  best.labels = canonical_labels(partitions[best.draw]);
  return best;
}

/// Mean over subjects of log2 P(R_i = truth_i | data), with probabilities
/// floored at 1 / (draws + 1).
inline double cross_entropy(const Eigen::MatrixXd& posterior, std::span<const int> truth, int draws) {
  if (static_cast<Eigen::Index>(truth.size()) != posterior.rows()) {
    throw std::invalid_argument("cross_entropy: one truth label per subject required");
  }
  if (truth.empty()) throw std::invalid_argument("cross_entropy: no subjects");
  const double floor = 1.0 / (static_cast<double>(draws) + 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    total += std::log2(std::max(posterior(static_cast<Eigen::Index>(i), truth[i]), floor));
  }
  return total / static_cast<double>(truth.size());
}

/// Posterior mean of each subject's pattern distribution (the atom of its
/// cluster, averaged over draws), N x L.
inline Eigen::MatrixXd xi_posterior_mean(const std::vector<ChainStore>& stores, int n_subjects, int L) {
  const int draws = total_draws(stores);
  if (draws < 1) throw std::invalid_argument("xi_posterior_mean: no retained draws");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_subjects, L);
  for (const auto& s : stores) {
    for (int k = 0; k < s.draws(); ++k) {
      for (int i = 0; i < n_subjects; ++i) {
        const auto& atom = s.atoms[k][s.partitions[k][i]];
        for (int l = 0; l < L; ++l) out(i, l) += atom[l];
      }
    }
  }
  return out / static_cast<double>(draws);
}

/// Potential scale reduction per component of delta (Gelman-Rubin, no
/// split). NaN if fewer than two chains or two draws per chain.
inline Eigen::VectorXd rhat_delta(const std::vector<ChainStore>& stores) {
  if (stores.empty() || stores.front().delta.empty()) return {};
  const Eigen::Index d = stores.front().delta.front().size();
  Eigen::VectorXd out = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::quiet_NaN());
  int n = std::numeric_limits<int>::max();
  for (const auto& s : stores) n = std::min(n, s.draws());
  const auto m = static_cast<int>(stores.size());
  if (m < 2 || n < 2) return out;
  for (Eigen::Index c = 0; c < d; ++c) {
    std::vector<double> means(m);
    double within = 0.0;
    for (int k = 0; k < m; ++k) {
      double mean = 0.0;
      for (int j = 0; j < n; ++j) mean += stores[k].delta[j][c];
      mean /= n;
      double var = 0.0;
      for (int j = 0; j < n; ++j) var += (stores[k].delta[j][c] - mean) * (stores[k].delta[j][c] - mean);
      within += var / (n - 1);
      means[k] = mean;
    }
    within /= m;
    double grand = 0.0;
    for (double v : means) grand += v;
    grand /= m;
    double between = 0.0;
    for (double v : means) between += (v - grand) * (v - grand);
    between *= static_cast<double>(n) / (m - 1);
    if (!(within > 0.0)) continue;
    const double pooled = (n - 1.0) / n * within + between / n;
    out[c] = std::sqrt(pooled / within);
  }
  return out;
}

/// Summary of one treatment tenure slice in one draw.
struct TreatmentSlice {
  std::string patient_id;
  std::string treatment;
  int first_day = 0;
  int last_day = 0;
  int draw = 0;
  double T_pre = 0.0;
  double T_post = 0.0;
  double intercept = 0.0;
  double slope = 0.0;
};

/// Mean of gamma over the 1-based inclusive day range.
inline double window_mean(std::span<const double> gamma, int first, int last) {
  double s = 0.0;
  for (int t = first; t <= last; ++t) s += gamma[t - 1];
  return s / static_cast<double>(last - first + 1);
}

/// Slices of one trajectory, one per treatment tenure. Slices of a single
/// day are skipped and counted in `excluded`.
inline std::vector<TreatmentSlice> treatment_slices(const PatientRecord& record, std::span<const double> gamma,
                                                    int window, int draw, long* excluded = nullptr) {
  std::vector<TreatmentSlice> out;
  const int T = record.length();
  const auto& changes = record.treatment_changes;
  for (std::size_t k = 0; k < changes.size(); ++k) {
    const int first = changes[k];
    const int last = k + 1 < changes.size() ? changes[k + 1] - 1 : T;
    if (last <= first) {
      if (excluded) ++*excluded;
      continue;
    }
    TreatmentSlice s;
    s.patient_id = record.id;
    s.treatment = record.treatment_id.empty() ? std::to_string(k + 1) : record.treatment_id[first - 1];
    s.first_day = first;
    s.last_day = last;
    s.draw = draw;
    s.T_pre = window_mean(gamma, std::max(first - window, 1), first);
    s.T_post = window_mean(gamma, first, last);
    // Least squares of gamma on days since the change.
    const int n = last - first + 1;
    const double mean_x = (n - 1) / 2.0;
    const double mean_y = s.T_post;
    double sxx = 0.0;
    double sxy = 0.0;
    for (int t = first; t <= last; ++t) {
      const double dx = (t - first) - mean_x;
      sxx += dx * dx;
      sxy += dx * (gamma[t - 1] - mean_y);
    }
    s.slope = sxy / sxx;
    s.intercept = mean_y - s.slope * mean_x;
    out.push_back(std::move(s));
  }
  return out;
}

/// One row of the treatment-effect table.
struct TreatmentEffectRow {
  std::string group;  // "all" or "cluster_<k>"
  std::string treatment;
  double T_pre = 0.0;
  double T_post = 0.0;
  double intercept = 0.0;
  double slope = 0.0;
  double prop_pre_lt_post = 0.0;
  double prop_slope_negative = 0.0;
  int n_slices = 0;
  long n_summaries = 0;
  long n_excluded = 0;
};

/// Averages slice summaries over draws and slices per treatment, overall
/// and within each cluster of `cluster_labels` (empty to skip).
inline std::vector<TreatmentEffectRow> treatment_effects(const std::vector<ChainStore>& stores, const Dataset& data,
                                                         int window, std::span<const int> cluster_labels) {
  struct Accumulator {
    double T_pre = 0, T_post = 0, intercept = 0, slope = 0, pre_lt_post = 0, slope_negative = 0;
    long count = 0;
    long excluded = 0;
    std::set<std::pair<std::string, int>> slices;
  };
  // Group -1 is the whole cohort, k >= 0 the k-th cluster.
  std::map<std::pair<int, std::string>, Accumulator> acc;
  int snapshots = 0;
  int draw = 0;
  for (const auto& store : stores) {
    for (std::size_t k = 0; k < store.theta.size(); ++k, ++draw) {
      ++snapshots;
      for (int i = 0; i < data.size(); ++i) {
        const auto& rec = data.subjects[i];
        const Eigen::VectorXd gamma = compute_gamma(rec, store.theta[k][i]);
        long excluded = 0;
        const auto slices =
            treatment_slices(rec, std::span<const double>(gamma.data(), gamma.size()), window, draw, &excluded);
        std::vector<int> groups{-1};
        if (!cluster_labels.empty()) groups.push_back(cluster_labels[i]);
        for (int group : groups) {
          for (const auto& s : slices) {
            auto& a = acc[{group, s.treatment}];
            a.T_pre += s.T_pre;
            a.T_post += s.T_post;
            a.intercept += s.intercept;
            a.slope += s.slope;
            a.pre_lt_post += s.T_pre < s.T_post ? 1.0 : 0.0;
            a.slope_negative += s.slope < 0.0 ? 1.0 : 0.0;
            ++a.count;
            a.slices.insert({s.patient_id, s.first_day});
          }
          if (excluded > 0) {
            // Attribute single-day slices to their treatment for reporting.
            for (std::size_t c = 0; c < rec.treatment_changes.size(); ++c) {
              const int first = rec.treatment_changes[c];
              const int last = c + 1 < rec.treatment_changes.size() ? rec.treatment_changes[c + 1] - 1 : rec.length();
              if (last > first) continue;
              const std::string label =
                  rec.treatment_id.empty() ? std::to_string(c + 1) : rec.treatment_id[first - 1];
              ++acc[{group, label}].excluded;
            }
          }
        }
      }
    }
  }
  if (snapshots == 0) throw std::invalid_argument("treatment_effects: no trajectory snapshots in the run");
  std::vector<TreatmentEffectRow> rows;
  for (const auto& [key, a] : acc) {
    TreatmentEffectRow row;
    row.group = key.first < 0 ? "all" : "cluster_" + std::to_string(key.first + 1);
    row.treatment = key.second;
    row.n_summaries = a.count;
    row.n_excluded = a.excluded;
    row.n_slices = static_cast<int>(a.slices.size());
    if (a.count > 0) {
      const auto n = static_cast<double>(a.count);
      row.T_pre = a.T_pre / n;
      row.T_post = a.T_post / n;
      row.intercept = a.intercept / n;
      row.slope = a.slope / n;
      row.prop_pre_lt_post = a.pre_lt_post / n;
      row.prop_slope_negative = a.slope_negative / n;
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.T_pre = row.T_post = row.intercept = row.slope = row.prop_pre_lt_post = row.prop_slope_negative = nan;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Acceptance rate per subject pooled over chains.
inline std::vector<double> acceptance_rates(const std::vector<ChainStore>& stores, int n_subjects) {
  std::vector<double> out(n_subjects, 0.0);
  for (int i = 0; i < n_subjects; ++i) {
    long proposed = 0;
    long accepted = 0;
    for (const auto& s : stores) {
      if (static_cast<int>(s.proposed.size()) <= i) continue;
      proposed += s.proposed[i];
      accepted += s.accepted[i];
    }
    out[i] = proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed)
                          : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace panelstate
