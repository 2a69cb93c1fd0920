#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "panelstate/errors.hpp"
#include "panelstate/log.hpp"
#include "panelstate/rng.hpp"
#include "panelstate/stochastics.hpp"

namespace panelstate {

/// Prior weights of joining each occupied cluster or opening a new one,
/// given the occupancy counts of the other subjects.
struct AllocationWeights {
  std::vector<double> existing;
  double fresh = 0.0;
};

inline AllocationWeights allocation_weights(std::span<const int> counts, double M, double sigma) {
  AllocationWeights w;
  long others = 0;
  for (int n : counts) {
    if (n < 1) throw std::invalid_argument("allocation_weights: occupied clusters need positive counts");
    others += n;
  }
  const auto H = static_cast<double>(counts.size());
  if (others == 0) {
    w.fresh = 1.0;
    return w;
  }
  const double denom = static_cast<double>(others) + M;
  w.existing.resize(counts.size());
  for (std::size_t h = 0; h < counts.size(); ++h) w.existing[h] = (counts[h] - sigma) / denom;
  w.fresh = (M + sigma * H) / denom;
  // Rounding can leave -0 or -1e-17 at the cap.
  if (w.fresh < 0.0) {
    if (w.fresh < -1e-12) throw RuntimeAbort("allocation_weights: negative weight for a new cluster");
    w.fresh = 0.0;
  }
  return w;
}

/// Occupied clusters: one probability vector over the L patterns per cluster,
/// member counts, and the subject -> cluster map. Labels are kept contiguous.
class ClusterRegistry {
 public:
  static constexpr int kUnassigned = -1;

  ClusterRegistry() = default;
  ClusterRegistry(int n_subjects, int L) : L_(L), assignment_(n_subjects, kUnassigned) {
    if (n_subjects < 0 || L < 1) throw std::invalid_argument("ClusterRegistry: bad dimensions");
  }

  int L() const noexcept { return L_; }
  int H() const noexcept { return static_cast<int>(atoms_.size()); }
  int n_subjects() const noexcept { return static_cast<int>(assignment_.size()); }
  int assigned_count() const noexcept { return std::accumulate(counts_.begin(), counts_.end(), 0); }
  const std::vector<std::vector<double>>& atoms() const noexcept { return atoms_; }
  const std::vector<double>& atom(int h) const { return atoms_.at(h); }
  const std::vector<int>& counts() const noexcept { return counts_; }
  const std::vector<int>& assignments() const noexcept { return assignment_; }
  int label(int subject) const { return assignment_.at(subject); }

  /// Adds an empty cluster with the given atom and returns its label.
  int add_cluster(std::vector<double> atom) {
    check_atom(atom);
    atoms_.push_back(std::move(atom));
    counts_.push_back(0);
    return H() - 1;
  }

  void set_atom(int h, std::vector<double> atom) {
    check_atom(atom);
    atoms_.at(h) = std::move(atom);
  }

  void assign(int subject, int h) {
    if (assignment_.at(subject) != kUnassigned) throw std::logic_error("assign: subject already assigned");
    if (h < 0 || h >= H()) throw std::out_of_range("assign: no such cluster");
    assignment_[subject] = h;
    ++counts_[h];
  }

  /// What unassign() removed, enough to put it back.
  struct Removal {
    int subject = -1;
    int label = -1;
    bool dropped_cluster = false;
    std::vector<double> atom;
  };

  /// Detaches a subject; a cluster left empty is removed and labels above it
  /// shift down by one.
  Removal unassign(int subject) {
    const int h = assignment_.at(subject);
    if (h == kUnassigned) throw std::logic_error("unassign: subject not assigned");
    Removal removal{subject, h, false, {}};
    assignment_[subject] = kUnassigned;
    if (--counts_[h] == 0) {
      removal.dropped_cluster = true;
      removal.atom = std::move(atoms_[h]);
      atoms_.erase(atoms_.begin() + h);
      counts_.erase(counts_.begin() + h);
      for (int& a : assignment_) {
        if (a > h) --a;
      }
    }
    return removal;
  }

  /// Undoes unassign(), restoring labels exactly.
  void restore(Removal removal) {
    const int h = removal.label;
    if (removal.dropped_cluster) {
      for (int& a : assignment_) {
        if (a >= h) ++a;
      }
      atoms_.insert(atoms_.begin() + h, std::move(removal.atom));
      counts_.insert(counts_.begin() + h, 0);
    }
    assign(removal.subject, h);
  }

  /// n_{h,l} for every cluster, from per-subject pattern codes.
  std::vector<std::vector<int>> pattern_counts(std::span<const int> patterns) const {
    if (static_cast<int>(patterns.size()) != n_subjects()) {
      throw std::invalid_argument("pattern_counts: one pattern per subject required");
    }
    std::vector<std::vector<int>> out(H(), std::vector<int>(L_, 0));
    for (int i = 0; i < n_subjects(); ++i) {
      const int h = assignment_[i];
      if (h == kUnassigned) continue;
      if (patterns[i] < 0 || patterns[i] >= L_) throw std::out_of_range("pattern_counts: pattern out of range");
      ++out[h][patterns[i]];
    }
    return out;
  }

  /// Throws if counts, labels and atoms are inconsistent or the cluster
  /// count exceeds `cap` (0 = no cap).
  void validate(int cap = 0) const {
    std::vector<int> seen(H(), 0);
    for (int a : assignment_) {
      if (a == kUnassigned) continue;
      if (a < 0 || a >= H()) throw RuntimeAbort("cluster registry: label out of range");
      ++seen[a];
    }
    for (int h = 0; h < H(); ++h) {
      if (seen[h] != counts_[h]) throw RuntimeAbort("cluster registry: counts do not match assignments");
      if (counts_[h] == 0) throw RuntimeAbort("cluster registry: empty cluster kept");
      check_atom(atoms_[h]);
    }
    if (cap > 0 && H() > cap) {
      throw RuntimeAbort("cluster registry: " + std::to_string(H()) + " occupied clusters exceed the cap of " +
                         std::to_string(cap));
    }
  }

 private:
  void check_atom(const std::vector<double>& atom) const {
    if (static_cast<int>(atom.size()) != L_) throw std::invalid_argument("cluster atom must have length L");
    double total = 0.0;
    for (double v : atom) {
      if (!(v >= 0.0)) throw RuntimeAbort("cluster atom has a negative or NaN entry");
      total += v;
    }
    if (std::fabs(total - 1.0) > 1e-12) throw RuntimeAbort("cluster atom does not sum to 1");
  }

  int L_ = 0;
  std::vector<std::vector<double>> atoms_;
  std::vector<int> counts_;
  std::vector<int> assignment_;
};

inline double dirichlet_base_mean(std::span<const double> a, int ell) {
  const double total = std::accumulate(a.begin(), a.end(), 0.0);
  return a[ell] / total;
}

/// p_l: probability that a further subject shows pattern l, given the
/// registry without that subject.
inline double predictive_pattern_prob(const ClusterRegistry& registry, std::span<const double> a, double M,
                                      double sigma, int ell) {
  if (ell < 0 || ell >= registry.L()) throw std::out_of_range("predictive_pattern_prob: pattern out of range");
  const AllocationWeights w = allocation_weights(registry.counts(), M, sigma);
  double p = w.fresh * dirichlet_base_mean(a, ell);
  for (int h = 0; h < registry.H(); ++h) p += w.existing[h] * registry.atom(h)[ell];
  return p;
}

/// All L predictive probabilities at once.
inline std::vector<double> predictive_pattern_probs(const ClusterRegistry& registry, std::span<const double> a,
                                                    double M, double sigma) {
  const AllocationWeights w = allocation_weights(registry.counts(), M, sigma);
  const double total_a = std::accumulate(a.begin(), a.end(), 0.0);
  std::vector<double> p(registry.L());
  for (int ell = 0; ell < registry.L(); ++ell) {
    double v = w.fresh * a[ell] / total_a;
    for (int h = 0; h < registry.H(); ++h) v += w.existing[h] * registry.atom(h)[ell];
    p[ell] = v;
  }
  return p;
}

struct AllocationDraw {
  int label = 0;          // equals H for a new cluster
  bool fallback = false;  // zero total mass; largest cluster used instead
};

/// Draws a cluster for a subject with pattern l: existing h with weight
/// w_h xi_{h,l}, a new cluster with weight w_new a_l / sum(a).
inline AllocationDraw conditional_allocation(const ClusterRegistry& registry, int ell, std::span<const double> a,
                                             double M, double sigma, RngStream& rng) {
  if (ell < 0 || ell >= registry.L()) throw std::out_of_range("conditional_allocation: pattern out of range");
  const AllocationWeights w = allocation_weights(registry.counts(), M, sigma);
  std::vector<double> mass(registry.H() + 1);
  for (int h = 0; h < registry.H(); ++h) mass[h] = w.existing[h] * registry.atom(h)[ell];
  mass[registry.H()] = w.fresh * dirichlet_base_mean(a, ell);
  const std::size_t pick = sample_categorical(mass, rng);
  if (pick < mass.size()) return {static_cast<int>(pick), false};
  if (registry.H() == 0) throw RuntimeAbort("conditional_allocation: no mass and no clusters");
  const auto& counts = registry.counts();
  const int largest = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  logger().warn("allocation for pattern {} has zero mass; using the largest cluster", ell);
  return {largest, true};
}

/// Conjugate draw xi_h ~ Dirichlet(a + n_h).
inline std::vector<double> update_atom(std::span<const int> pattern_counts, std::span<const double> a,
                                       RngStream& rng) {
  if (pattern_counts.size() != a.size()) throw std::invalid_argument("update_atom: length mismatch");
  std::vector<double> alpha(a.size());
  for (std::size_t l = 0; l < a.size(); ++l) alpha[l] = a[l] + pattern_counts[l];
  return sample_dirichlet(alpha, rng);
}

/// Atom for a new singleton cluster whose member has pattern l.
inline std::vector<double> birth_atom(int ell, std::span<const double> a, RngStream& rng) {
  if (ell < 0 || ell >= static_cast<int>(a.size())) throw std::out_of_range("birth_atom: pattern out of range");
  std::vector<double> alpha(a.begin(), a.end());
  alpha[ell] += 1.0;
  return sample_dirichlet(alpha, rng);
}

/// Mean of Dirichlet(a + n).
inline std::vector<double> dirichlet_posterior_mean(std::span<const int> pattern_counts, std::span<const double> a) {
  std::vector<double> out(a.size());
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    out[l] = a[l] + pattern_counts[l];
    total += out[l];
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace panelstate
