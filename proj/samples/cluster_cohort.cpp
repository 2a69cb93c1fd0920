// Library usage: simulate a small cohort, fit it and print per-subject
// pattern probabilities next to the simulated truth.

#include <cstdio>
#include <vector>

#include "panelstate/panelstate.hpp"

int main() {
  using namespace panelstate;

  ScenarioConfig scenario;
  scenario.n_per_cell = 3;
  scenario.horizon = 120;
  scenario.change_day = 61;
  scenario.seed = 3;
  const Cohort cohort = generate_cohort(scenario);

  ModelConfig config = ModelConfig::appendix_b_default();
  config.n_particles = 100;
  config.prior_mc_draws = 2000;
  const PatternScheme scheme = clinical_pattern_scheme(config.events);

  McmcSettings settings;
  settings.n_chains = 2;
  settings.n_iter = 400;
  settings.burn_in = 100;
  settings.thin = 3;

  const auto tables = compute_prior_tables(cohort.data, config, scheme, settings.seed);
  const auto stores = run_chains(cohort.data, config, scheme, tables, settings);

  const int n = cohort.data.size();
  const Eigen::MatrixXd post = pattern_posterior(stores, n, config.L);
  const auto partitions = pooled_partitions(stores);
  const auto best = point_partition(similarity(partitions, n), partitions, PartitionLoss::kBinder);

  std::printf("%-6s %5s %7s %8s %s\n", "id", "truth", "P(true)", "cluster", "most likely pattern");
  for (int i = 0; i < n; ++i) {
    Eigen::Index mode = 0;
    post.row(i).maxCoeff(&mode);
    const int truth_i = cohort.truth[i].true_pattern;
    std::printf("%-6s %5d %7.3f %8d %d\n", cohort.data.subjects[i].id.c_str(), truth_i, post(i, truth_i),
                best.labels[i] + 1, static_cast<int>(mode));
  }
  std::vector<int> truth;
  for (const auto& t : cohort.truth) truth.push_back(t.true_pattern);
  std::printf("cross-entropy %.4f bits over %d draws\n", cross_entropy(post, truth, total_draws(stores)),
              total_draws(stores));
}
