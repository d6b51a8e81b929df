#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stackdid/blockcov.hpp"
#include "stackdid/panel.hpp"

namespace stackdid {

/// One simulation scenario: two staggered cohorts drawing on a pool of
/// control states, outcomes generated from the random-effects model with a
/// person intercept, a state-time effect, and white noise.
struct SimConfig {
    std::int64_t n_treated_states = 2;  // the design is pairwise
    std::int64_t n_control_states = 3;
    std::int64_t persons_per_state = 100;
    std::int64_t t_pre = 1;
    std::int64_t t_post = 1;
    std::int64_t delta = 1;        // offset between the two policy occasions
    double shared_fraction = 0.25; // of each control state's members, in both cohorts
    double rho = 0.0;
    double phi = 0.0;
    double psi = 0.0;
    double sigma2_e = 1.0;
    double beta0 = 0.0;
    double beta1_slope = 0.0;  // common time trend: beta1(t) = slope * t
    double beta2 = 0.0;        // true treatment effect
    std::uint64_t seed = 0;

    /// Variance-component mappings that realize (rho, phi, psi).
    [[nodiscard]] double denom() const { return (1.0 - rho) - (phi - psi); }
    [[nodiscard]] double sigma2_person() const { return (rho - psi) / denom() * sigma2_e; }
    [[nodiscard]] double sigma2_state_time() const { return phi / denom() * sigma2_e; }
    [[nodiscard]] double sigma2_total() const { return sigma2_e / denom(); }

    /// Throws validation_error: nonpositive sizes, shared_fraction outside
    /// [0,1], phi = 0 with psi > 0 (the state-time correlation is then
    /// undefined), or variance mappings that are negative or infinite.
    void validate() const;
};

/// Names used by generated panels, in generation order.
struct SimLayout {
    std::vector<std::string> treated_units;  // "T0", "T1"
    std::vector<std::string> control_units;  // "C0", ...
    std::int64_t t_star_a = 0;               // = t_pre
    std::int64_t t_star_b = 0;               // = t_pre + delta
    std::int64_t n_shared_per_state = 0;

    [[nodiscard]] static SimLayout from_config(const SimConfig& config);
};

/// Overlap counts implied by the design, for closed-form truths.
[[nodiscard]] OverlapCounts sim_overlap_counts(const SimConfig& config);

/// Closed-form correlation between the two cohorts' estimates under the
/// scenario's parameters.
[[nodiscard]] double sim_true_correlation(const SimConfig& config);

/// Generates one replicate's panel. Deterministic in (config.seed,
/// replicate): the same pair always yields the identical dataset.
[[nodiscard]] PanelDataset simulate_panel(const SimConfig& config, std::uint64_t replicate = 0);

/// The two cohort specs matching a generated panel.
[[nodiscard]] std::pair<CohortSpec, CohortSpec> sim_cohort_specs(const SimConfig& config);

/// Both cohorts' plug-in estimates for one replicate (first = earlier
/// policy), accumulated straight from the draw stream without building a
/// panel. Bitwise-identical to running att_plugin on simulate_panel output
/// with the matching cohort specs.
[[nodiscard]] std::pair<double, double> sim_pair_atts(const SimConfig& config,
                                                      std::uint64_t replicate);

/// Aggregated results of a scenario's experiments.
struct ExperimentRow {
    SimConfig config;

    double true_cor = 0.0;

    // Correlation experiment.
    double est_cor_mean = 0.0;
    double est_cor_bias = 0.0;
    std::int64_t n_batches = 0;
    std::int64_t pairs_per_batch = 0;

    // Coverage experiment. Intervals use the closed-form variances: the
    // diagonal only for the uncorrected method, the full matrix for the
    // corrected one.
    double ivw_bias = 0.0;
    double ivw_mean_se = 0.0;
    double ivw_coverage = 0.0;
    double gls_bias = 0.0;
    double gls_mean_se = 0.0;
    double gls_coverage = 0.0;
    std::int64_t n_replicates = 0;
};

/// Estimates the between-cohort correlation empirically: n_batches
/// batches, each the Pearson correlation of pairs_per_batch simulated
/// estimate pairs; reports the mean across batches against the closed form.
/// Replicates are distributed over threads; each owns its derived stream
/// and results reduce in replicate order.
[[nodiscard]] ExperimentRow run_correlation_experiment(const SimConfig& config,
                                                       std::int64_t n_batches,
                                                       std::int64_t pairs_per_batch,
                                                       int threads = 1);

/// Coverage of normal-theory intervals for the pooled effect across
/// replicates, with and without the covariance correction.
[[nodiscard]] ExperimentRow run_coverage_experiment(const SimConfig& config,
                                                    std::int64_t n_replicates, int threads = 1);

/// The 24 preset scenarios behind the CLI's --table1 mode: six
/// (t_pre, t_post, delta) families, each crossed with shared fractions
/// {0.25, 0.75} and correlation regimes (0.10, 0.06, 0.02) and
/// (0.60, 0.40, 0.20), 100 persons per state. Row numbers are 1-based.
[[nodiscard]] std::vector<SimConfig> table1_rows(std::uint64_t seed,
                                                std::int64_t n_control_states = 3);

}  // namespace stackdid
