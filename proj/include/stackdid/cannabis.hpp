#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stackdid/blockcov.hpp"
#include "stackdid/panel.hpp"

namespace stackdid {

/// Count tables for the bundled twelve-state cannabis study: per-cohort
/// totals, per-control-state membership, and shared membership for every
/// cohort pair. Policy occasions are month indices on a common calendar.
struct CannabisFixture {
    struct cohort_info {
        std::string name;
        std::int64_t policy_occasion = 0;
        std::int64_t n_treated = 0;
        std::int64_t n_control_total = 0;
    };

    std::vector<cohort_info> cohorts;         // ordered by policy occasion
    std::vector<std::string> control_states;  // sorted

    std::int64_t t_pre = 48;
    std::int64_t t_post = 36;

    /// N_gamma(zeta): members of cohort `gamma` drawn from control state
    /// `zeta`.
    std::map<std::pair<std::string, std::string>, std::int64_t> control_counts;

    /// Shared members per (cohort_a, cohort_b, control state), keyed with
    /// the cohort names in lexical order; shared_count() accepts either
    /// order.
    std::map<std::tuple<std::string, std::string, std::string>, std::int64_t> shared_counts;

    [[nodiscard]] const cohort_info& cohort(const std::string& name) const;
    [[nodiscard]] std::int64_t control_count(const std::string& cohort,
                                             const std::string& state) const;
    [[nodiscard]] std::int64_t shared_count(const std::string& cohort_a,
                                            const std::string& cohort_b,
                                            const std::string& state) const;

    /// Overlap counts for one cohort pair, ready for att_covariance.
    [[nodiscard]] OverlapCounts pair_counts(const std::string& cohort_a,
                                            const std::string& cohort_b) const;

    /// Cross-table consistency: per-state counts sum to the cohort totals,
    /// shared counts never exceed either side's membership, policy
    /// occasions are distinct. Throws validation_error naming the first
    /// offending table and cell.
    void validate() const;
};

/// Loads the fixture tables from a directory of delimited text files.
/// Throws io_error for missing or malformed tables, validation_error for
/// inconsistent counts.
[[nodiscard]] CannabisFixture load_cannabis_fixture(const std::string& directory);

struct CannabisPair {
    std::string cohort_a;  // earlier policy
    std::string cohort_b;
    std::int64_t delta = 0;
    double time_factor = 0.0;
    double covariance = 0.0;
    double correlation = 0.0;
};

struct CannabisCorrelations {
    std::map<std::string, double> variances;  // per cohort
    std::vector<CannabisPair> pairs;          // all unordered pairs, policy order
    double min_correlation = 0.0;
    double max_correlation = 0.0;
    double median_correlation = 0.0;
};

/// Recomputes every pairwise covariance and correlation between the twelve
/// cohort estimates under one correlation structure.
[[nodiscard]] CannabisCorrelations cannabis_correlations(const CannabisFixture& fixture,
                                                         const CorrelationStructure& corr);

}  // namespace stackdid
