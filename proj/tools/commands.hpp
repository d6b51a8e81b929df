#pragma once

#include <cstdint>
#include <string>

namespace stackdid::cli {

/// Shared output plumbing: every command writes one kv document to the
/// given path, or to stdout when the path is empty.

struct EstimateArgs {
    std::string observations;
    std::string units;
    std::string cohorts;
    std::string output;
};

struct CovarianceArgs {
    std::string counts_dir;  // --from-counts: directory of count tables
    std::string observations;  // --from-panel: panel inputs
    std::string units;
    std::string cohorts;
    std::string corr;  // correlation-structure document
    std::string output;
};

struct AggregateArgs {
    std::string estimates;
    std::string covariance;  // empty when estimates is a combined estimate_set document
    std::string method = "gls";
    double level = 0.95;
    double shrinkage = 0.0;
    std::string output;
};

struct SimulateArgs {
    bool table1 = false;
    std::string correlation_config;  // --correlation CONFIG
    std::string coverage_config;     // --coverage CONFIG
    std::int64_t row = 0;            // 1-based preset row; 0 means all
    std::int64_t replicates = 10000;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 1;
    std::string output;
};

struct IccArgs {
    std::string observations;
    std::string units;
    double fraction = 1.0;
    std::int64_t resamples = 1;
    std::uint64_t seed = 0;
    bool clamp = false;
    std::string output;
};

int cmd_estimate(const EstimateArgs& args);
int cmd_covariance(const CovarianceArgs& args);
int cmd_aggregate(const AggregateArgs& args);
int cmd_simulate(const SimulateArgs& args);
int cmd_icc(const IccArgs& args);

}  // namespace stackdid::cli
