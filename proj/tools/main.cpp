#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "commands.hpp"
#include "stackdid/errors.hpp"
#include "stackdid/version.hpp"

// Exit codes: 0 success, 1 I/O failure, 2 validation or usage failure.

int main(int argc, char** argv) {
    using namespace stackdid::cli;

    CLI::App app{"stacked difference-in-differences estimation toolkit"};
    app.set_version_flag("--version", std::string(stackdid::version_string));
    app.require_subcommand(1);

    EstimateArgs estimate_args;
    CLI::App* estimate = app.add_subcommand(
        "estimate", "Per-cohort DiD estimates from a panel, a units table, and cohort definitions");
    estimate->add_option("observations", estimate_args.observations, "observation table (csv)")
        ->required();
    estimate->add_option("units", estimate_args.units, "units table (csv)")->required();
    estimate->add_option("cohorts", estimate_args.cohorts, "cohorts document")->required();
    estimate->add_option("-o,--output", estimate_args.output, "output path (default stdout)");

    CovarianceArgs covariance_args;
    std::vector<std::string> panel_inputs;
    CLI::App* covariance = app.add_subcommand(
        "covariance", "Closed-form variance/covariance matrix for a set of cohorts");
    CLI::Option* from_counts =
        covariance->add_option("--from-counts", covariance_args.counts_dir,
                               "directory of count tables (cohort_totals.csv and friends)");
    CLI::Option* from_panel =
        covariance
            ->add_option("--from-panel", panel_inputs,
                         "panel inputs: OBSERVATIONS UNITS COHORTS; counts are extracted")
            ->expected(3);
    from_counts->excludes(from_panel);
    from_panel->excludes(from_counts);
    covariance->add_option("--corr", covariance_args.corr, "correlation-structure document")
        ->required();
    covariance->add_option("-o,--output", covariance_args.output, "output path (default stdout)");

    AggregateArgs aggregate_args;
    CLI::App* aggregate =
        app.add_subcommand("aggregate", "Pool per-cohort estimates into one overall ATT");
    aggregate
        ->add_option("estimates", aggregate_args.estimates,
                     "estimates document, or a combined estimate_set document")
        ->required();
    aggregate->add_option("covariance", aggregate_args.covariance,
                          "covariance_matrix document (omit for a combined estimate_set)");
    aggregate->add_option("--method", aggregate_args.method, "pooling method")
        ->check(CLI::IsMember({"ivw", "gls"}))
        ->capture_default_str();
    aggregate->add_option("--level", aggregate_args.level, "confidence level")
        ->capture_default_str();
    aggregate
        ->add_option("--shrinkage", aggregate_args.shrinkage,
                     "blend W toward its diagonal by this weight (gls only)")
        ->capture_default_str();
    aggregate->add_option("-o,--output", aggregate_args.output, "output path (default stdout)");

    SimulateArgs simulate_args;
    CLI::App* simulate =
        app.add_subcommand("simulate", "Monte Carlo experiments over simulated cohort pairs");
    CLI::Option* table1 = simulate->add_flag("--table1", simulate_args.table1,
                                             "run the preset scenario grid");
    CLI::Option* correlation = simulate->add_option(
        "--correlation", simulate_args.correlation_config,
        "estimate the between-cohort correlation under a sim_config document");
    CLI::Option* coverage =
        simulate->add_option("--coverage", simulate_args.coverage_config,
                             "measure interval coverage under a sim_config document");
    table1->excludes(correlation)->excludes(coverage);
    correlation->excludes(coverage);
    simulate->add_option("--row", simulate_args.row, "single 1-based preset row (with --table1)");
    simulate->add_option("--replicates", simulate_args.replicates, "simulated pairs per experiment")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    CLI::Option* seed = simulate->add_option("--seed", simulate_args.seed,
                                             "root seed (overrides the config document)");
    simulate->add_option("--threads", simulate_args.threads, "worker threads")
        ->envname("STACKDID_THREADS")
        ->check(CLI::PositiveNumber);
    simulate->add_option("-o,--output", simulate_args.output, "output path (default stdout)");

    IccArgs icc_args;
    CLI::App* icc = app.add_subcommand(
        "icc", "Moment estimates of the correlation structure from a panel");
    icc->add_option("observations", icc_args.observations, "observation table (csv)")->required();
    icc->add_option("units", icc_args.units, "units table (csv)")->required();
    icc->add_option("--fraction", icc_args.fraction, "per-state subsample fraction")
        ->capture_default_str();
    icc->add_option("--resamples", icc_args.resamples, "number of balanced resamples to average")
        ->capture_default_str();
    icc->add_option("--seed", icc_args.seed, "resampling seed")->capture_default_str();
    icc->add_flag("--clamp", icc_args.clamp, "clamp infeasible estimates into the valid region");
    icc->add_option("-o,--output", icc_args.output, "output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage errors fall under the validation exit code
    }

    simulate_args.seed_given = seed->count() > 0;
    if (!panel_inputs.empty()) {
        covariance_args.observations = panel_inputs[0];
        covariance_args.units = panel_inputs[1];
        covariance_args.cohorts = panel_inputs[2];
    } else if (covariance_args.counts_dir.empty()) {
        // Default source: the bundled study's count tables.
        covariance_args.counts_dir = STACKDID_DATA_DIR "/cannabis";
    }

    try {
        if (estimate->parsed()) return cmd_estimate(estimate_args);
        if (covariance->parsed()) return cmd_covariance(covariance_args);
        if (aggregate->parsed()) return cmd_aggregate(aggregate_args);
        if (simulate->parsed()) return cmd_simulate(simulate_args);
        if (icc->parsed()) return cmd_icc(icc_args);
    } catch (const stackdid::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
