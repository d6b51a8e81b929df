#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "manifest.hpp"
#include "stackdid/aggregate.hpp"
#include "stackdid/blockcov.hpp"
#include "stackdid/cannabis.hpp"
#include "stackdid/errors.hpp"
#include "stackdid/estimator.hpp"
#include "stackdid/icc.hpp"
#include "stackdid/kv.hpp"
#include "stackdid/panel.hpp"
#include "stackdid/simulate.hpp"

namespace stackdid::cli {

namespace {

void emit(const kv_document& doc, const std::string& output) {
    if (output.empty()) {
        std::cout << doc.serialize();
    } else {
        doc.write_file(output);
    }
}

void require_document(const kv_document& doc, const std::string& expected,
                      const std::string& path) {
    auto kind = doc.get("document");
    if (!kind || *kind != expected) {
        throw validation_error("'" + path + "' is not a " + expected + " document (document = " +
                               (kind ? *kind : "<missing>") + ")");
    }
}

/// Cohort definitions for panel-driven commands: a cohorts document lists
/// the treated unit and window lengths per cohort; the policy occasion
/// comes from the units table, which is its single source of truth.
std::vector<CohortSpec> load_cohort_specs(const std::string& path, const PanelDataset& panel) {
    kv_document doc = kv_document::parse_file(path);
    require_document(doc, "cohorts", path);
    const kv_table& table = doc.table("cohorts");
    if (table.rows.empty()) throw validation_error("'" + path + "' defines no cohorts");
    std::vector<CohortSpec> specs;
    specs.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        CohortSpec spec;
        spec.treated_unit = table.cell(r, "cohort");
        auto role = panel.unit_roles().find(spec.treated_unit);
        if (role == panel.unit_roles().end() || !role->second.treated) {
            throw validation_error("'" + path + "': cohort '" + spec.treated_unit +
                                   "' is not a treated unit of the panel");
        }
        spec.policy_occasion = role->second.policy_occasion;
        spec.t_pre = table.cell_int(r, "t_pre");
        spec.t_post = table.cell_int(r, "t_post");
        for (const CohortSpec& earlier : specs) {
            if (earlier.treated_unit == spec.treated_unit) {
                throw validation_error("'" + path + "': cohort '" + spec.treated_unit +
                                       "' listed twice");
            }
        }
        specs.push_back(std::move(spec));
    }
    return specs;
}

/// Writes the covariance command's result: per-cohort variances, the full
/// matrix with its correlation form, and one row per cohort pair.
kv_document covariance_document(const std::vector<std::string>& labels,
                                const std::map<std::string, double>& variances,
                                const std::vector<CannabisPair>& pairs,
                                const CorrelationStructure& corr, std::int64_t t_pre,
                                std::int64_t t_post) {
    kv_document doc;
    doc.set("document", "covariance_matrix");
    doc.set("n_cohorts", static_cast<std::int64_t>(labels.size()));
    doc.set("t_pre", t_pre);
    doc.set("t_post", t_post);
    doc.set("rho", corr.base().rho);
    doc.set("phi", corr.base().phi);
    doc.set("psi", corr.base().psi);
    doc.set("sigma2", corr.base().sigma2);

    if (!pairs.empty()) {
        std::vector<double> cors;
        cors.reserve(pairs.size());
        for (const auto& pair : pairs) cors.push_back(pair.correlation);
        std::sort(cors.begin(), cors.end());
        std::size_t mid = cors.size() / 2;
        doc.set("min_correlation", cors.front());
        doc.set("max_correlation", cors.back());
        doc.set("median_correlation",
                cors.size() % 2 == 1 ? cors[mid] : 0.5 * (cors[mid - 1] + cors[mid]));
    }

    kv_table& cohorts = doc.add_table("cohorts", {"cohort", "variance"});
    for (const auto& label : labels) {
        cohorts.rows.push_back({label, format_double(variances.at(label))});
    }

    std::map<std::pair<std::string, std::string>, double> cov;
    for (const auto& label : labels) cov[{label, label}] = variances.at(label);
    for (const auto& pair : pairs) {
        cov[{pair.cohort_a, pair.cohort_b}] = pair.covariance;
        cov[{pair.cohort_b, pair.cohort_a}] = pair.covariance;
    }

    kv_table& matrix = doc.add_table("covariance", {"row", "col", "value"});
    kv_table& correl = doc.add_table("correlation", {"row", "col", "value"});
    for (const auto& a : labels) {
        for (const auto& b : labels) {
            double w = cov.at({a, b});
            matrix.rows.push_back({a, b, format_double(w)});
            double r = a == b ? 1.0 : w / std::sqrt(variances.at(a) * variances.at(b));
            correl.rows.push_back({a, b, format_double(r)});
        }
    }

    kv_table& pair_table = doc.add_table(
        "pairs", {"cohort_a", "cohort_b", "delta", "time_factor", "covariance", "correlation"});
    for (const auto& pair : pairs) {
        pair_table.rows.push_back({pair.cohort_a, pair.cohort_b, std::to_string(pair.delta),
                                   format_double(pair.time_factor), format_double(pair.covariance),
                                   format_double(pair.correlation)});
    }
    return doc;
}

/// Total simulated pairs -> (batches, pairs per batch). Small runs form a
/// single batch; larger ones use the standard 100-pair batches so that the
/// reported mean is a mean of per-batch correlations.
std::pair<std::int64_t, std::int64_t> split_batches(std::int64_t replicates) {
    if (replicates < 2) {
        throw validation_error("correlation experiments need at least 2 replicates, got " +
                               std::to_string(replicates));
    }
    if (replicates < 200) return {1, replicates};
    if (replicates % 100 != 0) {
        throw validation_error("replicate counts of 200 or more must be multiples of 100 "
                               "(correlations are estimated in 100-pair batches), got " +
                               std::to_string(replicates));
    }
    return {replicates / 100, 100};
}

SimConfig sim_config_from_document(const kv_document& doc, const std::string& path) {
    require_document(doc, "sim_config", path);
    SimConfig config;
    for (const auto& [key, value] : doc.entries()) {
        std::string context = path + ": key '" + key + "'";
        if (key == "document") continue;
        if (key == "n_treated_states") config.n_treated_states = parse_int(value, context);
        else if (key == "n_control_states") config.n_control_states = parse_int(value, context);
        else if (key == "persons_per_state") config.persons_per_state = parse_int(value, context);
        else if (key == "t_pre") config.t_pre = parse_int(value, context);
        else if (key == "t_post") config.t_post = parse_int(value, context);
        else if (key == "delta") config.delta = parse_int(value, context);
        else if (key == "shared_fraction") config.shared_fraction = parse_double(value, context);
        else if (key == "rho") config.rho = parse_double(value, context);
        else if (key == "phi") config.phi = parse_double(value, context);
        else if (key == "psi") config.psi = parse_double(value, context);
        else if (key == "sigma2_e") config.sigma2_e = parse_double(value, context);
        else if (key == "beta0") config.beta0 = parse_double(value, context);
        else if (key == "beta1_slope") config.beta1_slope = parse_double(value, context);
        else if (key == "beta2") config.beta2 = parse_double(value, context);
        else if (key == "seed") config.seed = static_cast<std::uint64_t>(parse_int(value, context));
        else throw validation_error(path + ": unknown sim_config key '" + key + "'");
    }
    config.validate();
    return config;
}

void append_scenario_columns(std::vector<std::string>& row, const SimConfig& config) {
    row.push_back(std::to_string(config.t_pre));
    row.push_back(std::to_string(config.t_post));
    row.push_back(std::to_string(config.delta));
    row.push_back(format_double(config.shared_fraction));
    row.push_back(format_double(config.rho));
    row.push_back(format_double(config.phi));
    row.push_back(format_double(config.psi));
}

const std::vector<std::string> scenario_columns = {
    "t_pre", "t_post", "delta", "shared_fraction", "rho", "phi", "psi"};

std::vector<std::string> with_scenario_columns(std::vector<std::string> before,
                                               const std::vector<std::string>& after) {
    before.insert(before.end(), scenario_columns.begin(), scenario_columns.end());
    before.insert(before.end(), after.begin(), after.end());
    return before;
}

}  // namespace

int cmd_estimate(const EstimateArgs& args) {
    PanelDataset panel = load_panel_files(args.observations, args.units);
    std::vector<CohortSpec> specs = load_cohort_specs(args.cohorts, panel);

    kv_document doc;
    doc.set("document", "estimates");
    doc.set("n_estimates", static_cast<std::int64_t>(specs.size()));
    kv_table& table = doc.add_table(
        "estimates",
        {"cohort", "value", "n_treated", "n_control", "policy_occasion", "t_pre", "t_post"});
    for (const CohortSpec& spec : specs) {
        Cohort cohort = build_cohort(panel, spec);
        AttEstimate est = att_plugin(panel, cohort);
        table.rows.push_back({est.cohort_id, format_double(est.value),
                              std::to_string(est.n_treated), std::to_string(est.n_control),
                              std::to_string(est.policy_occasion), std::to_string(est.t_pre),
                              std::to_string(est.t_post)});
    }

    RunManifest manifest;
    manifest.command = "estimate";
    manifest.add_input("observations", args.observations);
    manifest.add_input("units", args.units);
    manifest.add_input("cohorts", args.cohorts);
    manifest.stamp(doc);
    emit(doc, args.output);
    return 0;
}

int cmd_covariance(const CovarianceArgs& args) {
    bool from_counts = !args.counts_dir.empty();
    bool from_panel = !args.observations.empty();
    if (from_counts == from_panel) {
        throw validation_error("choose exactly one of --from-counts and --from-panel");
    }

    CorrelationStructure corr =
        CorrelationStructure::from_document(kv_document::parse_file(args.corr));

    RunManifest manifest;
    manifest.command = "covariance";
    manifest.add_input("corr", args.corr);

    kv_document doc;
    if (from_counts) {
        CannabisFixture fixture = load_cannabis_fixture(args.counts_dir);
        CannabisCorrelations result = cannabis_correlations(fixture, corr);
        std::vector<std::string> labels;
        labels.reserve(fixture.cohorts.size());
        for (const auto& info : fixture.cohorts) labels.push_back(info.name);
        doc = covariance_document(labels, result.variances, result.pairs, corr, fixture.t_pre,
                                  fixture.t_post);
        manifest.add_config("source", "counts");
        for (const char* name : {"cohort_totals", "control_state_counts", "shared_control_counts",
                                 "policy_occasions", "disjoint_control_counts"}) {
            manifest.add_input(name, args.counts_dir + "/" + name + std::string(".csv"));
        }
    } else {
        PanelDataset panel = load_panel_files(args.observations, args.units);
        std::vector<CohortSpec> specs = load_cohort_specs(args.cohorts, panel);
        std::vector<Cohort> cohorts;
        cohorts.reserve(specs.size());
        for (const CohortSpec& spec : specs) cohorts.push_back(build_cohort(panel, spec));

        std::vector<std::string> labels;
        std::map<std::string, double> variances;
        for (const Cohort& cohort : cohorts) {
            CohortCounts counts;
            counts.cohort = cohort.spec.treated_unit;
            counts.n_treated = cohort.n_treated();
            counts.n_ctrl = cohort.n_control_total();
            counts.t_pre = cohort.spec.t_pre;
            counts.t_post = cohort.spec.t_post;
            for (const auto& [unit, members] : cohort.control_members) {
                counts.controls.emplace_back(unit, static_cast<std::int64_t>(members.size()));
            }
            labels.push_back(counts.cohort);
            variances[counts.cohort] = att_variance(counts, corr);
        }
        std::vector<CannabisPair> pairs;
        for (std::size_t i = 0; i < cohorts.size(); ++i) {
            for (std::size_t j = i + 1; j < cohorts.size(); ++j) {
                const Cohort& early = cohorts[i].spec.policy_occasion <=
                                              cohorts[j].spec.policy_occasion
                                          ? cohorts[i]
                                          : cohorts[j];
                const Cohort& late = &early == &cohorts[i] ? cohorts[j] : cohorts[i];
                OverlapCounts counts = overlap_counts(early, late);
                PairCovariance cov = att_covariance(counts, corr);
                CannabisPair pair;
                pair.cohort_a = counts.cohort_a;
                pair.cohort_b = counts.cohort_b;
                pair.delta = counts.delta;
                pair.time_factor = cov.time_factor;
                pair.covariance = cov.value;
                pair.correlation = cov.value / std::sqrt(variances.at(counts.cohort_a) *
                                                         variances.at(counts.cohort_b));
                pairs.push_back(std::move(pair));
            }
        }
        doc = covariance_document(labels, variances, pairs, corr, specs.front().t_pre,
                                  specs.front().t_post);
        manifest.add_config("source", "panel");
        manifest.add_input("observations", args.observations);
        manifest.add_input("units", args.units);
        manifest.add_input("cohorts", args.cohorts);
    }

    manifest.stamp(doc);
    emit(doc, args.output);
    return 0;
}

int cmd_aggregate(const AggregateArgs& args) {
    EstimateSet set;
    kv_document est_doc = kv_document::parse_file(args.estimates);
    RunManifest manifest;
    manifest.command = "aggregate";
    manifest.add_input("estimates", args.estimates);

    if (args.covariance.empty()) {
        // A combined estimate_set document carries both the estimates and W.
        set = EstimateSet::from_document(est_doc);
    } else {
        require_document(est_doc, "estimates", args.estimates);
        const kv_table& est_table = est_doc.table("estimates");
        std::map<std::string, std::size_t> index;
        for (std::size_t r = 0; r < est_table.rows.size(); ++r) {
            const std::string& label = est_table.cell(r, "cohort");
            if (!index.emplace(label, r).second) {
                throw validation_error("'" + args.estimates + "': cohort '" + label +
                                       "' listed twice");
            }
            set.labels.push_back(label);
        }
        std::size_t n = set.labels.size();
        set.estimates.resize(static_cast<Eigen::Index>(n));
        for (std::size_t r = 0; r < n; ++r) {
            set.estimates[static_cast<Eigen::Index>(r)] = est_table.cell_double(r, "value");
        }

        kv_document cov_doc = kv_document::parse_file(args.covariance);
        require_document(cov_doc, "covariance_matrix", args.covariance);
        const kv_table& cov_table = cov_doc.table("covariance");
        set.W = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n),
                                          static_cast<Eigen::Index>(n),
                                          std::numeric_limits<double>::quiet_NaN());
        for (std::size_t r = 0; r < cov_table.rows.size(); ++r) {
            auto row = index.find(cov_table.cell(r, "row"));
            auto col = index.find(cov_table.cell(r, "col"));
            if (row == index.end() || col == index.end()) {
                throw validation_error("'" + args.covariance + "': covariance entry (" +
                                       cov_table.cell(r, "row") + ", " + cov_table.cell(r, "col") +
                                       ") names a cohort absent from the estimates document");
            }
            set.W(static_cast<Eigen::Index>(row->second), static_cast<Eigen::Index>(col->second)) =
                cov_table.cell_double(r, "value");
        }
        if (set.W.hasNaN()) {
            throw validation_error("'" + args.covariance +
                                   "': covariance table does not cover every cohort pair");
        }
        set.validate();
        manifest.add_input("covariance", args.covariance);
    }

    PooledResult result;
    if (args.method == "ivw") {
        result = aggregate_ivw(set, args.level);
    } else if (args.method == "gls") {
        GlsOptions options;
        options.shrinkage = args.shrinkage;
        options.level = args.level;
        result = aggregate_gls(set, options);
    } else {
        throw validation_error("unknown method '" + args.method + "' (expected ivw or gls)");
    }

    kv_document doc;
    doc.set("document", "pooled");
    doc.set("method", result.method);
    doc.set("n_estimates", static_cast<std::int64_t>(set.labels.size()));
    doc.set("value", result.value);
    doc.set("variance", result.variance);
    doc.set("se", std::sqrt(result.variance));
    doc.set("ci_level", result.ci.level);
    doc.set("ci_lower", result.ci.lower);
    doc.set("ci_upper", result.ci.upper);
    doc.set("condition", result.condition);
    doc.set("ill_conditioned", result.ill_conditioned ? "true" : "false");
    kv_table& weights = doc.add_table("weights", {"cohort", "weight"});
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
        weights.rows.push_back(
            {set.labels[i], format_double(result.weights[static_cast<Eigen::Index>(i)])});
    }

    manifest.add_config("method", args.method);
    manifest.add_config("level", args.level);
    if (args.method == "gls") manifest.add_config("shrinkage", args.shrinkage);
    manifest.stamp(doc);
    emit(doc, args.output);
    return 0;
}

int cmd_simulate(const SimulateArgs& args) {
    int modes = (args.table1 ? 1 : 0) + (args.correlation_config.empty() ? 0 : 1) +
                (args.coverage_config.empty() ? 0 : 1);
    if (modes != 1) {
        throw validation_error("choose exactly one of --table1, --correlation, --coverage");
    }
    if (args.row != 0 && !args.table1) {
        throw validation_error("--row applies only to --table1");
    }

    RunManifest manifest;
    manifest.command = "simulate";
    manifest.add_config("replicates", args.replicates);

    kv_document doc;
    doc.set("document", "simulation");

    if (args.table1) {
        std::uint64_t seed = args.seed_given ? args.seed : 0;
        std::vector<SimConfig> rows = table1_rows(seed);
        std::size_t first = 0;
        std::size_t last = rows.size();
        if (args.row != 0) {
            if (args.row < 1 || args.row > static_cast<std::int64_t>(rows.size())) {
                throw validation_error("--row must be in [1, " + std::to_string(rows.size()) +
                                       "], got " + std::to_string(args.row));
            }
            first = static_cast<std::size_t>(args.row - 1);
            last = first + 1;
        }
        auto [n_batches, pairs_per_batch] = split_batches(args.replicates);

        doc.set("mode", "table1");
        doc.set("seed", std::to_string(seed));
        doc.set("n_batches", n_batches);
        doc.set("pairs_per_batch", pairs_per_batch);
        doc.set("coverage_replicates", args.replicates);
        kv_table& table = doc.add_table(
            "results", with_scenario_columns({"row"}, {"true_cor", "est_cor", "cor_bias",
                                                       "ivw_coverage", "gls_coverage",
                                                       "ivw_mean_se", "gls_mean_se"}));
        for (std::size_t r = first; r < last; ++r) {
            ExperimentRow cor_row =
                run_correlation_experiment(rows[r], n_batches, pairs_per_batch, args.threads);
            ExperimentRow covg_row = run_coverage_experiment(rows[r], args.replicates, args.threads);
            std::vector<std::string> row{std::to_string(r + 1)};
            append_scenario_columns(row, rows[r]);
            row.push_back(format_double(cor_row.true_cor));
            row.push_back(format_double(cor_row.est_cor_mean));
            row.push_back(format_double(cor_row.est_cor_bias));
            row.push_back(format_double(covg_row.ivw_coverage));
            row.push_back(format_double(covg_row.gls_coverage));
            row.push_back(format_double(covg_row.ivw_mean_se));
            row.push_back(format_double(covg_row.gls_mean_se));
            table.rows.push_back(std::move(row));
        }
        manifest.add_config("mode", "table1");
        if (args.row != 0) manifest.add_config("row", args.row);
        manifest.seed = seed;
    } else if (!args.correlation_config.empty()) {
        SimConfig config = sim_config_from_document(
            kv_document::parse_file(args.correlation_config), args.correlation_config);
        if (args.seed_given) config.seed = args.seed;
        auto [n_batches, pairs_per_batch] = split_batches(args.replicates);
        ExperimentRow row = run_correlation_experiment(config, n_batches, pairs_per_batch,
                                                       args.threads);
        doc.set("mode", "correlation");
        doc.set("seed", std::to_string(config.seed));
        doc.set("n_batches", n_batches);
        doc.set("pairs_per_batch", pairs_per_batch);
        kv_table& table = doc.add_table(
            "results", with_scenario_columns({}, {"true_cor", "est_cor", "cor_bias"}));
        std::vector<std::string> cells;
        append_scenario_columns(cells, config);
        cells.push_back(format_double(row.true_cor));
        cells.push_back(format_double(row.est_cor_mean));
        cells.push_back(format_double(row.est_cor_bias));
        table.rows.push_back(std::move(cells));
        manifest.add_config("mode", "correlation");
        manifest.add_input("config", args.correlation_config);
        manifest.seed = config.seed;
    } else {
        SimConfig config = sim_config_from_document(kv_document::parse_file(args.coverage_config),
                                                    args.coverage_config);
        if (args.seed_given) config.seed = args.seed;
        ExperimentRow row = run_coverage_experiment(config, args.replicates, args.threads);
        doc.set("mode", "coverage");
        doc.set("seed", std::to_string(config.seed));
        doc.set("n_replicates", args.replicates);
        kv_table& table = doc.add_table(
            "results",
            with_scenario_columns({}, {"true_cor", "ivw_bias", "ivw_mean_se", "ivw_coverage",
                                       "gls_bias", "gls_mean_se", "gls_coverage"}));
        std::vector<std::string> cells;
        append_scenario_columns(cells, config);
        cells.push_back(format_double(row.true_cor));
        cells.push_back(format_double(row.ivw_bias));
        cells.push_back(format_double(row.ivw_mean_se));
        cells.push_back(format_double(row.ivw_coverage));
        cells.push_back(format_double(row.gls_bias));
        cells.push_back(format_double(row.gls_mean_se));
        cells.push_back(format_double(row.gls_coverage));
        table.rows.push_back(std::move(cells));
        manifest.add_config("mode", "coverage");
        manifest.add_input("config", args.coverage_config);
        manifest.seed = config.seed;
    }

    manifest.stamp(doc);
    emit(doc, args.output);
    return 0;
}

int cmd_icc(const IccArgs& args) {
    PanelDataset panel = load_panel_files(args.observations, args.units);

    IccOptions options;
    options.clamp = args.clamp;
    for (const auto& [unit, role] : panel.unit_roles()) {
        if (role.treated) options.treated_units.emplace_back(unit, role.policy_occasion);
    }

    IccEstimate estimate;
    if (args.fraction == 1.0 && args.resamples == 1) {
        estimate = estimate_icc(panel, options);
    } else {
        // Averaging the per-resample correlation estimates (not the raw
        // variance components) is the composition the estimator documents.
        std::vector<PanelDataset> resamples =
            subsample_balanced(panel, args.fraction, args.resamples, args.seed);
        for (const PanelDataset& resample : resamples) {
            IccEstimate one = estimate_icc(resample, options);
            estimate.rho += one.rho / static_cast<double>(resamples.size());
            estimate.phi += one.phi / static_cast<double>(resamples.size());
            estimate.psi += one.psi / static_cast<double>(resamples.size());
            estimate.sigma2 += one.sigma2 / static_cast<double>(resamples.size());
            estimate.n_pairs_rho += one.n_pairs_rho;
            estimate.n_pairs_phi += one.n_pairs_phi;
            estimate.n_pairs_psi += one.n_pairs_psi;
            estimate.n_observations += one.n_observations;
            estimate.clamped = estimate.clamped || one.clamped;
        }
        estimate.feasible = estimate.rho < 1.0 && estimate.rho >= estimate.phi &&
                            estimate.phi >= estimate.psi && estimate.psi >= 0.0;
    }
    estimate.resamples = IccEstimate::resample_meta{args.resamples, args.fraction, args.seed};

    kv_document doc = estimate.to_document();
    RunManifest manifest;
    manifest.command = "icc";
    manifest.add_config("fraction", args.fraction);
    manifest.add_config("resamples", args.resamples);
    manifest.add_config("clamp", args.clamp ? "true" : "false");
    manifest.seed = args.seed;
    manifest.add_input("observations", args.observations);
    manifest.add_input("units", args.units);
    manifest.stamp(doc);
    emit(doc, args.output);
    return 0;
}

}  // namespace stackdid::cli
