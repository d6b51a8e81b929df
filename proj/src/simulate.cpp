#include "stackdid/simulate.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "stackdid/aggregate.hpp"
#include "stackdid/errors.hpp"
#include "stackdid/rng.hpp"

namespace stackdid {

void SimConfig::validate() const {
    auto fail = [](const std::string& what) {
        throw validation_error("simulation config: " + what);
    };
    if (n_treated_states != 2) {
        fail("the between-estimate design is pairwise; n_treated_states must be 2");
    }
    if (n_control_states < 1) fail("need at least one control state");
    if (persons_per_state < 1) fail("need at least one person per state");
    if (t_pre < 1 || t_post < 1) fail("t_pre and t_post must be at least 1");
    if (delta < 0) fail("delta must be nonnegative");
    if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0)) {
        fail("shared_fraction must lie in [0, 1]");
    }
    if (!(std::isfinite(rho) && std::isfinite(phi) && std::isfinite(psi))) {
        fail("correlation targets must be finite");
    }
    if (!(sigma2_e > 0.0) || !std::isfinite(sigma2_e)) fail("sigma2_e must be positive");
    if (!(std::isfinite(beta0) && std::isfinite(beta1_slope) && std::isfinite(beta2))) {
        fail("coefficients must be finite");
    }
    if (phi == 0.0 && psi > 0.0) {
        fail("phi = 0 with psi > 0 leaves the state-time correlation undefined");
    }
    if (psi < 0.0 || psi > phi) fail("need 0 <= psi <= phi");
    if (!(denom() > 0.0)) fail("(1 - rho) - (phi - psi) must be positive");
    if (sigma2_person() < 0.0 || !std::isfinite(sigma2_person())) {
        fail("implied person variance (rho - psi)/((1 - rho) - (phi - psi)) is negative");
    }
    if (sigma2_state_time() < 0.0 || !std::isfinite(sigma2_state_time())) {
        fail("implied state-time variance is invalid");
    }

    const auto n_shared = SimLayout::from_config(*this).n_shared_per_state;
    if (delta == 0 && n_shared < persons_per_state) {
        fail("delta = 0 with partial sharing is unrealizable: coincident study periods make "
             "every control individual eligible for both cohorts");
    }
}

SimLayout SimLayout::from_config(const SimConfig& config) {
    SimLayout layout;
    layout.treated_units = {"T0", "T1"};
    for (std::int64_t k = 0; k < config.n_control_states; ++k) {
        std::ostringstream name;
        name << "C" << (k < 10 ? "0" : "") << k;
        layout.control_units.push_back(name.str());
    }
    layout.t_star_a = config.t_pre;
    layout.t_star_b = config.t_pre + config.delta;
    layout.n_shared_per_state = static_cast<std::int64_t>(std::floor(
        config.shared_fraction * static_cast<double>(config.persons_per_state) + 1e-9));
    return layout;
}

OverlapCounts sim_overlap_counts(const SimConfig& config) {
    config.validate();
    const SimLayout layout = SimLayout::from_config(config);

    OverlapCounts counts;
    counts.cohort_a = layout.treated_units[0];
    counts.cohort_b = layout.treated_units[1];
    counts.n_treated_a = config.persons_per_state;
    counts.n_treated_b = config.persons_per_state;
    counts.delta = config.delta;
    counts.t_pre = config.t_pre;
    counts.t_post = config.t_post;
    for (const auto& unit : layout.control_units) {
        OverlapCounts::control_row row;
        row.unit = unit;
        row.n_a = config.persons_per_state;
        row.n_b = config.persons_per_state;
        row.n_shared = layout.n_shared_per_state;
        counts.n_ctrl_a += row.n_a;
        counts.n_ctrl_b += row.n_b;
        counts.controls.push_back(std::move(row));
    }
    counts.validate();
    return counts;
}

double sim_true_correlation(const SimConfig& config) {
    const OverlapCounts counts = sim_overlap_counts(config);
    const CorrelationStructure corr(config.rho, config.phi, config.psi, config.sigma2_total());
    return att_correlation(counts, corr);
}

std::pair<CohortSpec, CohortSpec> sim_cohort_specs(const SimConfig& config) {
    const SimLayout layout = SimLayout::from_config(config);
    CohortSpec a;
    a.treated_unit = layout.treated_units[0];
    a.policy_occasion = layout.t_star_a;
    a.t_pre = config.t_pre;
    a.t_post = config.t_post;
    CohortSpec b;
    b.treated_unit = layout.treated_units[1];
    b.policy_occasion = layout.t_star_b;
    b.t_pre = config.t_pre;
    b.t_post = config.t_post;
    return {a, b};
}

namespace {

enum class member_kind { treated_a, treated_b, shared_ctrl, only_a, only_b };

/// Walks one replicate in the canonical draw order and hands every realized
/// outcome cell to `emit(unit_index, kind, person, occasion, value)`. The
/// order is part of the reproducibility contract: states first (the two
/// treated, then controls, each in unit order), per state one common factor
/// then its occasion effects ascending, then persons ascending with their
/// intercept followed by presence-span outcomes ascending. Unit indices
/// count treated states first.
template <typename Emit>
void generate_replicate(const SimConfig& config, const SimLayout& layout,
                        std::uint64_t replicate, Emit&& emit) {
    const double sd_person = std::sqrt(config.sigma2_person());
    const double sd_noise = std::sqrt(config.sigma2_e);
    const double sigma2_c = config.sigma2_state_time();
    const double common_share = config.phi > 0.0 ? config.psi / config.phi : 0.0;
    const double sd_c_common = std::sqrt(sigma2_c * common_share);
    const double sd_c_indep = std::sqrt(sigma2_c * (1.0 - common_share));

    const std::int64_t t_span = config.t_pre + config.t_post;
    const std::int64_t a_first = 0;
    const std::int64_t a_last = t_span - 1;
    const std::int64_t b_first = config.delta;
    const std::int64_t b_last = config.delta + t_span - 1;
    const std::int64_t n_shared = layout.n_shared_per_state;
    const std::int64_t n_disjoint = config.persons_per_state - n_shared;

    rng stream = rng(config.seed).stream(replicate);
    std::vector<double> c;

    struct person_block {
        member_kind kind;
        std::int64_t count;
        std::int64_t first;  // first present occasion
        std::int64_t last;
    };

    const std::int64_t n_units = 2 + config.n_control_states;
    for (std::int64_t u = 0; u < n_units; ++u) {
        const bool is_treated_a = u == 0;
        const bool is_treated_b = u == 1;
        // Control states carry occasion effects over the union of both study
        // periods; each treated state only over its own.
        const std::int64_t state_first = is_treated_b ? b_first : a_first;
        const std::int64_t state_last = is_treated_a ? a_last : b_last;

        c.assign(static_cast<std::size_t>(state_last - state_first + 1), 0.0);
        const double z0 = stream.next_normal();
        for (auto& value : c) {
            value = sd_c_indep * stream.next_normal() + sd_c_common * z0;
        }

        person_block blocks[3];
        std::size_t n_blocks;
        if (is_treated_a) {
            blocks[0] = {member_kind::treated_a, config.persons_per_state, a_first, a_last};
            n_blocks = 1;
        } else if (is_treated_b) {
            blocks[0] = {member_kind::treated_b, config.persons_per_state, b_first, b_last};
            n_blocks = 1;
        } else {
            blocks[0] = {member_kind::shared_ctrl, n_shared, a_first, b_last};
            blocks[1] = {member_kind::only_a, n_disjoint, a_first, a_last};
            blocks[2] = {member_kind::only_b, n_disjoint, b_first, b_last};
            n_blocks = 3;
        }

        std::int64_t person = 0;
        for (std::size_t bi = 0; bi < n_blocks; ++bi) {
            const person_block& block = blocks[bi];
            for (std::int64_t i = 0; i < block.count; ++i, ++person) {
                const double b_person = sd_person * stream.next_normal();
                for (std::int64_t t = block.first; t <= block.last; ++t) {
                    const bool dosed = (is_treated_a && t >= layout.t_star_a) ||
                                       (is_treated_b && t >= layout.t_star_b);
                    const double y = config.beta0 +
                                     config.beta1_slope * static_cast<double>(t) +
                                     (dosed ? config.beta2 : 0.0) + b_person +
                                     c[static_cast<std::size_t>(t - state_first)] +
                                     sd_noise * stream.next_normal();
                    emit(u, block.kind, person, t, y);
                }
            }
        }
    }
}

struct pair_estimates {
    double att_a = 0.0;
    double att_b = 0.0;
};

/// Both cohorts' plug-in estimates for one replicate, accumulated directly
/// from the draw stream. Accumulation order per sum matches what
/// att_plugin(simulate_panel(...)) performs, so the two paths agree to the
/// last bit; a test pins that.
pair_estimates simulate_pair(const SimConfig& config, const SimLayout& layout,
                             std::uint64_t replicate) {
    const std::int64_t t_span = config.t_pre + config.t_post;
    const std::int64_t a_last = t_span - 1;
    const std::int64_t b_first = config.delta;
    const std::int64_t t_star_a = layout.t_star_a;
    const std::int64_t t_star_b = layout.t_star_b;

    double pre_tx_a = 0.0, post_tx_a = 0.0, pre_ctrl_a = 0.0, post_ctrl_a = 0.0;
    double pre_tx_b = 0.0, post_tx_b = 0.0, pre_ctrl_b = 0.0, post_ctrl_b = 0.0;

    generate_replicate(config, layout, replicate,
                       [&](std::int64_t, member_kind kind, std::int64_t, std::int64_t t,
                           double y) {
                           switch (kind) {
                               case member_kind::treated_a:
                                   (t < t_star_a ? pre_tx_a : post_tx_a) += y;
                                   break;
                               case member_kind::treated_b:
                                   (t < t_star_b ? pre_tx_b : post_tx_b) += y;
                                   break;
                               case member_kind::only_a:
                                   (t < t_star_a ? pre_ctrl_a : post_ctrl_a) += y;
                                   break;
                               case member_kind::only_b:
                                   (t < t_star_b ? pre_ctrl_b : post_ctrl_b) += y;
                                   break;
                               case member_kind::shared_ctrl:
                                   if (t <= a_last) {
                                       (t < t_star_a ? pre_ctrl_a : post_ctrl_a) += y;
                                   }
                                   if (t >= b_first) {
                                       (t < t_star_b ? pre_ctrl_b : post_ctrl_b) += y;
                                   }
                                   break;
                           }
                       });

    const double n_tx = static_cast<double>(config.persons_per_state);
    const double n_ctrl = static_cast<double>(config.n_control_states *
                                              config.persons_per_state);
    const double t_pre = static_cast<double>(config.t_pre);
    const double t_post = static_cast<double>(config.t_post);

    pair_estimates out;
    out.att_a = (post_tx_a / (n_tx * t_post) - pre_tx_a / (n_tx * t_pre)) -
                (post_ctrl_a / (n_ctrl * t_post) - pre_ctrl_a / (n_ctrl * t_pre));
    out.att_b = (post_tx_b / (n_tx * t_post) - pre_tx_b / (n_tx * t_pre)) -
                (post_ctrl_b / (n_ctrl * t_post) - pre_ctrl_b / (n_ctrl * t_pre));
    return out;
}

/// Runs body(replicate) for every replicate in [0, n), spread over a worker
/// pool. Bodies must only touch their own replicate's slot; any reduction
/// happens afterwards in index order.
void run_replicates(std::int64_t n, int threads,
                    const std::function<void(std::int64_t)>& body) {
    const auto n_workers = static_cast<int>(
        std::min<std::int64_t>(std::max(threads, 1), n));
    if (n_workers <= 1) {
        for (std::int64_t r = 0; r < n; ++r) body(r);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_lock;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const std::int64_t r = next.fetch_add(1);
                if (r >= n) break;
                try {
                    body(r);
                } catch (...) {
                    std::lock_guard<std::mutex> hold(error_lock);
                    if (!first_error) first_error = std::current_exception();
                    next.store(n);
                    break;
                }
            }
        });
    }
    for (auto& worker : pool) worker.join();
    if (first_error) std::rethrow_exception(first_error);
}

double pearson(const std::vector<pair_estimates>& pairs, std::size_t first, std::size_t count) {
    double mean_a = 0.0;
    double mean_b = 0.0;
    for (std::size_t i = first; i < first + count; ++i) {
        mean_a += pairs[i].att_a;
        mean_b += pairs[i].att_b;
    }
    mean_a /= static_cast<double>(count);
    mean_b /= static_cast<double>(count);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = first; i < first + count; ++i) {
        const double da = pairs[i].att_a - mean_a;
        const double db = pairs[i].att_b - mean_b;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) {
        throw validation_error("correlation batch has a degenerate estimate sample");
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

PanelDataset simulate_panel(const SimConfig& config, std::uint64_t replicate) {
    config.validate();
    const SimLayout layout = SimLayout::from_config(config);

    PanelDataset panel;
    panel.add_unit(layout.treated_units[0], {true, layout.t_star_a});
    panel.add_unit(layout.treated_units[1], {true, layout.t_star_b});
    for (const auto& unit : layout.control_units) panel.add_unit(unit, {false, 0});

    std::vector<std::string> unit_names = layout.treated_units;
    unit_names.insert(unit_names.end(), layout.control_units.begin(),
                      layout.control_units.end());

    generate_replicate(config, layout, replicate,
                       [&](std::int64_t unit_index, member_kind, std::int64_t person,
                           std::int64_t t, double y) {
                           const std::string& unit = unit_names[static_cast<std::size_t>(
                               unit_index)];
                           char id[32];
                           std::snprintf(id, sizeof(id), "%s.p%07lld", unit.c_str(),
                                         static_cast<long long>(person));
                           panel.add_observation(unit, id, t, y);
                       });
    panel.finalize();
    return panel;
}

std::pair<double, double> sim_pair_atts(const SimConfig& config, std::uint64_t replicate) {
    config.validate();
    const SimLayout layout = SimLayout::from_config(config);
    const pair_estimates atts = simulate_pair(config, layout, replicate);
    return {atts.att_a, atts.att_b};
}

ExperimentRow run_correlation_experiment(const SimConfig& config, std::int64_t n_batches,
                                         std::int64_t pairs_per_batch, int threads) {
    config.validate();
    if (n_batches < 1) throw validation_error("need at least one correlation batch");
    if (pairs_per_batch < 2) {
        throw validation_error("a correlation batch needs at least two estimate pairs");
    }
    const SimLayout layout = SimLayout::from_config(config);
    const std::int64_t total = n_batches * pairs_per_batch;

    std::vector<pair_estimates> pairs(static_cast<std::size_t>(total));
    run_replicates(total, threads, [&](std::int64_t r) {
        pairs[static_cast<std::size_t>(r)] =
            simulate_pair(config, layout, static_cast<std::uint64_t>(r));
    });

    double mean_cor = 0.0;
    for (std::int64_t batch = 0; batch < n_batches; ++batch) {
        mean_cor += pearson(pairs, static_cast<std::size_t>(batch * pairs_per_batch),
                            static_cast<std::size_t>(pairs_per_batch));
    }
    mean_cor /= static_cast<double>(n_batches);

    ExperimentRow row;
    row.config = config;
    row.true_cor = sim_true_correlation(config);
    row.est_cor_mean = mean_cor;
    row.est_cor_bias = mean_cor - row.true_cor;
    row.n_batches = n_batches;
    row.pairs_per_batch = pairs_per_batch;
    row.n_replicates = total;
    return row;
}

ExperimentRow run_coverage_experiment(const SimConfig& config, std::int64_t n_replicates,
                                      int threads) {
    config.validate();
    if (n_replicates < 1) throw validation_error("need at least one replicate");
    const SimLayout layout = SimLayout::from_config(config);

    const OverlapCounts counts = sim_overlap_counts(config);
    const CorrelationStructure corr(config.rho, config.phi, config.psi,
                                    config.sigma2_total());
    const double var_a = att_variance(CohortCounts::side_a(counts), corr);
    const double var_b = att_variance(CohortCounts::side_b(counts), corr);
    const double cov_ab = att_covariance(counts, corr).value;

    std::vector<pair_estimates> pairs(static_cast<std::size_t>(n_replicates));
    run_replicates(n_replicates, threads, [&](std::int64_t r) {
        pairs[static_cast<std::size_t>(r)] =
            simulate_pair(config, layout, static_cast<std::uint64_t>(r));
    });

    EstimateSet set;
    set.labels = layout.treated_units;
    set.estimates.resize(2);
    set.W.resize(2, 2);
    set.W << var_a, cov_ab, cov_ab, var_b;

    double ivw_bias = 0.0, ivw_se = 0.0;
    double gls_bias = 0.0, gls_se = 0.0;
    std::int64_t ivw_hits = 0;
    std::int64_t gls_hits = 0;
    for (std::int64_t r = 0; r < n_replicates; ++r) {
        const auto& p = pairs[static_cast<std::size_t>(r)];
        set.estimates << p.att_a, p.att_b;

        const PooledResult ivw = aggregate_ivw(set);
        ivw_bias += ivw.value - config.beta2;
        ivw_se += std::sqrt(ivw.variance);
        if (ivw.ci.lower <= config.beta2 && config.beta2 <= ivw.ci.upper) ++ivw_hits;

        const PooledResult gls = aggregate_gls(set);
        gls_bias += gls.value - config.beta2;
        gls_se += std::sqrt(gls.variance);
        if (gls.ci.lower <= config.beta2 && config.beta2 <= gls.ci.upper) ++gls_hits;
    }

    const double n = static_cast<double>(n_replicates);
    ExperimentRow row;
    row.config = config;
    row.true_cor = cov_ab / std::sqrt(var_a * var_b);
    row.n_replicates = n_replicates;
    row.ivw_bias = ivw_bias / n;
    row.ivw_mean_se = ivw_se / n;
    row.ivw_coverage = static_cast<double>(ivw_hits) / n;
    row.gls_bias = gls_bias / n;
    row.gls_mean_se = gls_se / n;
    row.gls_coverage = static_cast<double>(gls_hits) / n;
    return row;
}

std::vector<SimConfig> table1_rows(std::uint64_t seed, std::int64_t n_control_states) {
    struct family {
        std::int64_t t_pre;
        std::int64_t t_post;
        std::int64_t delta;
    };
    const family families[6] = {{1, 1, 1}, {1, 1, 2}, {5, 5, 3},
                                {5, 5, 6}, {7, 3, 3}, {7, 3, 6}};
    const double shares[2] = {0.25, 0.75};
    struct regime {
        double rho, phi, psi;
    };
    const regime regimes[2] = {{0.10, 0.06, 0.02}, {0.60, 0.40, 0.20}};

    const rng seeder(seed);
    std::vector<SimConfig> rows;
    rows.reserve(24);
    for (const auto& f : families) {
        for (double share : shares) {
            for (const auto& g : regimes) {
                SimConfig config;
                config.n_control_states = n_control_states;
                config.persons_per_state = 100;
                config.t_pre = f.t_pre;
                config.t_post = f.t_post;
                config.delta = f.delta;
                config.shared_fraction = share;
                config.rho = g.rho;
                config.phi = g.phi;
                config.psi = g.psi;
                config.seed = seeder.stream(rows.size()).root_seed();
                config.validate();
                rows.push_back(config);
            }
        }
    }
    return rows;
}

}  // namespace stackdid
