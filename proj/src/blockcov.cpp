#include "stackdid/blockcov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "stackdid/errors.hpp"
#include "stackdid/kv.hpp"

namespace stackdid {

namespace {

using int128 = __int128;

std::int64_t positive_part(std::int64_t x) { return x > 0 ? x : 0; }

std::int64_t min4(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    return std::min(std::min(a, b), std::min(c, d));
}

void check_windows(std::int64_t t_pre, std::int64_t t_post, std::int64_t delta) {
    if (t_pre < 1 || t_post < 1) {
        throw validation_error("window lengths must be at least 1, got t_pre=" +
                               std::to_string(t_pre) + " t_post=" + std::to_string(t_post));
    }
    if (delta < 0) {
        throw validation_error("delta must be nonnegative, got " + std::to_string(delta));
    }
}

void check_params(const unit_corr& c, const std::string& where) {
    auto fail = [&](const std::string& what) {
        throw validation_error("correlation structure (" + where + "): " + what);
    };
    if (!(std::isfinite(c.rho) && std::isfinite(c.phi) && std::isfinite(c.psi) &&
          std::isfinite(c.sigma2))) {
        fail("parameters must be finite");
    }
    if (!(c.rho >= 0.0 && c.rho < 1.0)) fail("rho must lie in [0, 1)");
    if (!(c.psi >= 0.0)) fail("psi must be nonnegative");
    if (!(c.rho >= c.phi && c.phi >= c.psi)) fail("need rho >= phi >= psi");
    if (!(c.sigma2 > 0.0)) fail("sigma2 must be positive");
}

/// Kahan-compensated accumulator; per-state contributions can span many
/// orders of magnitude in the bundled count tables.
struct compensated_sum {
    double total = 0.0;
    double carry = 0.0;

    void add(double x) {
        const double y = x - carry;
        const double t = total + y;
        carry = (t - total) - y;
        total = t;
    }
};

}  // namespace

void CorrelationStructure::validate() const {
    check_params(base_, "base");
    for (const auto& [unit, c] : overrides_) check_params(c, "unit \"" + unit + "\"");
}

kv_document CorrelationStructure::to_document() const {
    kv_document doc;
    doc.set("document", "correlation_structure");
    doc.set("rho", base_.rho);
    doc.set("phi", base_.phi);
    doc.set("psi", base_.psi);
    doc.set("sigma2", base_.sigma2);
    if (!overrides_.empty()) {
        kv_table& t = doc.add_table("unit_overrides", {"unit", "rho", "phi", "psi", "sigma2"});
        for (const auto& [unit, c] : overrides_) {
            t.rows.push_back({unit, format_double(c.rho), format_double(c.phi),
                              format_double(c.psi), format_double(c.sigma2)});
        }
    }
    return doc;
}

CorrelationStructure CorrelationStructure::from_document(const kv_document& doc) {
    CorrelationStructure corr;
    unit_corr base;
    base.rho = doc.at_double("rho");
    base.phi = doc.at_double("phi");
    base.psi = doc.at_double("psi");
    base.sigma2 = doc.contains("sigma2") ? doc.at_double("sigma2") : 1.0;
    corr.set_base(base);
    if (const kv_table* t = doc.find_table("unit_overrides")) {
        for (std::size_t r = 0; r < t->rows.size(); ++r) {
            unit_corr c;
            c.rho = t->cell_double(r, "rho");
            c.phi = t->cell_double(r, "phi");
            c.psi = t->cell_double(r, "psi");
            c.sigma2 = t->cell_double(r, "sigma2");
            corr.set_override(t->cell(r, "unit"), c);
        }
    }
    corr.validate();
    return corr;
}

double time_factor(std::int64_t t_pre, std::int64_t t_post, std::int64_t delta) {
    check_windows(t_pre, t_post, delta);
    const std::int64_t overlap = min4(t_pre, t_post, delta, positive_part(t_pre + t_post - delta));
    const int128 num = int128(t_pre) * t_pre * positive_part(t_post - delta) +
                       int128(t_post) * t_post * positive_part(t_pre - delta) -
                       int128(t_pre) * t_post * overlap;
    const int128 den = int128(t_pre) * t_pre * t_post * t_post;
    return static_cast<double>(num) / static_cast<double>(den);
}

TimeFactorZeros time_factor_zeros(std::int64_t t_pre, std::int64_t t_post) {
    check_windows(t_pre, t_post, 0);
    // The factor is piecewise linear in delta: positive at 0, strictly
    // decreasing through its root, nonpositive until the study periods stop
    // touching. Setting the first branch to zero gives the root, which
    // always lands at or below min(t_pre, t_post).
    const double num = static_cast<double>(t_pre) * t_pre * t_post +
                       static_cast<double>(t_pre) * t_post * t_post;
    const double den = static_cast<double>(t_pre) * t_pre +
                       static_cast<double>(t_pre) * t_post +
                       static_cast<double>(t_post) * t_post;
    return {num / den, static_cast<double>(t_pre + t_post)};
}

WindowDurations window_durations(std::int64_t t_pre, std::int64_t t_post, std::int64_t delta) {
    check_windows(t_pre, t_post, delta);
    WindowDurations w;
    w.a_pre_alone = std::min(t_pre, delta);
    w.pre_pre = positive_part(t_pre - delta);
    w.a_post_alone = std::min(positive_part(delta - t_pre), t_post);
    w.post_pre = min4(t_pre, t_post, delta, positive_part(t_pre + t_post - delta));
    w.post_post = positive_part(t_post - delta);
    w.b_pre_alone = positive_part(delta - t_post);
    w.b_post_alone = std::min(t_post, delta);
    return w;
}

double window_identity_residual(std::int64_t t_pre, std::int64_t t_post, std::int64_t delta) {
    check_windows(t_pre, t_post, delta);
    const std::int64_t m = min4(t_pre, t_post, delta, positive_part(t_pre + t_post - delta));
    const std::int64_t a_post_alone = std::min(positive_part(delta - t_pre), t_post);
    const int128 inner = int128(t_post) * positive_part(delta - t_post) +
                         int128(t_pre) * a_post_alone -
                         int128(a_post_alone) * positive_part(delta - t_post) -
                         int128(std::min(t_pre, delta)) * std::min(t_post, delta) +
                         int128(m) * (t_pre + t_post - positive_part(t_pre - delta) -
                                      a_post_alone - positive_part(t_post - delta) -
                                      positive_part(delta - t_post) - m);
    const int128 scaled = int128(t_pre) * t_post * inner;
    const double den = static_cast<double>(t_pre) * t_pre * t_post * t_post;
    return static_cast<double>(scaled) / den;
}

CohortCounts CohortCounts::side_a(const OverlapCounts& counts) {
    counts.validate();
    CohortCounts c;
    c.cohort = counts.cohort_a;
    c.n_treated = counts.n_treated_a;
    for (const auto& row : counts.controls) c.controls.emplace_back(row.unit, row.n_a);
    c.n_ctrl = counts.n_ctrl_a;
    c.t_pre = counts.t_pre;
    c.t_post = counts.t_post;
    return c;
}

CohortCounts CohortCounts::side_b(const OverlapCounts& counts) {
    counts.validate();
    CohortCounts c;
    c.cohort = counts.cohort_b;
    c.n_treated = counts.n_treated_b;
    for (const auto& row : counts.controls) c.controls.emplace_back(row.unit, row.n_b);
    c.n_ctrl = counts.n_ctrl_b;
    c.t_pre = counts.t_pre;
    c.t_post = counts.t_post;
    return c;
}

double att_variance(const CohortCounts& counts, const CorrelationStructure& corr) {
    corr.validate();
    check_windows(counts.t_pre, counts.t_post, 0);
    if (counts.n_treated < 1) {
        throw validation_error("variance: cohort \"" + counts.cohort +
                               "\" needs at least one treated member");
    }
    std::int64_t sum = 0;
    for (const auto& [unit, n] : counts.controls) {
        if (n < 0) {
            throw validation_error("variance: negative control count for unit \"" + unit + "\"");
        }
        sum += n;
    }
    if (sum != counts.n_ctrl || counts.n_ctrl < 1) {
        throw validation_error("variance: control total for cohort \"" + counts.cohort +
                               "\" does not match its rows or is empty");
    }

    // Each arm contributes sigma2/N_arm^2 times
    // N(1 - rho) + N(N - 1)(phi - psi), with the treated state its own arm
    // and all control states pooled into one.
    auto bracket = [](std::int64_t n, const unit_corr& c) {
        return static_cast<double>(n) * (1.0 - c.rho) +
               static_cast<double>(n) * static_cast<double>(n - 1) * (c.phi - c.psi);
    };

    compensated_sum acc;
    {
        const unit_corr& c = corr.for_unit(counts.cohort);
        const double n_tx = static_cast<double>(counts.n_treated);
        acc.add(c.sigma2 * bracket(counts.n_treated, c) / (n_tx * n_tx));
    }
    const double n_ctrl = static_cast<double>(counts.n_ctrl);
    for (const auto& [unit, n] : counts.controls) {
        if (n == 0) continue;
        const unit_corr& c = corr.for_unit(unit);
        acc.add(c.sigma2 * bracket(n, c) / (n_ctrl * n_ctrl));
    }

    const double t_total = static_cast<double>(counts.t_pre + counts.t_post);
    const double t_scale = t_total / (static_cast<double>(counts.t_pre) *
                                      static_cast<double>(counts.t_post));
    return t_scale * acc.total;
}

PairCovariance att_covariance(const OverlapCounts& counts, const CorrelationStructure& corr) {
    counts.validate();
    corr.validate();

    PairCovariance result;
    result.time_factor = time_factor(counts.t_pre, counts.t_post, counts.delta);

    const double denom = static_cast<double>(counts.n_ctrl_a) *
                         static_cast<double>(counts.n_ctrl_b);
    compensated_sum acc;
    for (const auto& row : counts.controls) {
        const unit_corr& c = corr.for_unit(row.unit);
        const double cross = static_cast<double>(row.n_a) * static_cast<double>(row.n_b) *
                             (c.phi - c.psi);
        const double shared = static_cast<double>(row.n_shared) *
                              (1.0 - c.rho - (c.phi - c.psi));
        const double contribution = result.time_factor * c.sigma2 * (cross + shared) / denom;
        result.per_state.push_back({row.unit, contribution});
        acc.add(contribution);
    }
    result.value = acc.total;
    return result;
}

double att_correlation(const OverlapCounts& counts, const CorrelationStructure& corr) {
    const double cov = att_covariance(counts, corr).value;
    const double var_a = att_variance(CohortCounts::side_a(counts), corr);
    const double var_b = att_variance(CohortCounts::side_b(counts), corr);
    return cov / std::sqrt(var_a * var_b);
}

Eigen::MatrixXd build_sigma(const CorrelationStructure& corr, std::int64_t n, std::int64_t t,
                            const std::string& unit) {
    corr.validate();
    if (n < 1 || t < 1) {
        throw validation_error("build_sigma: need at least one person and one occasion");
    }
    if (n * t > 10000) {
        throw validation_error("build_sigma: matrix order " + std::to_string(n * t) +
                               " exceeds the dense limit of 10000");
    }
    const unit_corr& c = corr.for_unit(unit);
    const auto order = static_cast<Eigen::Index>(n * t);
    Eigen::MatrixXd sigma(order, order);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t s = 0; s < t; ++s) {
            const Eigen::Index row = static_cast<Eigen::Index>(i * t + s);
            for (std::int64_t j = 0; j < n; ++j) {
                for (std::int64_t u = 0; u < t; ++u) {
                    const Eigen::Index col = static_cast<Eigen::Index>(j * t + u);
                    double value;
                    if (i == j) {
                        value = (s == u) ? 1.0 : c.rho;
                    } else {
                        value = (s == u) ? c.phi : c.psi;
                    }
                    sigma(row, col) = c.sigma2 * value;
                }
            }
        }
    }
    return sigma;
}

StructureReport validate_structure(const CorrelationStructure& corr, std::int64_t max_n,
                                   std::int64_t max_t) {
    StructureReport report;
    report.min_eigenvalue = std::numeric_limits<double>::infinity();

    std::vector<std::pair<std::string, unit_corr>> sets;
    sets.emplace_back("base", corr.base());
    for (const auto& [unit, c] : corr.overrides()) sets.emplace_back("unit \"" + unit + "\"", c);

    for (const auto& [label, c] : sets) {
        try {
            check_params(c, label);
        } catch (const validation_error& e) {
            report.ok = false;
            report.failures.emplace_back(e.what());
            continue;
        }
        CorrelationStructure single(c.rho, c.phi, c.psi, c.sigma2);
        const Eigen::MatrixXd sigma = build_sigma(single, max_n, max_t);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sigma,
                                                              Eigen::EigenvaluesOnly);
        const double min_eig = solver.eigenvalues().minCoeff();
        const double max_eig = solver.eigenvalues().maxCoeff();
        report.min_eigenvalue = std::min(report.min_eigenvalue, min_eig);
        if (min_eig < -1e-10 * std::max(1.0, max_eig)) {
            std::ostringstream msg;
            msg << "correlation structure (" << label << "): covariance at (n=" << max_n
                << ", t=" << max_t << ") is not positive semidefinite, min eigenvalue "
                << min_eig;
            report.ok = false;
            report.failures.push_back(msg.str());
        }
    }
    return report;
}

namespace {

/// Dense weight vector over one state's (person, occasion) grid.
Eigen::VectorXd design_weights(const CellDesign::state_block& block, std::int64_t n,
                               std::int64_t t_min, std::int64_t span) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n * span));
    for (const auto& g : block.groups) {
        for (std::int64_t p = g.person_first; p <= g.person_last; ++p) {
            if (p < 0 || p >= n) {
                throw validation_error("cell design references person " + std::to_string(p) +
                                       " outside unit \"" + block.unit + "\"");
            }
            for (std::int64_t o = g.occasion_first; o <= g.occasion_last; ++o) {
                w(static_cast<Eigen::Index>(p * span + (o - t_min))) += g.weight;
            }
        }
    }
    return w;
}

}  // namespace

double cov_exact_oracle(const CellDesign& a, const CellDesign& b,
                        const CorrelationStructure& corr) {
    corr.validate();

    std::vector<std::string> units;
    for (const auto& block : a.states) units.push_back(block.unit);
    for (const auto& block : b.states) units.push_back(block.unit);
    std::sort(units.begin(), units.end());
    units.erase(std::unique(units.begin(), units.end()), units.end());

    auto find_block = [](const CellDesign& d, const std::string& unit) {
        for (const auto& block : d.states) {
            if (block.unit == unit) return &block;
        }
        return static_cast<const CellDesign::state_block*>(nullptr);
    };

    compensated_sum acc;
    for (const auto& unit : units) {
        const auto* block_a = find_block(a, unit);
        const auto* block_b = find_block(b, unit);
        if (block_a == nullptr || block_b == nullptr) continue;  // independent across states

        std::int64_t n = std::max(block_a->n_persons, block_b->n_persons);
        std::int64_t t_min = std::numeric_limits<std::int64_t>::max();
        std::int64_t t_max = std::numeric_limits<std::int64_t>::min();
        for (const auto* block : {block_a, block_b}) {
            for (const auto& g : block->groups) {
                t_min = std::min(t_min, g.occasion_first);
                t_max = std::max(t_max, g.occasion_last);
            }
        }
        if (t_min > t_max) continue;  // no cells on one side
        const std::int64_t span = t_max - t_min + 1;
        if (n * span > 10000) {
            throw validation_error("cov_exact_oracle: state \"" + unit + "\" needs a " +
                                   std::to_string(n * span) + "-order dense matrix; the oracle "
                                   "is limited to 10000");
        }

        const Eigen::MatrixXd sigma = build_sigma(corr, n, span, unit);
        const Eigen::VectorXd wa = design_weights(*block_a, n, t_min, span);
        const Eigen::VectorXd wb = design_weights(*block_b, n, t_min, span);
        acc.add(wa.dot(sigma * wb));
    }
    return acc.total;
}

std::pair<CellDesign, CellDesign> make_pair_designs(const OverlapCounts& counts) {
    counts.validate();
    const std::int64_t t_pre = counts.t_pre;
    const std::int64_t t_post = counts.t_post;
    const std::int64_t delta = counts.delta;

    // Occasion anchoring: cohort a's study period starts at 0, cohort b's at
    // delta. Within each control state, persons are laid out shared first,
    // then a-only, then b-only.
    const std::int64_t a_pre_first = 0;
    const std::int64_t a_post_first = t_pre;
    const std::int64_t b_pre_first = delta;
    const std::int64_t b_post_first = delta + t_pre;

    auto did_groups = [&](std::int64_t person_first, std::int64_t person_last,
                          std::int64_t pre_first, std::int64_t post_first, double pre_weight,
                          double post_weight, std::vector<CellDesign::cell_group>& out) {
        if (person_first > person_last) return;
        out.push_back({person_first, person_last, pre_first, pre_first + t_pre - 1, pre_weight});
        out.push_back(
            {person_first, person_last, post_first, post_first + t_post - 1, post_weight});
    };

    CellDesign a;
    CellDesign b;

    {
        CellDesign::state_block tx;
        tx.unit = counts.cohort_a;
        tx.n_persons = counts.n_treated_a;
        const double n = static_cast<double>(counts.n_treated_a);
        did_groups(0, counts.n_treated_a - 1, a_pre_first, a_post_first,
                   -1.0 / (static_cast<double>(t_pre) * n),
                   +1.0 / (static_cast<double>(t_post) * n), tx.groups);
        a.states.push_back(std::move(tx));
    }
    {
        CellDesign::state_block tx;
        tx.unit = counts.cohort_b;
        tx.n_persons = counts.n_treated_b;
        const double n = static_cast<double>(counts.n_treated_b);
        did_groups(0, counts.n_treated_b - 1, b_pre_first, b_post_first,
                   -1.0 / (static_cast<double>(t_pre) * n),
                   +1.0 / (static_cast<double>(t_post) * n), tx.groups);
        b.states.push_back(std::move(tx));
    }

    const double ctrl_a = static_cast<double>(counts.n_ctrl_a);
    const double ctrl_b = static_cast<double>(counts.n_ctrl_b);
    for (const auto& row : counts.controls) {
        const std::int64_t n_total = row.n_a + row.n_b - row.n_shared;
        if (row.n_a > 0) {
            CellDesign::state_block block;
            block.unit = row.unit;
            block.n_persons = n_total;
            // Shared members occupy [0, n_shared), a-only follows: a's
            // members are the contiguous range [0, n_a).
            did_groups(0, row.n_a - 1, a_pre_first, a_post_first,
                       +1.0 / (static_cast<double>(t_pre) * ctrl_a),
                       -1.0 / (static_cast<double>(t_post) * ctrl_a), block.groups);
            a.states.push_back(std::move(block));
        }
        if (row.n_b > 0) {
            CellDesign::state_block block;
            block.unit = row.unit;
            block.n_persons = n_total;
            did_groups(0, row.n_shared - 1, b_pre_first, b_post_first,
                       +1.0 / (static_cast<double>(t_pre) * ctrl_b),
                       -1.0 / (static_cast<double>(t_post) * ctrl_b), block.groups);
            did_groups(row.n_a, n_total - 1, b_pre_first, b_post_first,
                       +1.0 / (static_cast<double>(t_pre) * ctrl_b),
                       -1.0 / (static_cast<double>(t_post) * ctrl_b), block.groups);
            b.states.push_back(std::move(block));
        }
    }
    return {std::move(a), std::move(b)};
}

double cov_component_sum(const OverlapCounts& counts, const CorrelationStructure& corr) {
    counts.validate();
    corr.validate();
    const std::int64_t t_pre = counts.t_pre;
    const std::int64_t t_post = counts.t_post;
    const WindowDurations w = window_durations(t_pre, t_post, counts.delta);

    // The four period-pair rectangles between the two DiD functionals,
    // described by: occasion-overlap length, both window lengths, the sign
    // of the weight product, and the factor that lifts the weights onto the
    // common denominator t_pre^2 t_post^2.
    struct rectangle {
        std::int64_t overlap;
        std::int64_t len_a;
        std::int64_t len_b;
        std::int64_t sign;
        std::int64_t lift;
    };
    const rectangle rects[4] = {
        {w.pre_pre, t_pre, t_pre, +1, t_post * t_post},    // a-pre with b-pre
        {0, t_pre, t_post, -1, t_pre * t_post},            // a-pre with b-post
        {w.post_pre, t_post, t_pre, -1, t_pre * t_post},   // a-post with b-pre
        {w.post_post, t_post, t_post, +1, t_pre * t_pre},  // a-post with b-post
    };

    const double denom = static_cast<double>(t_pre) * t_pre * t_post * t_post *
                         static_cast<double>(counts.n_ctrl_a) *
                         static_cast<double>(counts.n_ctrl_b);

    compensated_sum acc;
    for (const auto& row : counts.controls) {
        // Integer coefficients of (1, rho, phi, psi) for this state's
        // contribution: sums over person pairs and occasion pairs split by
        // same/different person and same/different occasion.
        int128 k_one = 0;
        int128 k_rho = 0;
        int128 k_phi = 0;
        int128 k_psi = 0;
        const std::int64_t m = row.n_shared;  // person pairs meeting in both sums
        const std::int64_t cross = row.n_a * row.n_b;
        for (const auto& r : rects) {
            const int128 scale = int128(r.sign) * r.lift;
            const std::int64_t occ_pairs = r.len_a * r.len_b;
            k_one += scale * m * r.overlap;
            k_rho += scale * (int128(m) * occ_pairs - int128(m) * r.overlap);
            k_phi += scale * (int128(r.overlap) * cross - int128(m) * r.overlap);
            k_psi += scale * (int128(cross) * occ_pairs - int128(m) * occ_pairs -
                              int128(r.overlap) * cross + int128(m) * r.overlap);
        }
        const unit_corr& c = corr.for_unit(row.unit);
        const double numerator = static_cast<double>(k_one) + static_cast<double>(k_rho) * c.rho +
                                 static_cast<double>(k_phi) * c.phi +
                                 static_cast<double>(k_psi) * c.psi;
        acc.add(c.sigma2 * numerator / denom);
    }
    return acc.total;
}

}  // namespace stackdid
