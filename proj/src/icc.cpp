#include "stackdid/icc.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "stackdid/blockcov.hpp"
#include "stackdid/errors.hpp"
#include "stackdid/kv.hpp"
#include "stackdid/rng.hpp"

namespace stackdid {

kv_document IccEstimate::to_document() const {
    kv_document doc;
    doc.set("document", "correlation_structure");
    doc.set("rho", rho);
    doc.set("phi", phi);
    doc.set("psi", psi);
    doc.set("sigma2", sigma2);
    doc.set("n_pairs_rho", n_pairs_rho);
    doc.set("n_pairs_phi", n_pairs_phi);
    doc.set("n_pairs_psi", n_pairs_psi);
    doc.set("n_observations", n_observations);
    doc.set("clamped", clamped ? "true" : "false");
    doc.set("feasible", feasible ? "true" : "false");
    if (resamples) {
        doc.set("n_resamples", resamples->n_resamples);
        doc.set("resample_fraction", resamples->fraction);
        doc.set("resample_seed", static_cast<std::int64_t>(resamples->seed));
    }
    return doc;
}

CorrelationStructure IccEstimate::to_structure() const {
    CorrelationStructure corr(rho, phi, psi, sigma2);
    corr.validate();
    return corr;
}

IccEstimate estimate_icc(const PanelDataset& panel, const IccOptions& options) {
    if (panel.n_observations() == 0) {
        throw validation_error("cannot estimate correlations from an empty panel");
    }

    std::map<std::string, std::int64_t> policy;
    for (const auto& [unit, occasion] : options.treated_units) {
        auto role_it = panel.unit_roles().find(unit);
        if (role_it == panel.unit_roles().end()) {
            throw validation_error("treatment indicator references unknown unit \"" + unit +
                                   "\"");
        }
        policy[unit] = occasion;
    }

    // One pass collects occasion-level sums of y and of the treatment
    // indicator; the residualization below is the two-step projection:
    // occasion fixed effects first, then the single treatment regressor.
    struct occ_stats {
        double sum_y = 0.0;
        std::int64_t sum_d = 0;
        std::int64_t count = 0;
    };
    std::map<std::int64_t, occ_stats> occasions;

    auto treated_at = [&policy](const std::string& unit, std::int64_t t) {
        auto it = policy.find(unit);
        return it != policy.end() && t >= it->second;
    };

    for (const auto& [id, rec] : panel.individuals()) {
        for (const auto& cell : rec.cells) {
            occ_stats& s = occasions[cell.occasion];
            s.sum_y += cell.outcome;
            s.sum_d += treated_at(rec.unit, cell.occasion) ? 1 : 0;
            ++s.count;
        }
    }

    // Slope of occasion-demeaned y on occasion-demeaned d. When d is
    // absorbed by the occasion effects the slope is indeterminate and the
    // term drops out.
    double dd = 0.0;
    double dy = 0.0;
    for (const auto& [id, rec] : panel.individuals()) {
        for (const auto& cell : rec.cells) {
            const occ_stats& s = occasions.at(cell.occasion);
            const double n = static_cast<double>(s.count);
            const double d_res = (treated_at(rec.unit, cell.occasion) ? 1.0 : 0.0) -
                                 static_cast<double>(s.sum_d) / n;
            const double y_res = cell.outcome - s.sum_y / n;
            dd += d_res * d_res;
            dy += d_res * y_res;
        }
    }
    const double beta = dd > 0.0 ? dy / dd : 0.0;

    auto residual = [&](const std::string& unit, std::int64_t t, double y) {
        const occ_stats& s = occasions.at(t);
        const double n = static_cast<double>(s.count);
        const double d_res = (treated_at(unit, t) ? 1.0 : 0.0) -
                             static_cast<double>(s.sum_d) / n;
        return (y - s.sum_y / n) - beta * d_res;
    };

    // Pair sums via sufficient statistics, never explicit pair loops:
    //   same person, different occasions:   sum_i (S_i^2 - Q_i)
    //   same state+occasion, diff persons:  sum_gt (C_gt^2 - U_gt)
    //   same state, diff persons+occasions: G^2 - sum S_i^2 - sum C_t^2 + Q
    // with matching count identities for the pair denominators.
    struct state_stats {
        double g = 0.0;        // state residual total
        double sum_s2 = 0.0;   // per-person totals squared
        double q = 0.0;        // squared residuals
        std::int64_t cells = 0;
        std::int64_t sum_m2 = 0;  // per-person cell counts squared
        std::unordered_map<std::int64_t, std::pair<double, std::int64_t>> occ;  // C_gt, m_gt
    };
    std::map<std::string, state_stats> states;

    double q_total = 0.0;
    double rho_cross = 0.0;
    std::int64_t rho_pairs = 0;
    std::int64_t n_cells = 0;

    for (const auto& [id, rec] : panel.individuals()) {
        state_stats& st = states[rec.unit];
        double s_i = 0.0;
        double q_i = 0.0;
        const auto m_i = static_cast<std::int64_t>(rec.cells.size());
        for (const auto& cell : rec.cells) {
            const double r = residual(rec.unit, cell.occasion, cell.outcome);
            s_i += r;
            q_i += r * r;
            auto& [c_gt, m_gt] = st.occ[cell.occasion];
            c_gt += r;
            ++m_gt;
        }
        rho_cross += s_i * s_i - q_i;
        rho_pairs += m_i * (m_i - 1);
        q_total += q_i;
        n_cells += m_i;

        st.g += s_i;
        st.sum_s2 += s_i * s_i;
        st.q += q_i;
        st.cells += m_i;
        st.sum_m2 += m_i * m_i;
    }

    double phi_cross = 0.0;
    std::int64_t phi_pairs = 0;
    double psi_cross = 0.0;
    std::int64_t psi_pairs = 0;
    for (const auto& [unit, st] : states) {
        double sum_c2 = 0.0;
        double sum_u = st.q;  // per-cell squares regrouped by occasion
        std::int64_t sum_mt2 = 0;
        for (const auto& [t, cm] : st.occ) {
            sum_c2 += cm.first * cm.first;
            sum_mt2 += cm.second * cm.second;
        }
        phi_cross += sum_c2 - sum_u;
        phi_pairs += sum_mt2 - st.cells;

        psi_cross += st.g * st.g - st.sum_s2 - sum_c2 + st.q;
        psi_pairs += st.cells * st.cells - st.sum_m2 - sum_mt2 + st.cells;
    }

    IccEstimate est;
    est.n_observations = n_cells;
    est.sigma2 = q_total / static_cast<double>(n_cells);
    est.n_pairs_rho = rho_pairs;
    est.n_pairs_phi = phi_pairs;
    est.n_pairs_psi = psi_pairs;

    if (est.sigma2 <= 0.0) {
        throw validation_error("residual variance is zero; correlations are undefined");
    }

    // The raw moment ratios are biased in small panels: the residualizing
    // projection M (occasion demeaning plus the treatment direction) removes
    // a share of every random component, and the share lost from the
    // state-level components scales with 1/states. Invert the exact
    // expectation map instead. Writing B, C, S, I for the same-person,
    // same-state-occasion, same-state, and identity pair patterns, the model
    // covariance is
    //     Sigma = u B + g C + z S + e I
    // with u the person variance, g + z the state-occasion variance, z its
    // persistent part, and e the noise, so each moment sum above satisfies
    //     E[m_k] = sum_j theta_j tr(A_k M G_j M) / n_k
    // with A_0 = I, A_1 = B - I, A_2 = C - I, A_3 = S - B - C + I and
    // G = (B, C, S, I). Every trace is the Frobenius norm of a projected
    // incidence matrix, accumulated column by column below in
    // O((persons + states * occasions) * cells); subsample very large panels
    // before estimating.
    const std::size_t n_persons = panel.n_individuals();
    const std::size_t n_states = states.size();
    const std::size_t n_occasions = occasions.size();
    const auto cells_z = static_cast<std::size_t>(n_cells);

    std::map<std::string, int> state_index;
    for (const auto& [unit, st] : states) {
        state_index.emplace(unit, static_cast<int>(state_index.size()));
    }
    std::map<std::int64_t, int> occ_index;
    std::vector<double> occ_count(n_occasions, 0.0);
    for (const auto& [t, s] : occasions) {
        occ_count[occ_index.size()] = static_cast<double>(s.count);
        occ_index.emplace(t, static_cast<int>(occ_index.size()));
    }

    const bool has_q = dd > 0.0;
    const double q_scale = has_q ? 1.0 / std::sqrt(dd) : 0.0;

    std::vector<int> cell_person(cells_z);
    std::vector<int> cell_state(cells_z);
    std::vector<int> cell_occ(cells_z);
    std::vector<double> cell_q(cells_z);
    std::vector<std::size_t> person_begin(n_persons + 1, 0);
    std::vector<double> so_count(n_states * n_occasions, 0.0);
    std::vector<double> q_sum_b(n_persons, 0.0);
    std::vector<double> q_sum_c(n_states * n_occasions, 0.0);
    std::vector<double> q_sum_s(n_states, 0.0);
    {
        std::size_t cell = 0;
        int person = 0;
        for (const auto& [id, rec] : panel.individuals()) {
            person_begin[static_cast<std::size_t>(person)] = cell;
            const int s = state_index.at(rec.unit);
            for (const auto& obs : rec.cells) {
                const int t = occ_index.at(obs.occasion);
                const occ_stats& os = occasions.at(obs.occasion);
                const double d_res =
                    (treated_at(rec.unit, obs.occasion) ? 1.0 : 0.0) -
                    static_cast<double>(os.sum_d) / static_cast<double>(os.count);
                const double q = has_q ? d_res * q_scale : 0.0;
                cell_person[cell] = person;
                cell_state[cell] = s;
                cell_occ[cell] = t;
                cell_q[cell] = q;
                q_sum_b[static_cast<std::size_t>(person)] += q;
                q_sum_c[static_cast<std::size_t>(s) * n_occasions +
                        static_cast<std::size_t>(t)] += q;
                q_sum_s[static_cast<std::size_t>(s)] += q;
                so_count[static_cast<std::size_t>(s) * n_occasions +
                         static_cast<std::size_t>(t)] += 1.0;
                ++cell;
            }
            ++person;
        }
        person_begin[n_persons] = cell;
    }

    // Symmetric trace table over the pattern order {B, C, S, I}.
    double tt[4][4] = {};
    tt[3][3] = static_cast<double>(n_cells) - static_cast<double>(n_occasions) -
               (has_q ? 1.0 : 0.0);

    std::vector<double> occ_mean(n_occasions, 0.0);
    std::vector<double> acc_b(n_persons, 0.0);
    std::vector<double> acc_c(n_states * n_occasions, 0.0);
    std::vector<double> acc_s(n_states, 0.0);

    // One projected column: x = M w for the indicator w of one level, with
    // w's per-occasion means supplied through occ_mean and q'w through qw.
    // The level sums of x feed the Frobenius accumulators.
    const auto sweep = [&](const auto& in_level, double qw, bool want_c, bool want_s,
                           double& wx) {
        std::fill(acc_b.begin(), acc_b.end(), 0.0);
        if (want_c) std::fill(acc_c.begin(), acc_c.end(), 0.0);
        if (want_s) std::fill(acc_s.begin(), acc_s.end(), 0.0);
        wx = 0.0;
        for (std::size_t cell = 0; cell < cells_z; ++cell) {
            const bool inside = in_level(cell);
            const double x = (inside ? 1.0 : 0.0) -
                             occ_mean[static_cast<std::size_t>(cell_occ[cell])] -
                             qw * cell_q[cell];
            if (inside) wx += x;
            acc_b[static_cast<std::size_t>(cell_person[cell])] += x;
            if (want_c) {
                acc_c[static_cast<std::size_t>(cell_state[cell]) * n_occasions +
                      static_cast<std::size_t>(cell_occ[cell])] += x;
            }
            if (want_s) acc_s[static_cast<std::size_t>(cell_state[cell])] += x;
        }
    };
    const auto sum_sq = [](const std::vector<double>& v) {
        double total = 0.0;
        for (const double a : v) total += a * a;
        return total;
    };

    for (std::size_t s = 0; s < n_states; ++s) {
        for (std::size_t t = 0; t < n_occasions; ++t) {
            occ_mean[t] = so_count[s * n_occasions + t] / occ_count[t];
        }
        double wx = 0.0;
        sweep([&](std::size_t cell) { return cell_state[cell] == static_cast<int>(s); },
              q_sum_s[s], true, true, wx);
        tt[2][3] += wx;
        tt[0][2] += sum_sq(acc_b);
        tt[1][2] += sum_sq(acc_c);
        tt[2][2] += sum_sq(acc_s);
        std::fill(occ_mean.begin(), occ_mean.end(), 0.0);
    }

    for (std::size_t s = 0; s < n_states; ++s) {
        for (std::size_t t = 0; t < n_occasions; ++t) {
            if (so_count[s * n_occasions + t] == 0.0) continue;
            occ_mean[t] = so_count[s * n_occasions + t] / occ_count[t];
            double wx = 0.0;
            sweep(
                [&](std::size_t cell) {
                    return cell_state[cell] == static_cast<int>(s) &&
                           cell_occ[cell] == static_cast<int>(t);
                },
                q_sum_c[s * n_occasions + t], true, false, wx);
            tt[1][3] += wx;
            tt[0][1] += sum_sq(acc_b);
            tt[1][1] += sum_sq(acc_c);
            occ_mean[t] = 0.0;
        }
    }

    for (std::size_t person = 0; person < n_persons; ++person) {
        for (std::size_t cell = person_begin[person]; cell < person_begin[person + 1];
             ++cell) {
            const auto t = static_cast<std::size_t>(cell_occ[cell]);
            occ_mean[t] = 1.0 / occ_count[t];
        }
        double wx = 0.0;
        sweep(
            [&](std::size_t cell) {
                return cell_person[cell] == static_cast<int>(person);
            },
            q_sum_b[person], false, false, wx);
        tt[0][3] += wx;
        tt[0][0] += sum_sq(acc_b);
        for (std::size_t cell = person_begin[person]; cell < person_begin[person + 1];
             ++cell) {
            occ_mean[static_cast<std::size_t>(cell_occ[cell])] = 0.0;
        }
    }

    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < i; ++j) tt[i][j] = tt[j][i];
    }

    // Components whose own moment carries no pairs are exactly collinear
    // with the rest (B or C collapses to I, or S to B + C - I), and a single
    // state leaves the state patterns inside the span of the occasion
    // effects; both cases drop the component and report it as zero.
    const double structure_tol = 1e-9 * static_cast<double>(n_cells);
    const bool keep_u = rho_pairs > 0;
    const bool keep_g = phi_pairs > 0 && tt[1][3] > structure_tol;
    const bool keep_z = psi_pairs > 0 && tt[2][3] > structure_tol;

    std::vector<int> rows = {0};
    if (rho_pairs > 0) rows.push_back(1);
    if (phi_pairs > 0) rows.push_back(2);
    if (psi_pairs > 0) rows.push_back(3);
    std::vector<int> cols;
    if (keep_u) cols.push_back(0);
    if (keep_g) cols.push_back(1);
    if (keep_z) cols.push_back(2);
    cols.push_back(3);

    const double row_coef[4][4] = {{0.0, 0.0, 0.0, 1.0},
                                   {1.0, 0.0, 0.0, -1.0},
                                   {0.0, 1.0, 0.0, -1.0},
                                   {-1.0, -1.0, 1.0, 1.0}};
    const double row_count[4] = {static_cast<double>(n_cells),
                                 static_cast<double>(rho_pairs),
                                 static_cast<double>(phi_pairs),
                                 static_cast<double>(psi_pairs)};
    const double moment[4] = {
        q_total / static_cast<double>(n_cells),
        rho_pairs > 0 ? rho_cross / static_cast<double>(rho_pairs) : 0.0,
        phi_pairs > 0 ? phi_cross / static_cast<double>(phi_pairs) : 0.0,
        psi_pairs > 0 ? psi_cross / static_cast<double>(psi_pairs) : 0.0};

    Eigen::MatrixXd design(static_cast<Eigen::Index>(rows.size()),
                           static_cast<Eigen::Index>(cols.size()));
    Eigen::VectorXd target(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        target(static_cast<Eigen::Index>(r)) = moment[rows[r]];
        for (std::size_t c = 0; c < cols.size(); ++c) {
            double value = 0.0;
            for (int p = 0; p < 4; ++p) value += row_coef[rows[r]][p] * tt[p][cols[c]];
            design(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                value / row_count[rows[r]];
        }
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < static_cast<Eigen::Index>(cols.size())) {
        throw validation_error("panel structure cannot separate the correlation components");
    }
    const Eigen::VectorXd solved = qr.solve(target);

    double theta[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t c = 0; c < cols.size(); ++c) {
        theta[cols[c]] = solved(static_cast<Eigen::Index>(c));
    }
    const double total = theta[0] + theta[1] + theta[2] + theta[3];
    if (!(total > 0.0)) {
        throw validation_error("estimated total variance is not positive; correlations are undefined");
    }
    est.sigma2 = total;
    est.rho = (theta[0] + theta[2]) / total;
    est.phi = (theta[1] + theta[2]) / total;
    est.psi = theta[2] / total;

    est.feasible = est.rho < 1.0 && est.rho >= est.phi && est.phi >= est.psi && est.psi >= 0.0;

    if (options.clamp && !est.feasible) {
        constexpr double upper = 1.0 - 1e-12;
        est.rho = std::clamp(est.rho, 0.0, upper);
        est.phi = std::clamp(est.phi, 0.0, est.rho);
        est.psi = std::clamp(est.psi, 0.0, est.phi);
        est.clamped = true;
    }
    return est;
}

std::vector<PanelDataset> subsample_balanced(const PanelDataset& panel, double fraction,
                                             std::int64_t n_resamples, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw validation_error("resample fraction must lie in (0, 1]");
    }
    if (n_resamples < 1) throw validation_error("need at least one resample");
    if (panel.n_individuals() == 0) throw validation_error("cannot resample an empty panel");

    std::map<std::string, std::vector<std::string>> rosters;
    for (const auto& [unit, role] : panel.unit_roles()) {
        auto members = panel.members_of(unit);
        if (!members.empty()) rosters[unit] = std::move(members);
    }
    std::size_t min_size = std::numeric_limits<std::size_t>::max();
    for (const auto& [unit, members] : rosters) min_size = std::min(min_size, members.size());

    // floor of fraction*min_size, tolerant of decimal fractions that land
    // a few ulp under an integer (0.3 * 10 in binary is 2.999...).
    const auto quota = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(min_size) + 1e-9));
    if (quota < 2) {
        throw validation_error("resample fraction " + format_double(fraction) +
                               " yields fewer than 2 individuals per unit (smallest unit has " +
                               std::to_string(min_size) + ")");
    }

    const rng root(seed);
    std::vector<PanelDataset> out;
    out.reserve(static_cast<std::size_t>(n_resamples));
    for (std::int64_t r = 0; r < n_resamples; ++r) {
        rng stream = root.stream(static_cast<std::uint64_t>(r));
        PanelDataset sub;
        for (const auto& [unit, role] : panel.unit_roles()) sub.add_unit(unit, role);
        for (const auto& [unit, members] : rosters) {
            // Partial Fisher-Yates: the first `quota` slots end up holding a
            // uniform without-replacement draw.
            std::vector<std::string> pool = members;
            for (std::size_t k = 0; k < quota; ++k) {
                const std::size_t j = k + static_cast<std::size_t>(stream.next_below(
                                              static_cast<std::uint64_t>(pool.size() - k)));
                std::swap(pool[k], pool[j]);
            }
            pool.resize(quota);
            std::sort(pool.begin(), pool.end());
            for (const auto& id : pool) {
                for (const auto& cell : panel.individual(id).cells) {
                    sub.add_observation(unit, id, cell.occasion, cell.outcome);
                }
            }
        }
        sub.finalize();
        out.push_back(std::move(sub));
    }
    return out;
}

}  // namespace stackdid
