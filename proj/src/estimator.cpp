#include "stackdid/estimator.hpp"

#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "stackdid/errors.hpp"

namespace stackdid {

namespace {

[[noreturn]] void missing_cell(const CohortSpec& spec, const std::string& individual,
                               std::int64_t occasion) {
    std::ostringstream msg;
    msg << "cohort \"" << spec.treated_unit << "\": individual \"" << individual
        << "\" has no outcome at occasion " << occasion;
    throw validation_error(msg.str());
}

}  // namespace

AttEstimate att_plugin(const PanelDataset& panel, const Cohort& cohort) {
    const CohortSpec& spec = cohort.spec;
    const std::int64_t lo = spec.window_first();
    const std::int64_t hi = spec.window_last();
    const std::int64_t t_star = spec.policy_occasion;

    double pre_treated = 0.0;
    double post_treated = 0.0;
    double pre_control = 0.0;
    double post_control = 0.0;

    auto accumulate = [&](const std::vector<std::string>& members, double& pre_sum,
                          double& post_sum) {
        for (const auto& id : members) {
            const auto& rec = panel.individual(id);
            for (std::int64_t t = lo; t <= hi; ++t) {
                const auto y = rec.outcome_at(t);
                if (!y) missing_cell(spec, id, t);
                (t < t_star ? pre_sum : post_sum) += *y;
            }
        }
    };
    accumulate(cohort.treated_members, pre_treated, post_treated);
    for (const auto& [unit, members] : cohort.control_members) {
        accumulate(members, pre_control, post_control);
    }

    AttEstimate est;
    est.cohort_id = spec.treated_unit;
    est.n_treated = cohort.n_treated();
    est.n_control = cohort.n_control_total();
    est.policy_occasion = t_star;
    est.t_pre = spec.t_pre;
    est.t_post = spec.t_post;

    const double n_tx = static_cast<double>(est.n_treated);
    const double n_ctrl = static_cast<double>(est.n_control);
    est.pre_treated_mean = pre_treated / (n_tx * static_cast<double>(spec.t_pre));
    est.post_treated_mean = post_treated / (n_tx * static_cast<double>(spec.t_post));
    est.pre_control_mean = pre_control / (n_ctrl * static_cast<double>(spec.t_pre));
    est.post_control_mean = post_control / (n_ctrl * static_cast<double>(spec.t_post));
    est.value = (est.post_treated_mean - est.pre_treated_mean) -
                (est.post_control_mean - est.pre_control_mean);
    return est;
}

double att_twfe_oracle(const PanelDataset& panel, const Cohort& cohort) {
    const CohortSpec& spec = cohort.spec;
    const std::int64_t lo = spec.window_first();
    const std::int64_t hi = spec.window_last();
    const std::int64_t t_span = spec.t_pre + spec.t_post;

    // Units in play: the treated unit plus every control unit with members.
    std::vector<std::pair<std::string, const std::vector<std::string>*>> blocks;
    blocks.emplace_back(spec.treated_unit, &cohort.treated_members);
    for (const auto& [unit, members] : cohort.control_members) {
        blocks.emplace_back(unit, &members);
    }

    std::int64_t n_rows = 0;
    for (const auto& [unit, members] : blocks) {
        n_rows += static_cast<std::int64_t>(members->size()) * t_span;
    }

    // Design: one dummy per unit, one per occasion except the first, and the
    // treatment indicator. No global intercept, so the unit dummies span it.
    const std::int64_t n_units = static_cast<std::int64_t>(blocks.size());
    const std::int64_t n_cols = n_units + (t_span - 1) + 1;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n_rows, n_cols);
    Eigen::VectorXd y(n_rows);

    std::int64_t row = 0;
    for (std::int64_t u = 0; u < n_units; ++u) {
        const bool is_treated = blocks[u].first == spec.treated_unit;
        for (const auto& id : *blocks[u].second) {
            const auto& rec = panel.individual(id);
            for (std::int64_t t = lo; t <= hi; ++t) {
                const auto out = rec.outcome_at(t);
                if (!out) missing_cell(spec, id, t);
                y(row) = *out;
                X(row, u) = 1.0;
                const std::int64_t tau = t - lo;
                if (tau > 0) X(row, n_units + tau - 1) = 1.0;
                if (is_treated && t >= spec.policy_occasion) X(row, n_cols - 1) = 1.0;
                ++row;
            }
        }
    }

    Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
    return beta(n_cols - 1);
}

}  // namespace stackdid
