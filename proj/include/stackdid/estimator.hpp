#pragma once

#include <cstdint>
#include <string>

#include "stackdid/panel.hpp"

namespace stackdid {

/// One cohort's difference-in-differences estimate.
struct AttEstimate {
    std::string cohort_id;
    double value = 0.0;
    double pre_treated_mean = 0.0;
    double post_treated_mean = 0.0;
    double pre_control_mean = 0.0;
    double post_control_mean = 0.0;
    std::int64_t n_treated = 0;
    std::int64_t n_control = 0;
    std::int64_t policy_occasion = 0;
    std::int64_t t_pre = 0;
    std::int64_t t_post = 0;
};

/// Plug-in DiD estimate: (treated post mean - treated pre mean) minus
/// (control post mean - control pre mean), with control means pooled
/// equally over all control person-time. Requires a complete panel over the
/// study period; throws validation_error naming the first missing
/// (individual, occasion) cell otherwise.
[[nodiscard]] AttEstimate att_plugin(const PanelDataset& panel, const Cohort& cohort);

/// Regression oracle: OLS estimate of the treatment coefficient from a
/// two-way fixed effects model (unit intercepts, occasion intercepts,
/// treatment indicator) over the cohort's person-time. Exists to check the
/// plug-in estimator; the plug-in is the production path.
[[nodiscard]] double att_twfe_oracle(const PanelDataset& panel, const Cohort& cohort);

}  // namespace stackdid
