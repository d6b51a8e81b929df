#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stackdid/panel.hpp"

namespace stackdid {

class kv_document;

/// Correlation parameters for one unit's observations.
struct unit_corr {
    double rho = 0.0;     // same person, different occasions
    double phi = 0.0;     // different persons, same occasion
    double psi = 0.0;     // different persons, different occasions
    double sigma2 = 1.0;  // observation variance
};

/// Within-state correlation structure: a shared parameter set plus optional
/// per-unit overrides. Observations in different units are independent.
class CorrelationStructure {
public:
    CorrelationStructure() = default;
    CorrelationStructure(double rho, double phi, double psi, double sigma2 = 1.0)
        : base_{rho, phi, psi, sigma2} {}

    [[nodiscard]] const unit_corr& base() const { return base_; }
    void set_base(unit_corr c) { base_ = c; }
    void set_override(const std::string& unit, unit_corr c) { overrides_[unit] = c; }
    [[nodiscard]] const std::map<std::string, unit_corr>& overrides() const { return overrides_; }
    [[nodiscard]] bool homogeneous() const { return overrides_.empty(); }

    [[nodiscard]] const unit_corr& for_unit(const std::string& unit) const {
        auto it = overrides_.find(unit);
        return it == overrides_.end() ? base_ : it->second;
    }

    /// Checks rho in [0,1), rho >= phi >= psi, sigma2 > 0 for every
    /// parameter set. Throws validation_error.
    void validate() const;

    [[nodiscard]] kv_document to_document() const;
    [[nodiscard]] static CorrelationStructure from_document(const kv_document& doc);

private:
    unit_corr base_{};
    std::map<std::string, unit_corr> overrides_;
};

/// The scale factor multiplying every between-estimate covariance: a
/// function of the pre/post window lengths and the policy-time offset that
/// also determines the covariance's sign.
[[nodiscard]] double time_factor(std::int64_t t_pre, std::int64_t t_post, std::int64_t delta);

struct TimeFactorZeros {
    double inner;  // sign change: positive below, nonpositive in [inner, outer]
    double outer;  // support edge: exactly zero beyond t_pre + t_post
};

[[nodiscard]] TimeFactorZeros time_factor_zeros(std::int64_t t_pre, std::int64_t t_post);

/// How the earlier cohort's (a) and later cohort's (b) pre/post windows
/// decompose when the later study starts delta occasions after the earlier.
/// The *_alone segments fall outside the other cohort's study period.
struct WindowDurations {
    std::int64_t a_pre_alone = 0;   // min(t_pre, delta)
    std::int64_t pre_pre = 0;       // (t_pre - delta)+
    std::int64_t a_post_alone = 0;  // min((delta - t_pre)+, t_post)
    std::int64_t post_pre = 0;      // min(t_pre, t_post, delta, (t_pre + t_post - delta)+)
    std::int64_t post_post = 0;     // (t_post - delta)+
    std::int64_t b_pre_alone = 0;   // (delta - t_post)+
    std::int64_t b_post_alone = 0;  // min(t_post, delta)
};

[[nodiscard]] WindowDurations window_durations(std::int64_t t_pre, std::int64_t t_post,
                                               std::int64_t delta);

/// Residual multiplying the within-person correlation when the twelve
/// window covariance components are reduced to the closed form. Identically
/// zero for all nonnegative arguments; exposed so tests can verify the
/// reduction rather than trust it.
[[nodiscard]] double window_identity_residual(std::int64_t t_pre, std::int64_t t_post,
                                              std::int64_t delta);

/// One cohort's counts, enough to evaluate its estimate's variance.
struct CohortCounts {
    std::string cohort;
    std::int64_t n_treated = 0;
    std::vector<std::pair<std::string, std::int64_t>> controls;  // unit -> count
    std::int64_t n_ctrl = 0;                                     // sum of control counts
    std::int64_t t_pre = 0;
    std::int64_t t_post = 0;

    [[nodiscard]] static CohortCounts side_a(const OverlapCounts& counts);
    [[nodiscard]] static CohortCounts side_b(const OverlapCounts& counts);
};

/// Closed-form variance of one cohort's DiD estimate under the
/// block-exchangeable structure. Contributions are summed per state with
/// compensated accumulation; counts span several orders of magnitude in the
/// bundled study tables.
[[nodiscard]] double att_variance(const CohortCounts& counts, const CorrelationStructure& corr);

struct PairCovariance {
    double value = 0.0;
    double time_factor = 0.0;
    struct state_contribution {
        std::string unit;
        double value = 0.0;  // this control state's share of the covariance
    };
    std::vector<state_contribution> per_state;
};

/// Closed-form covariance between two cohorts' DiD estimates.
[[nodiscard]] PairCovariance att_covariance(const OverlapCounts& counts,
                                            const CorrelationStructure& corr);

/// Correlation: covariance over the square root of the variance product.
/// With a homogeneous sigma2 the result is scale-free.
[[nodiscard]] double att_correlation(const OverlapCounts& counts,
                                     const CorrelationStructure& corr);

/// Outcome of a positive-semidefiniteness check at a concrete size.
struct StructureReport {
    bool ok = true;
    double min_eigenvalue = 0.0;
    std::vector<std::string> failures;
};

/// Validates ordering and positive semidefiniteness of the implied
/// covariance at the stated (max_n, max_t) by dense eigendecomposition of a
/// constructed matrix. Returns failures instead of throwing; feasibility
/// depends on n and t, so the check is always size-specific.
[[nodiscard]] StructureReport validate_structure(const CorrelationStructure& corr,
                                                 std::int64_t max_n, std::int64_t max_t);

/// Dense covariance matrix for n individuals by t occasions in one unit,
/// ordered person-major: entry ((i,s),(j,t)) follows the exchangeable rule.
/// Guarded to n*t <= 10000.
[[nodiscard]] Eigen::MatrixXd build_sigma(const CorrelationStructure& corr, std::int64_t n,
                                          std::int64_t t, const std::string& unit = {});

/// A weighted set of person-time cells spread over states, representing one
/// estimate as a linear functional of the outcomes. Persons are indexed
/// within their state; occasions are global integers.
struct CellDesign {
    struct cell_group {
        std::int64_t person_first = 0;  // inclusive person index range
        std::int64_t person_last = -1;
        std::int64_t occasion_first = 0;  // inclusive occasion range
        std::int64_t occasion_last = -1;
        double weight = 0.0;  // applied to every cell in the rectangle
    };
    struct state_block {
        std::string unit;
        std::int64_t n_persons = 0;  // distinct persons this design touches in the unit
        std::vector<cell_group> groups;
    };
    std::vector<state_block> states;
};

/// Exact covariance between two weighted cell sums, computed by
/// materializing each state's dense covariance matrix and accumulating
/// a' Sigma b. Independent of every closed form; intended as a test oracle
/// for small designs.
[[nodiscard]] double cov_exact_oracle(const CellDesign& a, const CellDesign& b,
                                      const CorrelationStructure& corr);

/// Canonical concrete realization of a cohort pair's DiD functionals over a
/// shared-person layout (shared persons first within each control state),
/// using the standard occasion anchoring: the earlier cohort's study period
/// starts at occasion 0 and the later starts at delta.
[[nodiscard]] std::pair<CellDesign, CellDesign> make_pair_designs(const OverlapCounts& counts);

/// Covariance assembled from the window decomposition: each control state's
/// contribution is accumulated as exact integer multiples of (1, rho, phi,
/// psi) over the common time denominator before any floating-point
/// division. Algebraically identical to att_covariance; serves as a second
/// derivation path and is exactly zero when the study periods do not
/// overlap.
[[nodiscard]] double cov_component_sum(const OverlapCounts& counts,
                                       const CorrelationStructure& corr);

}  // namespace stackdid
