#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "stackdid/panel.hpp"

namespace stackdid {

class kv_document;
struct CorrelationStructure;

/// Moment estimates of the correlation parameters.
struct IccEstimate {
    double rho = 0.0;
    double phi = 0.0;
    double psi = 0.0;
    double sigma2 = 0.0;

    // Pair counts behind each component; zero marks a component that could
    // not be estimated from the data.
    std::int64_t n_pairs_rho = 0;
    std::int64_t n_pairs_phi = 0;
    std::int64_t n_pairs_psi = 0;
    std::int64_t n_observations = 0;

    bool clamped = false;     // set when clamping was requested and applied
    bool feasible = true;     // raw estimates satisfy rho >= phi >= psi and rho < 1

    struct resample_meta {
        std::int64_t n_resamples = 0;
        double fraction = 0.0;
        std::uint64_t seed = 0;
    };
    std::optional<resample_meta> resamples;

    [[nodiscard]] kv_document to_document() const;
    [[nodiscard]] CorrelationStructure to_structure() const;
};

struct IccOptions {
    /// Which occasions carry a treatment indicator to residualize on:
    /// cohorts supply (unit, policy occasion) pairs. Empty means no
    /// treatment term.
    std::vector<std::pair<std::string, std::int64_t>> treated_units;
    /// Clamp estimates into [0, 1) ordering instead of reporting raw moments.
    bool clamp = false;
};

/// Moment estimation of (rho, phi, psi, sigma2).
///
/// Outcomes are residualized on occasion fixed effects and the treatment
/// indicator, and cross-products are averaged over the residual pairs of
/// each kind (same person different occasion; different person same state
/// same occasion; different person same state different occasion). Because
/// the residualization absorbs part of every random component, and the
/// state-level loss scales with 1/states, the raw ratios are then passed
/// through the exact inverse of their expectation map, making the variance
/// components unbiased for any panel shape, balanced or not. sigma2 reports
/// the implied total observation variance. Components the panel cannot
/// identify (for example state-level correlations with a single unit, or
/// rho with one observation per person) are reported as zero, with the pair
/// counts showing which moments carried information. Runs in
/// O((persons + units * occasions) * cells); subsample very large panels
/// first.
[[nodiscard]] IccEstimate estimate_icc(const PanelDataset& panel, const IccOptions& options = {});

/// Draws n_resamples subsamples, each containing an equal number of
/// individuals per unit: floor(fraction * size of the smallest unit).
/// Sampling is without replacement within a resample and reproducible from
/// the seed. Throws validation_error when the quota falls below 2.
[[nodiscard]] std::vector<PanelDataset> subsample_balanced(const PanelDataset& panel,
                                                           double fraction,
                                                           std::int64_t n_resamples,
                                                           std::uint64_t seed);

}  // namespace stackdid
