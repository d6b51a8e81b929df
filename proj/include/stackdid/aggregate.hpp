#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stackdid/estimator.hpp"

namespace stackdid {

class kv_document;

/// Per-cohort estimates with their covariance. V is W's diagonal; the full
/// W carries the shared-control covariances.
struct EstimateSet {
    std::vector<std::string> labels;
    Eigen::VectorXd estimates;
    Eigen::MatrixXd W;

    /// Symmetry, dimension agreement, positive diagonal.
    void validate() const;

    [[nodiscard]] kv_document to_document() const;
    [[nodiscard]] static EstimateSet from_document(const kv_document& doc);
};

struct ConfidenceInterval {
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.95;
};

struct PooledResult {
    std::string method;  // "ivw" or "gls"
    double value = 0.0;
    double variance = 0.0;
    ConfidenceInterval ci;         // normal-theory interval at ci.level
    Eigen::VectorXd weights;       // sum to 1
    bool ill_conditioned = false;  // condition estimate above 1e12
    double condition = 0.0;
};

/// Inverse-variance weighting using only W's diagonal. The attached
/// interval uses the given level.
[[nodiscard]] PooledResult aggregate_ivw(const EstimateSet& set, double level = 0.95);

struct GlsOptions {
    /// Blend W toward its diagonal: (1-lambda) W + lambda diag(W).
    /// Zero (the default) uses W as given; near-singular W then fails.
    double shrinkage = 0.0;
    double level = 0.95;  // confidence level for the attached interval
};

/// Intercept-only generalized least squares: value (1'W^-1 1)^-1 1'W^-1 y,
/// variance (1'W^-1 1)^-1, solved through a symmetric factorization of W.
/// Throws validation_error with the smallest pivot when W is singular or
/// indefinite; flags the result when the condition estimate exceeds 1e12.
[[nodiscard]] PooledResult aggregate_gls(const EstimateSet& set, const GlsOptions& options = {});

/// Normal-theory interval value +/- z * sqrt(variance).
[[nodiscard]] ConfidenceInterval confidence_interval(double value, double variance, double level);

}  // namespace stackdid
