#include "stackdid/aggregate.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "stackdid/errors.hpp"
#include "stackdid/kv.hpp"
#include "stackdid/quantile.hpp"

namespace stackdid {

void EstimateSet::validate() const {
    const auto n = static_cast<Eigen::Index>(labels.size());
    if (n < 1) throw validation_error("estimate set is empty");
    if (estimates.size() != n || W.rows() != n || W.cols() != n) {
        std::ostringstream msg;
        msg << "estimate set dimensions disagree: " << labels.size() << " labels, "
            << estimates.size() << " estimates, " << W.rows() << "x" << W.cols()
            << " covariance";
        throw validation_error(msg.str());
    }
    std::set<std::string> seen;
    for (const auto& label : labels) {
        if (label.empty()) throw validation_error("estimate labels may not be empty");
        if (!seen.insert(label).second) {
            throw validation_error("duplicate estimate label \"" + label + "\"");
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(W(i, i) > 0.0)) {
            throw validation_error("variance of \"" + labels[static_cast<std::size_t>(i)] +
                                   "\" must be positive");
        }
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double scale = std::max({1.0, std::abs(W(i, j)), std::abs(W(j, i))});
            if (std::abs(W(i, j) - W(j, i)) > 1e-12 * scale) {
                std::ostringstream msg;
                msg << "covariance is not symmetric at (" << labels[static_cast<std::size_t>(i)]
                    << ", " << labels[static_cast<std::size_t>(j)] << ")";
                throw validation_error(msg.str());
            }
        }
    }
}

kv_document EstimateSet::to_document() const {
    validate();
    kv_document doc;
    doc.set("document", "estimate_set");
    doc.set("n_estimates", static_cast<std::int64_t>(labels.size()));

    kv_table& est = doc.add_table("estimates", {"cohort", "value"});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        est.rows.push_back({labels[i], format_double(estimates(static_cast<Eigen::Index>(i)))});
    }

    kv_table& cov = doc.add_table("covariance", {"row", "col", "value"});
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
        for (Eigen::Index j = 0; j < W.cols(); ++j) {
            cov.rows.push_back({labels[static_cast<std::size_t>(i)],
                                labels[static_cast<std::size_t>(j)],
                                format_double(W(i, j))});
        }
    }
    return doc;
}

EstimateSet EstimateSet::from_document(const kv_document& doc) {
    EstimateSet set;
    const kv_table& est = doc.table("estimates");
    const auto n = static_cast<Eigen::Index>(est.rows.size());
    if (n < 1) throw io_error("estimate_set document has no estimate rows");
    set.estimates.resize(n);
    for (std::size_t i = 0; i < est.rows.size(); ++i) {
        set.labels.push_back(est.cell(i, "cohort"));
        set.estimates(static_cast<Eigen::Index>(i)) = est.cell_double(i, "value");
    }

    std::map<std::string, Eigen::Index> index;
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
        if (!index.emplace(set.labels[i], static_cast<Eigen::Index>(i)).second) {
            throw io_error("estimate_set document repeats cohort \"" + set.labels[i] + "\"");
        }
    }

    const kv_table& cov = doc.table("covariance");
    if (cov.rows.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
        std::ostringstream msg;
        msg << "covariance table has " << cov.rows.size() << " cells, expected " << n * n;
        throw io_error(msg.str());
    }
    set.W = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t r = 0; r < cov.rows.size(); ++r) {
        const auto row_it = index.find(cov.cell(r, "row"));
        const auto col_it = index.find(cov.cell(r, "col"));
        if (row_it == index.end() || col_it == index.end()) {
            throw io_error("covariance table references unknown cohort \"" +
                           (row_it == index.end() ? cov.cell(r, "row") : cov.cell(r, "col")) +
                           "\"");
        }
        set.W(row_it->second, col_it->second) = cov.cell_double(r, "value");
    }
    if (set.W.hasNaN()) throw io_error("covariance table leaves cells unspecified");
    set.validate();
    return set;
}

PooledResult aggregate_ivw(const EstimateSet& set, double level) {
    set.validate();
    const Eigen::Index n = set.estimates.size();

    PooledResult result;
    result.method = "ivw";
    result.weights.resize(n);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        result.weights(i) = 1.0 / set.W(i, i);
        total += result.weights(i);
    }
    result.weights /= total;
    result.value = result.weights.dot(set.estimates);
    result.variance = 1.0 / total;
    result.ci = confidence_interval(result.value, result.variance, level);
    return result;
}

PooledResult aggregate_gls(const EstimateSet& set, const GlsOptions& options) {
    set.validate();
    if (!(options.shrinkage >= 0.0 && options.shrinkage <= 1.0)) {
        throw validation_error("shrinkage must lie in [0, 1]");
    }
    const Eigen::Index n = set.estimates.size();

    Eigen::MatrixXd W = set.W;
    if (options.shrinkage > 0.0) {
        const Eigen::VectorXd diag = set.W.diagonal();
        W = (1.0 - options.shrinkage) * set.W;
        W.diagonal() = diag;
    }

    Eigen::LDLT<Eigen::MatrixXd> ldlt(W);
    const double min_pivot = ldlt.vectorD().minCoeff();
    if (ldlt.info() != Eigen::Success || !(min_pivot > 0.0)) {
        std::ostringstream msg;
        msg << "covariance matrix is singular or indefinite (smallest pivot " << min_pivot
            << ")";
        throw validation_error(msg.str());
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen(W, Eigen::EigenvaluesOnly);
    const double eig_min = eigen.eigenvalues().minCoeff();
    const double eig_max = eigen.eigenvalues().maxCoeff();

    const Eigen::VectorXd u = ldlt.solve(Eigen::VectorXd::Ones(n));
    const double normal = u.sum();  // 1' W^-1 1
    if (!(normal > 0.0)) {
        throw validation_error("covariance matrix yields a nonpositive precision total");
    }

    PooledResult result;
    result.method = "gls";
    result.variance = 1.0 / normal;
    result.weights = u / normal;
    result.value = result.weights.dot(set.estimates);
    result.condition = eig_min > 0.0 ? eig_max / eig_min
                                     : std::numeric_limits<double>::infinity();
    result.ill_conditioned = result.condition > 1e12;
    result.ci = confidence_interval(result.value, result.variance, options.level);
    return result;
}

ConfidenceInterval confidence_interval(double value, double variance, double level) {
    if (!(level > 0.0 && level < 1.0)) {
        throw validation_error("confidence level must lie in (0, 1)");
    }
    if (!(variance >= 0.0)) {
        throw validation_error("variance must be nonnegative");
    }
    const double z = normal_quantile(0.5 * (1.0 + level));
    const double half = z * std::sqrt(variance);
    return {value - half, value + half, level};
}

}  // namespace stackdid
