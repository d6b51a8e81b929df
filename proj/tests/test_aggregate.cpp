#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "stackdid/aggregate.hpp"
#include "stackdid/errors.hpp"
#include "stackdid/kv.hpp"
#include "stackdid/rng.hpp"

using namespace stackdid;

namespace {

EstimateSet make_set(const std::vector<double>& values, const Eigen::MatrixXd& W) {
    EstimateSet set;
    const auto n = static_cast<std::int64_t>(values.size());
    set.estimates.resize(n);
    for (std::int64_t i = 0; i < n; ++i) {
        set.labels.push_back("c" + std::to_string(i));
        set.estimates(i) = values[static_cast<std::size_t>(i)];
    }
    set.W = W;
    return set;
}

EstimateSet diagonal_set(const std::vector<double>& values,
                         const std::vector<double>& variances) {
    const auto n = static_cast<std::int64_t>(values.size());
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
    for (std::int64_t i = 0; i < n; ++i) W(i, i) = variances[static_cast<std::size_t>(i)];
    return make_set(values, W);
}

}  // namespace

TEST_CASE("inverse-variance weighting on worked examples") {
    SUBCASE("equal variances average evenly") {
        const PooledResult r = aggregate_ivw(diagonal_set({1.0, 3.0}, {0.5, 0.5}));
        CHECK(r.method == "ivw");
        CHECK(r.value == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(r.variance == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(r.weights(0) == doctest::Approx(0.5).epsilon(1e-14));
    }
    SUBCASE("weights follow reciprocal variances") {
        const PooledResult r = aggregate_ivw(diagonal_set({1.0, 1.0, 1.0}, {1.0, 2.0, 4.0}));
        CHECK(r.weights(0) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
        CHECK(r.weights(1) == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
        CHECK(r.weights(2) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
        CHECK(r.variance == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    }
    SUBCASE("a single estimate passes through") {
        const PooledResult r = aggregate_ivw(diagonal_set({0.7}, {0.09}));
        CHECK(r.value == 0.7);
        CHECK(r.variance == 0.09);
        CHECK(r.weights(0) == 1.0);
    }
    SUBCASE("off-diagonal entries are ignored by design") {
        Eigen::MatrixXd W(2, 2);
        W << 0.5, 0.4, 0.4, 0.5;
        const PooledResult r = aggregate_ivw(make_set({1.0, 3.0}, W));
        CHECK(r.value == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(r.variance == doctest::Approx(0.25).epsilon(1e-14));
    }
}

TEST_CASE("GLS on a worked two-estimate example") {
    Eigen::MatrixXd W(2, 2);
    W << 2.0, 0.5, 0.5, 1.0;
    const PooledResult r = aggregate_gls(make_set({1.0, 2.0}, W));
    CHECK(r.method == "gls");
    CHECK(r.value == doctest::Approx(1.75).epsilon(1e-12));
    CHECK(r.variance == doctest::Approx(0.875).epsilon(1e-12));
    CHECK(r.weights(0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(r.weights(1) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK_FALSE(r.ill_conditioned);
    CHECK(r.condition >= 1.0);
}

TEST_CASE("GLS with a diagonal matrix reduces to inverse-variance weighting") {
    rng r(404);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> values;
        std::vector<double> variances;
        for (int i = 0; i < 5; ++i) {
            values.push_back(2.0 * r.next_normal());
            variances.push_back(0.1 + r.next_uniform());
        }
        const EstimateSet set = diagonal_set(values, variances);
        const PooledResult ivw = aggregate_ivw(set);
        const PooledResult gls = aggregate_gls(set);
        CHECK(std::abs(ivw.value - gls.value) <= 1e-12 * std::max(1.0, std::abs(ivw.value)));
        CHECK(std::abs(ivw.variance - gls.variance) <= 1e-12);
        for (int i = 0; i < 5; ++i) {
            CHECK(std::abs(ivw.weights(i) - gls.weights(i)) <= 1e-12);
        }
    }
}

TEST_CASE("equicorrelated two-estimate variance follows (1 + kappa) / 2") {
    for (double kappa : {-0.4, 0.0, 0.3, 0.8}) {
        Eigen::MatrixXd W(2, 2);
        W << 1.0, kappa, kappa, 1.0;
        const PooledResult r = aggregate_gls(make_set({0.0, 1.0}, W));
        CHECK(r.value == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(r.variance == doctest::Approx((1.0 + kappa) / 2.0).epsilon(1e-12));
        CHECK(r.weights(0) == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("the efficiency crossover sits at 2 sqrt(w11 w22) / (w11 + w22)") {
    // Sweep the correlation on a 0.001 grid and locate where the corrected
    // variance crosses the naive diagonal-weights variance. The two agree
    // exactly at kappa = 0 and at the threshold; between them the corrected
    // variance is larger, beyond it smaller.
    const double w11 = 1.0;
    const double w22 = 4.0;
    const double threshold = 2.0 * std::sqrt(w11 * w22) / (w11 + w22);  // 0.8
    const double ivw_var = 1.0 / (1.0 / w11 + 1.0 / w22);

    double crossing = std::numeric_limits<double>::quiet_NaN();
    double prev_diff = std::numeric_limits<double>::quiet_NaN();
    double prev_kappa = 0.0;
    for (int step = -899; step <= 899; ++step) {
        const double kappa = static_cast<double>(step) / 1000.0;
        Eigen::MatrixXd W(2, 2);
        W << w11, kappa * std::sqrt(w11 * w22), kappa * std::sqrt(w11 * w22), w22;
        const double gls_var = aggregate_gls(make_set({0.0, 0.0}, W)).variance;
        const double diff = gls_var - ivw_var;

        if (kappa > 0.001 && kappa < threshold - 0.001) CHECK(diff > 0.0);
        if (kappa > threshold + 0.001) CHECK(diff < 0.0);
        if (kappa < -0.001) CHECK(diff < 0.0);
        if (std::abs(kappa) <= 1e-12) CHECK(std::abs(diff) <= 1e-12);

        if (step > 1 && prev_diff > 0.0 && diff <= 0.0) {
            crossing = 0.5 * (prev_kappa + kappa);
        }
        prev_diff = diff;
        prev_kappa = kappa;
    }
    REQUIRE(std::isfinite(crossing));
    CHECK(std::abs(crossing - threshold) <= 0.0015);
}

TEST_CASE("pooled values respect shifts and label permutations") {
    rng r(7171);
    Eigen::MatrixXd A(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) A(i, j) = r.next_normal();
    Eigen::MatrixXd W = A * A.transpose() + 4.0 * Eigen::MatrixXd::Identity(4, 4);
    std::vector<double> values{0.3, -0.2, 0.9, 0.1};
    const EstimateSet set = make_set(values, W);
    const PooledResult base = aggregate_gls(set);

    SUBCASE("adding a constant shifts the value and nothing else") {
        std::vector<double> shifted = values;
        for (double& v : shifted) v += 2.5;
        const PooledResult moved = aggregate_gls(make_set(shifted, W));
        CHECK(std::abs(moved.value - (base.value + 2.5)) <= 1e-12);
        CHECK(std::abs(moved.variance - base.variance) <= 1e-15);
    }

    SUBCASE("permuting the estimates permutes the weights") {
        const int perm[4] = {2, 0, 3, 1};
        std::vector<double> pv(4);
        Eigen::MatrixXd PW(4, 4);
        for (int i = 0; i < 4; ++i) {
            pv[static_cast<std::size_t>(i)] = values[static_cast<std::size_t>(perm[i])];
            for (int j = 0; j < 4; ++j) PW(i, j) = W(perm[i], perm[j]);
        }
        const PooledResult permuted = aggregate_gls(make_set(pv, PW));
        CHECK(std::abs(permuted.value - base.value) <= 1e-12);
        CHECK(std::abs(permuted.variance - base.variance) <= 1e-12);
        for (int i = 0; i < 4; ++i) {
            CHECK(std::abs(permuted.weights(i) - base.weights(perm[i])) <= 1e-12);
        }
    }
}

TEST_CASE("weights always sum to one") {
    rng r(99);
    Eigen::MatrixXd A(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) A(i, j) = r.next_normal();
    const Eigen::MatrixXd W = A * A.transpose() + 2.0 * Eigen::MatrixXd::Identity(3, 3);
    const EstimateSet set = make_set({1.0, 2.0, 3.0}, W);
    CHECK(std::abs(aggregate_ivw(set).weights.sum() - 1.0) <= 1e-12);
    CHECK(std::abs(aggregate_gls(set).weights.sum() - 1.0) <= 1e-12);
}

TEST_CASE("singular and indefinite weight matrices are rejected with the pivot") {
    Eigen::MatrixXd singular(2, 2);
    singular << 1.0, 1.0, 1.0, 1.0;
    try {
        (void)aggregate_gls(make_set({1.0, 2.0}, singular));
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("pivot") != std::string::npos);
    }

    Eigen::MatrixXd indefinite(2, 2);
    indefinite << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS((void)aggregate_gls(make_set({1.0, 2.0}, indefinite)), validation_error);
}

TEST_CASE("diagonal shrinkage rescues a singular matrix") {
    Eigen::MatrixXd singular(2, 2);
    singular << 1.0, 1.0, 1.0, 1.0;
    const EstimateSet set = make_set({1.0, 3.0}, singular);

    GlsOptions options;
    options.shrinkage = 0.5;  // blended matrix has off-diagonal 0.5
    const PooledResult r = aggregate_gls(set, options);
    CHECK(r.value == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.variance == doctest::Approx(0.75).epsilon(1e-12));

    GlsOptions full;
    full.shrinkage = 1.0;  // fully diagonal: must equal IVW
    const PooledResult shrunk = aggregate_gls(set, full);
    const PooledResult ivw = aggregate_ivw(set);
    CHECK(std::abs(shrunk.value - ivw.value) <= 1e-12);
    CHECK(std::abs(shrunk.variance - ivw.variance) <= 1e-12);

    GlsOptions bad;
    bad.shrinkage = 1.5;
    CHECK_THROWS_AS((void)aggregate_gls(set, bad), validation_error);
    bad.shrinkage = -0.1;
    CHECK_THROWS_AS((void)aggregate_gls(set, bad), validation_error);
}

TEST_CASE("an extreme variance spread flags ill conditioning without failing") {
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(2, 2);
    W(0, 0) = 1.0;
    W(1, 1) = 1e13;
    const PooledResult r = aggregate_gls(make_set({1.0, 2.0}, W));
    CHECK(r.ill_conditioned);
    CHECK(r.condition > 1e12);
    CHECK(std::isfinite(r.value));

    W(1, 1) = 10.0;
    CHECK_FALSE(aggregate_gls(make_set({1.0, 2.0}, W)).ill_conditioned);
}

TEST_CASE("confidence intervals use normal quantiles") {
    const ConfidenceInterval ci = confidence_interval(0.0, 1.0, 0.95);
    CHECK(std::abs(ci.lower + 1.959963984540054) <= 1e-8);
    CHECK(std::abs(ci.upper - 1.959963984540054) <= 1e-8);
    CHECK(ci.level == 0.95);

    // Reconstructing an interval reported as 0.04 with half-width 0.18.
    const double half = 0.18;
    const double z = 1.959963984540054;
    const ConfidenceInterval narrow =
        confidence_interval(0.04, (half / z) * (half / z), 0.95);
    CHECK(narrow.lower == doctest::Approx(-0.14).epsilon(1e-12));
    CHECK(narrow.upper == doctest::Approx(0.22).epsilon(1e-12));

    const ConfidenceInterval degenerate = confidence_interval(1.5, 0.0, 0.9);
    CHECK(degenerate.lower == 1.5);
    CHECK(degenerate.upper == 1.5);

    CHECK_THROWS_AS((void)confidence_interval(0.0, 1.0, 0.0), validation_error);
    CHECK_THROWS_AS((void)confidence_interval(0.0, 1.0, 1.0), validation_error);
    CHECK_THROWS_AS((void)confidence_interval(0.0, -1.0, 0.95), validation_error);

    const PooledResult r = aggregate_ivw(diagonal_set({0.0}, {1.0}), 0.99);
    CHECK(std::abs(r.ci.lower + 2.5758293035489004) <= 1e-8);
}

TEST_CASE("estimate sets round-trip through documents and validate shapes") {
    Eigen::MatrixXd W(2, 2);
    W << 0.15069767441860464, -0.016337209302325581, -0.016337209302325581,
        0.15069767441860464;
    EstimateSet set = make_set({0.04, 0.11}, W);
    set.labels = {"CT", "MN"};
    set.validate();

    const kv_document doc = set.to_document();
    const EstimateSet back = EstimateSet::from_document(doc);
    CHECK(back.labels == set.labels);
    CHECK(back.estimates(0) == set.estimates(0));
    CHECK(back.W(0, 1) == set.W(0, 1));
    CHECK(back.W(1, 1) == set.W(1, 1));

    SUBCASE("asymmetric matrices are rejected") {
        EstimateSet bad = set;
        bad.W(0, 1) = 0.5;
        CHECK_THROWS_AS(bad.validate(), validation_error);
    }
    SUBCASE("nonpositive diagonal is rejected") {
        EstimateSet bad = set;
        bad.W(0, 0) = 0.0;
        CHECK_THROWS_AS(bad.validate(), validation_error);
    }
    SUBCASE("dimension mismatches are rejected") {
        EstimateSet bad = set;
        bad.labels.push_back("extra");
        CHECK_THROWS_AS(bad.validate(), validation_error);
    }
    SUBCASE("duplicate labels are rejected") {
        EstimateSet bad = set;
        bad.labels = {"CT", "CT"};
        CHECK_THROWS_AS(bad.validate(), validation_error);
    }
    SUBCASE("empty sets are rejected") {
        EstimateSet empty;
        CHECK_THROWS_AS(empty.validate(), validation_error);
    }
    SUBCASE("documents with missing covariance cells fail to load") {
        kv_document partial;
        partial.set("document", "estimate_set");
        partial.set("n_estimates", std::int64_t{2});
        kv_table& est = partial.add_table("estimates", {"cohort", "value"});
        est.rows.push_back({"CT", "0.04"});
        est.rows.push_back({"MN", "0.11"});
        kv_table& cov = partial.add_table("covariance", {"row", "col", "value"});
        cov.rows.push_back({"CT", "CT", "0.15"});
        cov.rows.push_back({"CT", "MN", "-0.01"});
        cov.rows.push_back({"MN", "CT", "-0.01"});
        CHECK_THROWS_AS((void)EstimateSet::from_document(partial), io_error);

        cov.rows.push_back({"MN", "XX", "0.15"});
        CHECK_THROWS_AS((void)EstimateSet::from_document(partial), io_error);
    }
}

TEST_CASE("aggregation validates its input set") {
    Eigen::MatrixXd W(2, 2);
    W << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS((void)aggregate_ivw(make_set({1.0, 2.0}, W)), validation_error);
    CHECK_THROWS_AS((void)aggregate_gls(make_set({1.0, 2.0}, W)), validation_error);
}
