#pragma once

#include <cmath>
#include <limits>

#include "stackdid/errors.hpp"

namespace stackdid {

/// Inverse of the standard normal CDF.
///
/// Rational approximation (Acklam) followed by one Halley refinement step
/// against std::erfc, which brings the result to within a few ulp across
/// the open interval. Pinned here rather than delegated to a library so the
/// same quantiles are produced on every platform.
[[nodiscard]] inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw validation_error("normal_quantile: p must lie strictly inside (0, 1)");

    // Reflect the upper half onto the lower so the erfc-based refinement
    // below always runs on the side where erfc is evaluated accurately; the
    // subtraction 1 - p is exact for p >= 0.5. This also makes the result
    // antisymmetric around one half by construction.
    if (p > 0.5) return -normal_quantile(1.0 - p);

    static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                    -2.759285104469687e+02, 1.383577518672690e+02,
                                    -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                    -1.556989798598866e+02, 6.680131188771972e+01,
                                    -1.328068155288572e+01};
    static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                    -2.400758277161838e+00, -2.549732539343734e+00,
                                    4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                    2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }

    // Halley step: e is the CDF error at x, u the Newton correction.
    constexpr double sqrt2 = 1.4142135623730951;
    constexpr double sqrt_2pi = 2.5066282746310002;
    double e = 0.5 * std::erfc(-x / sqrt2) - p;
    double u = e * sqrt_2pi * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

}  // namespace stackdid
