#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace sae {

inline double expit(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// Standard normal quantile function.
double normal_quantile(double p);

/// Standard normal cumulative distribution function.
double normal_cdf(double x);

/// Sample quantile using linear interpolation between order statistics
/// (type 7). `values` need not be sorted.
double quantile(std::span<const double> values, double prob);

/// Same as quantile() but assumes `sorted` is ascending.
double quantile_sorted(std::span<const double> sorted, double prob);

double mean(std::span<const double> values);

/// Unbiased sample variance (n - 1 denominator). Zero for n < 2.
double variance(std::span<const double> values);

/// Two-sided critical value for a symmetric interval, e.g. 1.959964 for 0.95.
inline double interval_z(double level) { return normal_quantile(0.5 + 0.5 * level); }

} // namespace sae
