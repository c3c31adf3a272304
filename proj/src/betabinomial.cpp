#include "sae/betabinomial.hpp"

#include <cmath>
#include <stdexcept>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "sae/stats.hpp"

namespace sae {

namespace {

// Below this count the rising-factorial sums are both faster and exact.
constexpr long short_count = 8;

double log_choose(long n, long y) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(y) + 1.0) -
           std::lgamma(static_cast<double>(n - y) + 1.0);
}

/// log Gamma(x + k) - log Gamma(x)
double log_rising(double x, long k) {
    if (k <= short_count) {
        double s = 0.0;
        for (long j = 0; j < k; ++j) {
            s += std::log(x + static_cast<double>(j));
        }
        return s;
    }
    return std::lgamma(x + static_cast<double>(k)) - std::lgamma(x);
}

/// digamma(x + k) - digamma(x)
double digamma_diff(double x, long k) {
    if (k <= short_count) {
        double s = 0.0;
        for (long j = 0; j < k; ++j) {
            s += 1.0 / (x + static_cast<double>(j));
        }
        return s;
    }
    return boost::math::digamma(x + static_cast<double>(k)) - boost::math::digamma(x);
}

/// trigamma(x + k) - trigamma(x)
double trigamma_diff(double x, long k) {
    if (k <= short_count) {
        double s = 0.0;
        for (long j = 0; j < k; ++j) {
            const double v = x + static_cast<double>(j);
            s -= 1.0 / (v * v);
        }
        return s;
    }
    return boost::math::trigamma(x + static_cast<double>(k)) - boost::math::trigamma(x);
}

void check_counts(long y, long n) {
    if (n <= 0 || y < 0 || y > n) {
        throw std::invalid_argument("beta-binomial counts need 0 <= y <= n and n > 0");
    }
}

} // namespace

double binomial_logpmf(long y, long n, double p) {
    check_counts(y, n);
    double out = log_choose(n, y);
    if (y > 0) {
        out += static_cast<double>(y) * std::log(p);
    }
    if (n - y > 0) {
        out += static_cast<double>(n - y) * std::log1p(-p);
    }
    return out;
}

double betabinomial_logpmf(long y, long n, double p, double rho) {
    check_counts(y, n);
    if (!(rho > 0.0 && rho < 1.0)) {
        throw std::invalid_argument("beta-binomial correlation must lie in (0, 1)");
    }
    const double s = (1.0 - rho) / rho;
    const double a = p * s;
    const double b = (1.0 - p) * s;
    return log_choose(n, y) + log_rising(a, y) + log_rising(b, n - y) - log_rising(s, n);
}

LogLikDerivatives betabinomial_eta_derivatives(long y, long n, double eta, double rho) {
    const double p = expit(eta);
    const double s = (1.0 - rho) / rho;
    const double a = p * s;
    const double b = (1.0 - p) * s;
    LogLikDerivatives out;
    out.value = log_choose(n, y) + log_rising(a, y) + log_rising(b, n - y) - log_rising(s, n);
    const double dp = s * (digamma_diff(a, y) - digamma_diff(b, n - y));
    const double d2p = s * s * (trigamma_diff(a, y) + trigamma_diff(b, n - y));
    const double v = p * (1.0 - p);
    out.gradient = dp * v;
    out.hessian = d2p * v * v + dp * v * (1.0 - 2.0 * p);
    return out;
}

} // namespace sae
