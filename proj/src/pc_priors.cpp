#include "sae/pc_priors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "sae/stats.hpp"

namespace sae {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();
constexpr std::size_t grid_points = 1000;

void check_contract(double U, double alpha, const char *what) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument(fmt::format("{}: alpha must lie in (0, 1)", what));
    }
    if (!std::isfinite(U)) {
        throw std::invalid_argument(fmt::format("{}: U must be finite", what));
    }
}

/// x - log(1 + x), accurate for small |x|.
double x_minus_log1p(double x) {
    if (std::abs(x) < 1e-4) {
        return x * x * (0.5 - x / 3.0 + x * x / 4.0);
    }
    return x - std::log1p(x);
}

double interpolate(const std::vector<double> &xs, const std::vector<double> &ys, double x) {
    if (x <= xs.front()) {
        return ys.front();
    }
    if (x >= xs.back()) {
        return ys.back();
    }
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const auto k = static_cast<std::size_t>(it - xs.begin());
    const double t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    return ys[k - 1] + t * (ys[k] - ys[k - 1]);
}

/// log of (1 - exp(-x)) for x > 0.
double log1mexp(double x) { return x < 0.693 ? std::log(-std::expm1(-x)) : std::log1p(-std::exp(-x)); }

} // namespace

double PCSigmaPrior::rate() const {
    check_contract(U, alpha, "sigma prior");
    if (!(U > 0.0)) {
        throw std::invalid_argument("sigma prior: U must be positive");
    }
    return -std::log(alpha) / U;
}

double PCSigmaPrior::log_density(double sigma) const {
    if (!(sigma > 0.0)) {
        return neg_inf;
    }
    const double lambda = rate();
    return std::log(lambda) - lambda * sigma;
}

double PCSigmaPrior::survival(double x) const { return x <= 0.0 ? 1.0 : std::exp(-rate() * x); }

double pc_sigma_logdensity(double sigma, const PCSigmaPrior &prior) { return prior.log_density(sigma); }

double solve_pc_rate(const TailSpec &tail, const DistanceFunction &distance) {
    check_contract(tail.U, tail.alpha, "PC rate");
    const double d_u = distance.distance(tail.U);
    const double d_max = std::isfinite(distance.far) ? distance.distance(distance.far) : std::numeric_limits<double>::infinity();
    if (!(d_u > 0.0) || !(d_u < d_max)) {
        throw std::invalid_argument("PC rate: U must lie strictly inside the parameter domain");
    }
    // Does the tail event contain the base model? Then it is {d < d_u}.
    const bool below = tail.direction == TailDirection::below;
    const bool contains_base = below == (distance.base < tail.U);
    const double target = contains_base ? tail.alpha : 1.0 - tail.alpha;

    if (!std::isfinite(d_max)) {
        // Untruncated exponential: P(d < d_u) = 1 - exp(-lambda d_u).
        return -std::log1p(-target) / d_u;
    }
    // F(lambda) = (1 - exp(-lambda d_u)) / (1 - exp(-lambda d_max)) rises
    // from d_u / d_max (lambda -> 0) to 1 (lambda -> infinity).
    const double f_min = d_u / d_max;
    if (!(target > f_min)) {
        const double lo = contains_base ? f_min : 0.0;
        const double hi = contains_base ? 1.0 : 1.0 - f_min;
        throw std::invalid_argument(
            fmt::format("PC rate: contract P = {} is unattainable; alpha must lie in ({:.6g}, {:.6g})", tail.alpha, lo, hi));
    }
    auto F = [&](double log_lambda) {
        const double lambda = std::exp(log_lambda);
        return std::exp(log1mexp(lambda * d_u) - log1mexp(lambda * d_max));
    };
    double lo = -30.0;
    double hi = 30.0;
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (F(mid) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return std::exp(0.5 * (lo + hi));
}

// ---------------------------------------------------------------------------

PCPhiPrior::PCPhiPrior(const StructureMatrix &scaled_icar, double U, double alpha) : U_{U}, alpha_{alpha} {
    check_contract(U, alpha, "phi prior");
    if (!(U > 0.0 && U < 1.0)) {
        throw std::invalid_argument("phi prior: U must lie in (0, 1)");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled_icar.Q, Eigen::EigenvaluesOnly);
    const auto &lambda = eig.eigenvalues();
    for (Eigen::Index k = static_cast<Eigen::Index>(scaled_icar.rank_deficiency); k < lambda.size(); ++k) {
        gamma_.push_back(1.0 / lambda(k));
    }
    d_max_ = distance(1.0);
    rate_ = solve_pc_rate(TailSpec{U, alpha, TailDirection::below},
                          DistanceFunction{[this](double phi) { return distance(phi); }, 0.0, 1.0});
    tabulate();
}

PCPhiPrior::PCPhiPrior(const RegionGraph &graph, double U, double alpha)
    : PCPhiPrior(icar_precision(graph, true), U, alpha) {}

double PCPhiPrior::kld(double phi) const {
    double sum = 0.0;
    for (double g : gamma_) {
        sum += x_minus_log1p(phi * (g - 1.0));
    }
    return 0.5 * sum;
}

double PCPhiPrior::kld_derivative(double phi) const {
    double sum = 0.0;
    for (double g : gamma_) {
        const double x = g - 1.0;
        sum += x * x * phi / (1.0 + phi * x);
    }
    return 0.5 * sum;
}

double PCPhiPrior::distance(double phi) const { return std::sqrt(2.0 * kld(phi)); }

double PCPhiPrior::distance_derivative(double phi) const {
    if (phi < 1e-6) {
        // d(phi) ~ phi * sqrt(sum (g-1)^2 / 2) near the base model.
        double s = 0.0;
        for (double g : gamma_) {
            s += (g - 1.0) * (g - 1.0);
        }
        return std::sqrt(0.5 * s);
    }
    return kld_derivative(phi) / distance(phi);
}

double PCPhiPrior::exact_log_density(double phi) const {
    if (!(phi >= 0.0 && phi <= 1.0)) {
        return neg_inf;
    }
    return std::log(rate_) - rate_ * distance(phi) + std::log(distance_derivative(phi)) - log1mexp(rate_ * d_max_);
}

void PCPhiPrior::tabulate() {
    grid_.resize(grid_points);
    grid_logd_.resize(grid_points);
    for (std::size_t k = 0; k < grid_points; ++k) {
        grid_[k] = static_cast<double>(k) / static_cast<double>(grid_points - 1);
        grid_logd_[k] = exact_log_density(grid_[k]);
    }
}

double PCPhiPrior::log_density(double phi) const {
    if (!(phi >= 0.0 && phi <= 1.0)) {
        return neg_inf;
    }
    return interpolate(grid_, grid_logd_, phi);
}

double PCPhiPrior::cdf(double x) const {
    if (x <= 0.0) {
        return 0.0;
    }
    if (x >= 1.0) {
        return 1.0;
    }
    return std::exp(log1mexp(rate_ * distance(x)) - log1mexp(rate_ * d_max_));
}

// ---------------------------------------------------------------------------

PCOmegaPrior::PCOmegaPrior(std::size_t T, double U, double alpha) : T_{T}, U_{U}, alpha_{alpha} {
    if (T < 2) {
        throw std::invalid_argument("omega prior needs at least two time points");
    }
    check_contract(U, alpha, "omega prior");
    if (!(U > -1.0 && U < 1.0)) {
        throw std::invalid_argument("omega prior: U must lie in (-1, 1)");
    }
    rate_ = solve_pc_rate(TailSpec{U, alpha, TailDirection::above},
                          DistanceFunction{[](double omega) { return distance(omega); }, 1.0, -1.0});
    const double u_max = std::sqrt(2.0);
    grid_u_.resize(grid_points);
    grid_logd_u_.resize(grid_points);
    const double log_norm = log1mexp(rate_ * u_max);
    for (std::size_t k = 0; k < grid_points; ++k) {
        const double u = u_max * static_cast<double>(k) / static_cast<double>(grid_points - 1);
        grid_u_[k] = u;
        grid_logd_u_[k] = std::log(rate_) - rate_ * u - log_norm;
    }
}

double PCOmegaPrior::exact_log_density(double omega) const {
    if (!(omega > -1.0 && omega < 1.0)) {
        return neg_inf;
    }
    const double u = distance(omega);
    // density of u times |du/domega| = 1 / (2u)
    return std::log(rate_) - rate_ * u - log1mexp(rate_ * std::sqrt(2.0)) - std::log(2.0 * u);
}

double PCOmegaPrior::log_density(double omega) const {
    if (!(omega > -1.0 && omega < 1.0)) {
        return neg_inf;
    }
    const double u = distance(omega);
    return interpolate(grid_u_, grid_logd_u_, u) - std::log(2.0 * u);
}

double PCOmegaPrior::cdf(double x) const {
    // P(omega < x) = P(u > sqrt(1 - x))
    if (x <= -1.0) {
        return 0.0;
    }
    if (x >= 1.0) {
        return 1.0;
    }
    const double u = distance(x);
    const double u_max = std::sqrt(2.0);
    return (std::exp(-rate_ * u) - std::exp(-rate_ * u_max)) / -std::expm1(-rate_ * u_max);
}

double PCSlopePrior::sd() const {
    check_contract(U, alpha, "slope prior");
    if (!(U > 0.0)) {
        throw std::invalid_argument("slope prior: U must be positive");
    }
    return U / normal_quantile(0.5 + 0.5 * alpha);
}

double OverdispersionPrior::rate() const {
    check_contract(U, alpha, "overdispersion prior");
    if (!(U > 0.0 && U < 1.0)) {
        throw std::invalid_argument("overdispersion prior: U must lie in (0, 1)");
    }
    return -std::log(alpha) / U;
}

double OverdispersionPrior::log_density(double rho) const {
    if (!(rho > 0.0 && rho < 1.0)) {
        return neg_inf;
    }
    const double lambda = rate();
    return std::log(lambda) - lambda * rho - log1mexp(lambda);
}

} // namespace sae
