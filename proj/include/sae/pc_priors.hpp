#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "sae/gmrf.hpp"

namespace sae {

/// Exponential prior on a standard deviation with P(sigma > U) = alpha.
struct PCSigmaPrior {
    double U = 1.0;
    double alpha = 0.01;

    double rate() const;
    double log_density(double sigma) const;
    /// P(sigma > x)
    double survival(double x) const;
};

/// log(lambda) - lambda * sigma; -infinity for sigma <= 0.
double pc_sigma_logdensity(double sigma, const PCSigmaPrior &prior);

enum class TailDirection {
    below, ///< P(x < U) = alpha
    above, ///< P(x > U) = alpha
};

struct TailSpec {
    double U = 0.0;
    double alpha = 0.0;
    TailDirection direction = TailDirection::above;
};

/// Distance from the base model as a function of the parameter. `base` is
/// the parameter value with distance zero and `far` the opposite end of the
/// domain (possibly infinite). The distance must be monotone in between.
struct DistanceFunction {
    std::function<double(double)> distance;
    double base = 0.0;
    double far = std::numeric_limits<double>::infinity();
};

/// Rate of the exponential prior on the distance (truncated at the distance
/// of `far`) that satisfies the tail contract. Bisection on log(rate) to
/// 1e-8 relative. Throws std::invalid_argument with the attainable range of
/// alpha when the contract cannot be met.
double solve_pc_rate(const TailSpec &tail, const DistanceFunction &distance);

/// Mixing-parameter prior for BYM2 with P(phi < U) = alpha. The distance
/// comes from the Kullback-Leibler divergence between BYM2(phi) and the
/// unstructured model, using the scaled ICAR generalised inverse on the
/// constraint-orthogonal subspace.
class PCPhiPrior {
  public:
    PCPhiPrior(const StructureMatrix &scaled_icar, double U = 0.5, double alpha = 2.0 / 3.0);
    PCPhiPrior(const RegionGraph &graph, double U = 0.5, double alpha = 2.0 / 3.0);

    double U() const { return U_; }
    double alpha() const { return alpha_; }
    double rate() const { return rate_; }

    double distance(double phi) const;
    /// Closed-form density (the KLD is evaluated at phi).
    double exact_log_density(double phi) const;
    /// Interpolated on the 1000-point grid; -infinity outside [0, 1].
    double log_density(double phi) const;
    /// Prior mass below x under the exponential-on-distance construction.
    double cdf(double x) const;

    const std::vector<double> &grid() const { return grid_; }
    const std::vector<double> &grid_log_density() const { return grid_logd_; }

  private:
    double kld(double phi) const;
    double kld_derivative(double phi) const;
    double distance_derivative(double phi) const;
    void tabulate();

    std::vector<double> gamma_; // non-null eigenvalues of the generalised inverse
    double U_;
    double alpha_;
    double rate_ = 0.0;
    double d_max_ = 0.0;
    std::vector<double> grid_;
    std::vector<double> grid_logd_;
};

/// AR1 correlation prior with base model omega = 1 and P(omega > U) = alpha.
/// The distance is sqrt(1 - omega): the leading term of the KLD from the
/// random-walk limit, whose length dependence is a constant factor that is
/// absorbed by the rate.
class PCOmegaPrior {
  public:
    PCOmegaPrior(std::size_t T, double U = 0.7, double alpha = 0.9);

    double U() const { return U_; }
    double alpha() const { return alpha_; }
    double rate() const { return rate_; }
    std::size_t length() const { return T_; }

    static double distance(double omega) { return std::sqrt(1.0 - omega); }
    double exact_log_density(double omega) const;
    /// Interpolated from the grid tabulated uniformly in sqrt(1 - omega).
    double log_density(double omega) const;
    double cdf(double x) const;

    /// Grid nodes in u = sqrt(1 - omega) and the log density of u.
    const std::vector<double> &grid_u() const { return grid_u_; }
    const std::vector<double> &grid_log_density_u() const { return grid_logd_u_; }

  private:
    std::size_t T_;
    double U_;
    double alpha_;
    double rate_ = 0.0;
    std::vector<double> grid_u_;
    std::vector<double> grid_logd_u_;
};

/// Gaussian random-slope prior with P(|b| < U) = alpha.
struct PCSlopePrior {
    double U = 1.0;
    double alpha = 0.99;

    double sd() const;
};

/// Exponential prior on the beta-binomial intra-cluster correlation rho with
/// P(rho > U) = alpha, truncated to (0, 1).
struct OverdispersionPrior {
    double U = 0.1;
    double alpha = 0.01;

    double rate() const;
    double log_density(double rho) const;
};

} // namespace sae
