#pragma once

namespace sae {

/// Beta-binomial with mean p and intra-cluster correlation rho, i.e.
/// shape parameters a = p (1 - rho) / rho and b = (1 - p) (1 - rho) / rho.
/// rho -> 0 recovers the binomial.
double betabinomial_logpmf(long y, long n, double p, double rho);

/// Binomial log-pmf; the rho -> 0 limit of the above.
double binomial_logpmf(long y, long n, double p);

struct LogLikDerivatives {
    double value = 0.0;
    double gradient = 0.0; ///< d/d eta
    double hessian = 0.0;  ///< d2/d eta2
};

/// Log-pmf and its first two derivatives with respect to eta = logit(p).
LogLikDerivatives betabinomial_eta_derivatives(long y, long n, double eta, double rho);

} // namespace sae
