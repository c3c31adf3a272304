#include <doctest.h>

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "fixtures.hpp"
#include "sae/pc_priors.hpp"

using namespace sae;

namespace {

template <class F> double integrate(F f, double a, double b) {
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-12);
}

} // namespace

TEST_CASE("sigma prior") {
    const PCSigmaPrior p{1.0, 0.01};
    CHECK(p.rate() == doctest::Approx(4.60517).epsilon(1e-6));
    CHECK(p.survival(1.0) == doctest::Approx(0.01));
    CHECK(PCSigmaPrior{2.0, 0.01}.rate() == doctest::Approx(p.rate() / 2.0));
    CHECK(pc_sigma_logdensity(0.3, p) == doctest::Approx(std::log(p.rate()) - p.rate() * 0.3));
    CHECK(std::isinf(pc_sigma_logdensity(-1.0, p)));
    const double tail = integrate([&](double s) { return std::exp(p.log_density(s)); }, 1.0, 60.0);
    CHECK(tail == doctest::Approx(0.01).epsilon(1e-8));
    CHECK_THROWS_AS((PCSigmaPrior{1.0, 1.5}.rate()), std::invalid_argument);
}

TEST_CASE("solve_pc_rate") {
    const DistanceFunction identity{[](double x) { return x; }, 0.0};
    CHECK(solve_pc_rate({1.0, 0.01, TailDirection::above}, identity) == doctest::Approx(-std::log(0.01)));
    CHECK(solve_pc_rate({3.0, 0.2, TailDirection::above}, identity) == doctest::Approx(-std::log(0.2) / 3.0));
    // Truncated: attainable range reported in the message.
    const DistanceFunction bounded{[](double x) { return x; }, 0.0, 1.0};
    CHECK_THROWS_AS(solve_pc_rate({0.5, 0.3, TailDirection::below}, bounded), std::invalid_argument);
    const double lambda = solve_pc_rate({0.5, 0.8, TailDirection::below}, bounded);
    CHECK(-std::expm1(-lambda * 0.5) / -std::expm1(-lambda) == doctest::Approx(0.8).epsilon(1e-8));
}

TEST_CASE("phi prior on the four-region graph") {
    const PCPhiPrior p(fixtures::four_regions());
    CHECK(p.distance(0.0) == 0.0);
    double prev = 0.0;
    for (int k = 1; k <= 200; ++k) {
        const double d = p.distance(k / 200.0);
        CHECK(d > prev);
        prev = d;
    }
    CHECK(p.cdf(0.5) == doctest::Approx(2.0 / 3.0).epsilon(1e-8));
    const double below = integrate([&](double x) { return std::exp(p.exact_log_density(x)); }, 0.0, 0.5);
    const double total = integrate([&](double x) { return std::exp(p.exact_log_density(x)); }, 0.0, 1.0);
    CHECK(below == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    // The interpolated grid density integrates to one as well.
    const auto &g = p.grid();
    const auto &ld = p.grid_log_density();
    double trap = 0.0;
    for (std::size_t k = 1; k < g.size(); ++k) {
        trap += 0.5 * (std::exp(ld[k]) + std::exp(ld[k - 1])) * (g[k] - g[k - 1]);
    }
    CHECK(trap == doctest::Approx(1.0).epsilon(1e-3));
    // The rate matches a re-solve against the distance function.
    const double lambda = solve_pc_rate({0.5, 2.0 / 3.0, TailDirection::below},
                                        DistanceFunction{[&](double x) { return p.distance(x); }, 0.0, 1.0});
    CHECK(lambda == doctest::Approx(p.rate()).epsilon(1e-7));
    CHECK(std::isinf(p.log_density(1.2)));
}

TEST_CASE("omega prior") {
    const PCOmegaPrior p(6);
    CHECK(1.0 - p.cdf(0.7) == doctest::Approx(0.9).epsilon(1e-8));
    boost::math::quadrature::tanh_sinh<double> ts;
    const double above = ts.integrate([&](double w) { return std::exp(p.exact_log_density(w)); }, 0.7, 1.0);
    const double total = ts.integrate([&](double w) { return std::exp(p.exact_log_density(w)); }, -1.0, 1.0);
    CHECK(above == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    const auto &u = p.grid_u();
    const auto &ld = p.grid_log_density_u();
    double trap = 0.0;
    for (std::size_t k = 1; k < u.size(); ++k) {
        trap += 0.5 * (std::exp(ld[k]) + std::exp(ld[k - 1])) * (u[k] - u[k - 1]);
    }
    CHECK(trap == doctest::Approx(1.0).epsilon(1e-4));
    // More prior mass near one as the rate grows.
    const PCOmegaPrior tight(6, 0.7, 0.99);
    CHECK(tight.rate() > p.rate());
    CHECK(1.0 - tight.cdf(0.95) > 1.0 - p.cdf(0.95));
    const double lambda = solve_pc_rate({0.7, 0.9, TailDirection::above},
                                        DistanceFunction{[](double w) { return PCOmegaPrior::distance(w); }, 1.0, -1.0});
    CHECK(lambda == doctest::Approx(p.rate()).epsilon(1e-7));
    CHECK(p.log_density(0.3) == doctest::Approx(p.exact_log_density(0.3)).epsilon(1e-3));
    CHECK_THROWS_AS(PCOmegaPrior(1), std::invalid_argument);
}

TEST_CASE("slope and overdispersion priors") {
    const PCSlopePrior s;
    // P(|b| < 1) = 0.99 for b ~ N(0, sd^2).
    CHECK(std::erf(1.0 / (s.sd() * std::sqrt(2.0))) == doctest::Approx(0.99).epsilon(1e-10));
    const OverdispersionPrior o;
    const double tail = integrate([&](double r) { return std::exp(o.log_density(r)); }, o.U, 1.0);
    const double total = integrate([&](double r) { return std::exp(o.log_density(r)); }, 0.0, 1.0);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(tail == doctest::Approx((std::exp(-o.rate() * o.U) - std::exp(-o.rate())) / -std::expm1(-o.rate())));
}
