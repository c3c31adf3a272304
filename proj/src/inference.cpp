#include "sae/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "sae/betabinomial.hpp"
#include "sae/csv.hpp"
#include "sae/gmrf.hpp"
#include "sae/stats.hpp"

namespace sae {

namespace {

constexpr double log_2pi = 1.8378770664093453;
constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();
constexpr double neg_inf = -std::numeric_limits<double>::infinity();

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Cholesky with a single jittered retry.
Eigen::LLT<MatrixXd> factorize(MatrixXd H, const char *what) {
    Eigen::LLT<MatrixXd> llt(H);
    if (llt.info() == Eigen::Success) {
        return llt;
    }
    const double jitter = 1e-8 * std::max(1.0, H.diagonal().cwiseAbs().mean());
    H.diagonal().array() += jitter;
    llt.compute(H);
    if (llt.info() != Eigen::Success) {
        throw std::runtime_error(fmt::format("{}: precision of size {} is not positive definite (diagonal range [{:.3g}, {:.3g}])",
                                             what, H.rows(), H.diagonal().minCoeff(), H.diagonal().maxCoeff()));
    }
    return llt;
}

double log_det(const Eigen::LLT<MatrixXd> &llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Orthonormal basis of the null space of the rows of C (p x (p - c)).
MatrixXd complement_basis(const MatrixXd &C, std::size_t p) {
    if (C.rows() == 0) {
        return MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    }
    Eigen::HouseholderQR<MatrixXd> qr(C.transpose());
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    return Q.rightCols(static_cast<Eigen::Index>(p) - C.rows());
}

double normal_draw(std::mt19937_64 &rng) {
    static thread_local std::normal_distribution<double> dist;
    return dist(rng);
}

double uniform_draw(std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

} // namespace

// ---------------------------------------------------------------------------
// Scales

double to_sampler_scale(HyperScale scale, double value) {
    switch (scale) {
    case HyperScale::positive:
        return std::log(value);
    case HyperScale::unit:
        return logit(value);
    case HyperScale::symmetric:
        return std::atanh(value);
    }
    return value;
}

double from_sampler_scale(HyperScale scale, double u) {
    switch (scale) {
    case HyperScale::positive:
        return std::exp(u);
    case HyperScale::unit:
        return expit(u);
    case HyperScale::symmetric:
        return std::tanh(u);
    }
    return u;
}

double sampler_log_jacobian(HyperScale scale, double u) {
    switch (scale) {
    case HyperScale::positive:
        return u;
    case HyperScale::unit: {
        // log(expit(u) (1 - expit(u)))
        return -std::abs(u) - 2.0 * std::log1p(std::exp(-std::abs(u)));
    }
    case HyperScale::symmetric: {
        // log(1 - tanh(u)^2) = log 4 - 2 |u| - 2 log(1 + exp(-2|u|))
        const double a = std::abs(u);
        return std::log(4.0) - 2.0 * a - 2.0 * std::log1p(std::exp(-2.0 * a));
    }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// LatentModel

std::size_t LatentModel::latent_size() const {
    std::size_t p = 0;
    for (const auto &c : components) {
        p += c.size();
    }
    return p;
}

std::vector<std::size_t> LatentModel::offsets() const {
    std::vector<std::size_t> out;
    std::size_t p = 0;
    for (const auto &c : components) {
        out.push_back(p);
        p += c.size();
    }
    return out;
}

std::size_t LatentModel::component_index(const std::string &name) const {
    for (std::size_t k = 0; k < components.size(); ++k) {
        if (components[k].name == name) {
            return k;
        }
    }
    throw std::invalid_argument(fmt::format("no latent component named '{}'", name));
}

std::size_t LatentModel::component_offset(const std::string &name) const { return offsets()[component_index(name)]; }

bool LatentModel::has_component(const std::string &name) const {
    return std::any_of(components.begin(), components.end(), [&](const auto &c) { return c.name == name; });
}

std::size_t LatentModel::hyper_index(const std::string &name) const {
    for (std::size_t k = 0; k < hypers.size(); ++k) {
        if (hypers[k].name == name) {
            return k;
        }
    }
    throw std::invalid_argument(fmt::format("no hyperparameter named '{}'", name));
}

std::size_t LatentModel::add_cell(PredictorCell cell) {
    cells.push_back(std::move(cell));
    return cells.size() - 1;
}

MatrixXd LatentModel::constraint_matrix() const {
    const auto off = offsets();
    Eigen::Index rows = 0;
    for (const auto &c : components) {
        rows += c.constraints.rows();
    }
    MatrixXd A = MatrixXd::Zero(rows, static_cast<Eigen::Index>(latent_size()));
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < components.size(); ++k) {
        const auto &C = components[k].constraints;
        if (C.rows() > 0) {
            A.block(r, static_cast<Eigen::Index>(off[k]), C.rows(), C.cols()) = C;
            r += C.rows();
        }
    }
    return A;
}

void LatentModel::validate() const {
    auto fail = [](const std::string &msg) { throw std::invalid_argument("latent model: " + msg); };
    if (components.empty()) {
        fail("no latent components");
    }
    for (std::size_t j = 0; j < hypers.size(); ++j) {
        const auto &h = hypers[j];
        if (!h.log_prior) {
            fail(fmt::format("hyperparameter '{}' has no prior", h.name));
        }
        const double u = to_sampler_scale(h.scale, h.initial);
        if (!std::isfinite(u)) {
            fail(fmt::format("hyperparameter '{}' starts outside its support", h.name));
        }
    }
    auto check_hyper = [&](const std::optional<std::size_t> &idx, HyperScale want, const std::string &comp) {
        if (!idx) {
            return;
        }
        if (*idx >= hypers.size()) {
            fail(fmt::format("component '{}' refers to a missing hyperparameter", comp));
        }
        if (hypers[*idx].scale != want) {
            fail(fmt::format("component '{}' binds hyperparameter '{}' with the wrong support", comp, hypers[*idx].name));
        }
    };
    for (const auto &c : components) {
        const auto n = static_cast<Eigen::Index>(c.size());
        if (n == 0) {
            fail(fmt::format("component '{}' is empty", c.name));
        }
        if (c.ar1_omega) {
            const Eigen::Index right = c.ar1_right.size() == 0 ? 1 : c.ar1_right.rows();
            if (static_cast<Eigen::Index>(c.ar1_length) * right != n) {
                fail(fmt::format("component '{}': AR1 dimensions do not match its labels", c.name));
            }
        } else if (c.structure.rows() != n || c.structure.cols() != n) {
            fail(fmt::format("component '{}': structure is not {} x {}", c.name, n, n));
        }
        if (c.constraints.rows() > 0 && c.constraints.cols() != n) {
            fail(fmt::format("component '{}': constraint width differs from its size", c.name));
        }
        if (!c.sigma && !(c.fixed_variance > 0.0)) {
            fail(fmt::format("component '{}': fixed variance must be positive", c.name));
        }
        if (c.mixing && c.mixing_role == MixingRole::none) {
            fail(fmt::format("component '{}': mixing parameter without a role", c.name));
        }
        check_hyper(c.sigma, HyperScale::positive, c.name);
        check_hyper(c.mixing, HyperScale::unit, c.name);
        check_hyper(c.ar1_omega, HyperScale::symmetric, c.name);
    }
    const auto p = latent_size();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        for (const auto &[idx, w] : cells[i].loading) {
            if (idx >= p || !std::isfinite(w)) {
                fail(fmt::format("predictor cell {} has an invalid loading", i));
            }
        }
        if (!std::isfinite(cells[i].offset)) {
            fail(fmt::format("predictor cell {} has a non-finite offset", i));
        }
    }
    if (likelihood == Likelihood::gaussian) {
        if (!counts.empty()) {
            fail("count observations given to a Gaussian model");
        }
        for (const auto &o : gaussian) {
            if (o.cell >= cells.size()) {
                fail("observation refers to a missing predictor cell");
            }
            if (!(o.variance > 0.0) || !std::isfinite(o.y)) {
                fail("Gaussian observations need finite values and positive variances");
            }
        }
    } else {
        if (!gaussian.empty()) {
            fail("Gaussian observations given to a count model");
        }
        if (!overdispersion || *overdispersion >= hypers.size() || hypers[*overdispersion].scale != HyperScale::unit) {
            fail("beta-binomial model needs an overdispersion hyperparameter on (0, 1)");
        }
        for (const auto &o : counts) {
            if (o.cell >= cells.size()) {
                fail("observation refers to a missing predictor cell");
            }
            if (o.trials <= 0) {
                fail("count rows with zero exposure are not allowed");
            }
            if (o.deaths < 0 || o.deaths > o.trials) {
                fail("counts must satisfy 0 <= deaths <= exposure");
            }
        }
    }
    const MatrixXd A = constraint_matrix();
    if (A.rows() > 0) {
        Eigen::LLT<MatrixXd> llt(A * A.transpose());
        if (llt.info() != Eigen::Success) {
            fail("constraint rows are linearly dependent");
        }
    }
}

namespace {

double variance_factor(const LatentModel &model, const LatentComponent &c, std::span<const double> theta) {
    double v = c.sigma ? theta[*c.sigma] * theta[*c.sigma] : c.fixed_variance;
    if (c.mixing) {
        const double phi = theta[*c.mixing];
        v *= c.mixing_role == MixingRole::structured ? phi : 1.0 - phi;
    }
    (void)model;
    return v;
}

MatrixXd component_structure(const LatentComponent &c, std::span<const double> theta) {
    if (!c.ar1_omega) {
        return c.structure;
    }
    const MatrixXd a = ar1_precision(c.ar1_length, theta[*c.ar1_omega]).Q;
    if (c.ar1_right.size() == 0) {
        return a;
    }
    return kronecker(a, c.ar1_right);
}

} // namespace

Eigen::MatrixXd component_precision(const LatentModel &model, std::size_t k, std::span<const double> theta) {
    const auto &c = model.components.at(k);
    return component_structure(c, theta) / variance_factor(model, c, theta);
}

double component_variance(const LatentModel &model, std::size_t k, std::span<const double> theta) {
    return variance_factor(model, model.components.at(k), theta);
}

namespace {

double gaussian_loglik(double y, double eta, double var) {
    const double r = y - eta;
    return -0.5 * (log_2pi + std::log(var)) - 0.5 * r * r / var;
}

double cell_eta(const PredictorCell &c, const VectorXd &x) {
    double eta = c.offset;
    for (const auto &[i, w] : c.loading) {
        eta += w * x(static_cast<Eigen::Index>(i));
    }
    return eta;
}

} // namespace

double log_likelihood(const LatentModel &model, const Eigen::VectorXd &x, std::span<const double> theta) {
    std::vector<double> eta(model.cells.size());
    for (std::size_t i = 0; i < model.cells.size(); ++i) {
        eta[i] = cell_eta(model.cells[i], x);
    }
    double ll = 0.0;
    if (model.likelihood == Likelihood::gaussian) {
        for (const auto &o : model.gaussian) {
            ll += gaussian_loglik(o.y, eta[o.cell], o.variance);
        }
    } else {
        const double rho = theta[*model.overdispersion];
        for (const auto &o : model.counts) {
            ll += betabinomial_logpmf(o.deaths, o.trials, expit(eta[o.cell]), rho);
        }
    }
    return ll;
}

// ---------------------------------------------------------------------------
// Sampler engine

namespace {

/// Gaussian N(mean, H^-1) restricted to A x = 0 by conditioning.
struct ConstrainedGaussian {
    MatrixXd H;
    Eigen::LLT<MatrixXd> chol;
    VectorXd mean_free;
    VectorXd mean;
    MatrixXd V; // H^-1 A'
    Eigen::LLT<MatrixXd> S;
    double logdet_H = 0.0;
    double logdet_S = 0.0;
    double s_quad = 0.0;
};

class Engine {
  public:
    explicit Engine(const LatentModel &model) : m_{model} {
        model.validate();
        p_ = model.latent_size();
        offsets_ = model.offsets();
        A_ = model.constraint_matrix();
        r_ = static_cast<std::size_t>(A_.rows());
        AtA_ = A_.transpose() * A_;
        if (r_ > 0) {
            logdet_AAt_ = log_det(Eigen::LLT<MatrixXd>(A_ * A_.transpose()));
        }
        for (std::size_t j = 0; j < model.hypers.size(); ++j) {
            if (!model.hypers[j].fixed) {
                free_.push_back(j);
            }
        }
        std::vector<double> theta0 = initial_theta();
        for (const auto &c : model.components) {
            const MatrixXd N = complement_basis(c.constraints, c.size());
            basis_.push_back(N);
            const MatrixXd R = component_structure(c, theta0);
            const MatrixXd M = N.transpose() * R * N;
            Eigen::LLT<MatrixXd> llt(M);
            if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() < 1e-7) {
                throw std::invalid_argument(
                    fmt::format("latent model: component '{}' is improper on its constraint subspace", c.name));
            }
            static_logdet_.push_back(log_det(llt));
        }
        cell_rows_.resize(model.cells.size());
        for (std::size_t i = 0; i < model.counts.size(); ++i) {
            cell_rows_[model.counts[i].cell].push_back(i);
        }
    }

    std::size_t p() const { return p_; }
    const MatrixXd &A() const { return A_; }
    const std::vector<std::size_t> &free() const { return free_; }
    const LatentModel &model() const { return m_; }

    std::vector<double> initial_theta() const {
        std::vector<double> theta;
        for (const auto &h : m_.hypers) {
            theta.push_back(h.initial);
        }
        return theta;
    }

    MatrixXd prior_precision(std::span<const double> theta) const {
        MatrixXd Q = MatrixXd::Zero(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
        for (std::size_t k = 0; k < m_.components.size(); ++k) {
            const auto n = static_cast<Eigen::Index>(m_.components[k].size());
            const auto o = static_cast<Eigen::Index>(offsets_[k]);
            Q.block(o, o, n, n) = component_precision(m_, k, theta);
        }
        return Q;
    }

    double log_prior_x(const VectorXd &x, std::span<const double> theta) const {
        double lp = 0.0;
        for (std::size_t k = 0; k < m_.components.size(); ++k) {
            const auto &c = m_.components[k];
            const auto n = static_cast<Eigen::Index>(c.size());
            const auto xk = x.segment(static_cast<Eigen::Index>(offsets_[k]), n);
            const MatrixXd R = component_structure(c, theta);
            double logdet = static_logdet_[k];
            if (c.ar1_omega) {
                const MatrixXd &N = basis_[k];
                logdet = log_det(factorize(N.transpose() * R * N, "AR1 component"));
            }
            const double rank = static_cast<double>(c.size() - static_cast<std::size_t>(c.constraints.rows()));
            const double v = variance_factor(m_, c, theta);
            lp += -0.5 * rank * (log_2pi + std::log(v)) + 0.5 * logdet - 0.5 * xk.dot(R * xk) / v;
        }
        return lp;
    }

    double log_prior_theta(std::span<const double> theta, std::span<const double> u) const {
        double lp = 0.0;
        for (std::size_t f = 0; f < free_.size(); ++f) {
            const auto &h = m_.hypers[free_[f]];
            lp += h.log_prior(theta[free_[f]]) + sampler_log_jacobian(h.scale, u[f]);
        }
        return lp;
    }

    ConstrainedGaussian gaussian(MatrixXd H, const VectorXd &b) const {
        ConstrainedGaussian g;
        H += AtA_;
        g.chol = factorize(H, "conditional");
        g.H = std::move(H);
        g.logdet_H = log_det(g.chol);
        g.mean_free = g.chol.solve(b);
        g.mean = g.mean_free;
        if (r_ > 0) {
            g.V = g.chol.solve(A_.transpose());
            g.S = factorize(A_ * g.V, "constraint");
            g.logdet_S = log_det(g.S);
            const VectorXd Am = A_ * g.mean_free;
            const VectorXd w = g.S.solve(Am);
            g.mean -= g.V * w;
            g.s_quad = Am.dot(w);
        }
        return g;
    }

    VectorXd project(const ConstrainedGaussian &g, VectorXd x) const {
        if (r_ > 0) {
            for (int pass = 0; pass < 2; ++pass) {
                x -= g.V * g.S.solve(A_ * x);
            }
        }
        return x;
    }

    VectorXd sample(const ConstrainedGaussian &g, std::mt19937_64 &rng) const {
        VectorXd z(static_cast<Eigen::Index>(p_));
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            z(i) = normal_draw(rng);
        }
        VectorXd x = g.chol.matrixU().solve(z);
        x += g.mean_free;
        return project(g, std::move(x));
    }

    /// Density on the constraint surface, for feasible x.
    double log_density(const ConstrainedGaussian &g, const VectorXd &x) const {
        const VectorXd d = x - g.mean_free;
        return -0.5 * static_cast<double>(p_ - r_) * log_2pi + 0.5 * g.logdet_H - 0.5 * d.dot(g.H * d) +
               0.5 * g.logdet_S + 0.5 * g.s_quad - 0.5 * logdet_AAt_;
    }

    /// Gaussian approximation of x | theta, y around its mode. Exact for a
    /// Gaussian likelihood.
    ConstrainedGaussian laplace(std::span<const double> theta, const VectorXd &start) const {
        const MatrixXd Q = prior_precision(theta);
        if (m_.likelihood == Likelihood::gaussian) {
            std::vector<double> w(m_.cells.size(), 0.0), b(m_.cells.size(), 0.0);
            for (const auto &o : m_.gaussian) {
                w[o.cell] += 1.0 / o.variance;
                b[o.cell] += (o.y - m_.cells[o.cell].offset) / o.variance;
            }
            auto [H, bx] = assemble(Q, w, b);
            return gaussian(std::move(H), bx);
        }
        const double rho = theta[*m_.overdispersion];
        VectorXd x = start;
        double f = newton_objective(Q, x, rho);
        ConstrainedGaussian g;
        for (int iter = 0; iter < 100; ++iter) {
            std::vector<double> w(m_.cells.size(), 0.0), b(m_.cells.size(), 0.0);
            for (std::size_t c = 0; c < m_.cells.size(); ++c) {
                const double eta = cell_eta(m_.cells[c], x);
                double grad = 0.0, hess = 0.0;
                for (std::size_t row : cell_rows(c)) {
                    const auto &o = m_.counts[row];
                    const auto d = betabinomial_eta_derivatives(o.deaths, o.trials, eta, rho);
                    grad += d.gradient;
                    hess += d.hessian;
                }
                w[c] = std::max(-hess, 0.0);
                b[c] = grad + w[c] * (eta - m_.cells[c].offset);
            }
            auto [H, bx] = assemble(Q, w, b);
            g = gaussian(std::move(H), bx);
            VectorXd next = g.mean;
            double f_next = newton_objective(Q, next, rho);
            for (int half = 0; half < 30 && !(f_next >= f - 1e-12); ++half) {
                next = 0.5 * (x + next);
                f_next = newton_objective(Q, next, rho);
            }
            const double change = (next - x).cwiseAbs().maxCoeff();
            x = std::move(next);
            f = f_next;
            if (change < 1e-9) {
                break;
            }
        }
        return g;
    }

    double log_lik(const VectorXd &x, std::span<const double> theta) const { return log_likelihood(m_, x, theta); }

    /// Rescales every component to keep x / sqrt(variance) fixed when theta
    /// changes; adds the log Jacobian of the map on the constraint surface.
    VectorXd rescale(VectorXd x, std::span<const double> from, std::span<const double> to, double &log_jac) const {
        log_jac = 0.0;
        for (std::size_t k = 0; k < m_.components.size(); ++k) {
            const auto &c = m_.components[k];
            const double ratio = variance_factor(m_, c, to) / variance_factor(m_, c, from);
            if (ratio == 1.0) {
                continue;
            }
            const double factor = std::sqrt(ratio);
            const auto n = static_cast<Eigen::Index>(c.size());
            x.segment(static_cast<Eigen::Index>(offsets_[k]), n) *= factor;
            log_jac += static_cast<double>(c.size() - static_cast<std::size_t>(c.constraints.rows())) * std::log(factor);
        }
        return x;
    }

    double max_residual(const VectorXd &x) const { return r_ > 0 ? (A_ * x).cwiseAbs().maxCoeff() : 0.0; }

  private:
    const std::vector<std::size_t> &cell_rows(std::size_t c) const { return cell_rows_[c]; }

    std::pair<MatrixXd, VectorXd> assemble(const MatrixXd &Q, const std::vector<double> &w,
                                           const std::vector<double> &b) const {
        MatrixXd H = Q;
        VectorXd bx = VectorXd::Zero(static_cast<Eigen::Index>(p_));
        for (std::size_t c = 0; c < m_.cells.size(); ++c) {
            const auto &load = m_.cells[c].loading;
            for (const auto &[i, ai] : load) {
                bx(static_cast<Eigen::Index>(i)) += ai * b[c];
                if (w[c] == 0.0) {
                    continue;
                }
                for (const auto &[j, aj] : load) {
                    H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += w[c] * ai * aj;
                }
            }
        }
        return {std::move(H), std::move(bx)};
    }

    double newton_objective(const MatrixXd &Q, const VectorXd &x, double rho) const {
        double ll = 0.0;
        for (const auto &o : m_.counts) {
            ll += betabinomial_logpmf(o.deaths, o.trials, expit(cell_eta(m_.cells[o.cell], x)), rho);
        }
        return ll - 0.5 * x.dot(Q * x);
    }

    const LatentModel &m_;
    std::size_t p_ = 0;
    std::size_t r_ = 0;
    std::vector<std::size_t> offsets_;
    MatrixXd A_;
    MatrixXd AtA_;
    double logdet_AAt_ = 0.0;
    std::vector<std::size_t> free_;
    std::vector<MatrixXd> basis_;
    std::vector<double> static_logdet_;
    std::vector<std::vector<std::size_t>> cell_rows_;
};

struct ChainResult {
    MatrixXd draws;
    std::vector<double> acceptance;
    std::vector<std::vector<double>> traces; ///< per free hyper, sampler scale
    double max_residual = 0.0;
};

ChainResult run_chain(const Engine &engine, const SamplerOptions &options, std::size_t chain) {
    const auto &model = engine.model();
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed & 0xffffffffu), static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(chain)};
    std::mt19937_64 rng(seq);

    const auto &free = engine.free();
    std::vector<double> theta = engine.initial_theta();
    std::vector<double> u(free.size());
    for (std::size_t f = 0; f < free.size(); ++f) {
        u[f] = to_sampler_scale(model.hypers[free[f]].scale, theta[free[f]]);
    }
    const auto p = static_cast<Eigen::Index>(engine.p());
    ConstrainedGaussian q = engine.laplace(theta, VectorXd::Zero(p));
    VectorXd x = q.mean;
    double prior_theta = engine.log_prior_theta(theta, u);
    double target = prior_theta + engine.log_prior_x(x, theta) + engine.log_lik(x, theta);
    double logq = engine.log_density(q, x);

    std::vector<double> log_step(free.size(), std::log(0.5));
    std::vector<std::size_t> accepted(free.size(), 0);
    const std::size_t total = options.n_burnin + options.n_draws;
    const auto h = static_cast<Eigen::Index>(model.hypers.size());

    ChainResult out;
    out.draws.resize(static_cast<Eigen::Index>(options.n_draws), p + h);
    out.traces.assign(free.size(), {});

    const bool gaussian = model.likelihood == Likelihood::gaussian;
    // Beta-binomial chains alternate two exact moves per hyperparameter: one
    // with x held fixed and one that rescales x with its prior variance.
    std::vector<double> log_step_nc(free.size(), std::log(0.5));
    auto adapt = [&](double &step, bool accept, std::size_t it) {
        const double rate = 1.0 / std::pow(static_cast<double>(it) + 1.0, 0.6);
        step += rate * ((accept ? 1.0 : 0.0) - options.target_acceptance);
        step = std::clamp(step, -12.0, 3.0);
    };

    for (std::size_t it = 0; it < total; ++it) {
        for (std::size_t f = 0; f < free.size(); ++f) {
            const std::size_t j = free[f];
            const int n_moves = gaussian ? 1 : 2;
            for (int move = 0; move < n_moves; ++move) {
                double &step = move == 0 ? log_step[f] : log_step_nc[f];
                std::vector<double> theta_new = theta;
                std::vector<double> u_new = u;
                u_new[f] += std::exp(step) * normal_draw(rng);
                theta_new[j] = from_sampler_scale(model.hypers[j].scale, u_new[f]);
                double log_r = neg_inf;
                ConstrainedGaussian q_new;
                VectorXd x_new;
                double target_new = neg_inf, logq_new = 0.0;
                const double prior_new = engine.log_prior_theta(theta_new, u_new);
                // Proposals at numerically degenerate values are simply rejected.
                if (std::isfinite(prior_new) && std::isfinite(u_new[f]) && std::abs(u_new[f]) < 30.0) {
                    try {
                        if (gaussian) {
                            q_new = engine.laplace(theta_new, q.mean);
                            x_new = engine.sample(q_new, rng);
                            target_new =
                                prior_new + engine.log_prior_x(x_new, theta_new) + engine.log_lik(x_new, theta_new);
                            logq_new = engine.log_density(q_new, x_new);
                            log_r = (target_new - logq_new) - (target - logq);
                        } else {
                            double log_jac = 0.0;
                            x_new = move == 0 ? x : engine.rescale(x, theta, theta_new, log_jac);
                            target_new =
                                prior_new + engine.log_prior_x(x_new, theta_new) + engine.log_lik(x_new, theta_new);
                            log_r = target_new - target + log_jac;
                        }
                    } catch (const std::runtime_error &) {
                        log_r = neg_inf;
                    }
                }
                const bool accept = std::isfinite(log_r) && std::log(uniform_draw(rng)) < log_r;
                if (accept) {
                    theta = std::move(theta_new);
                    u = std::move(u_new);
                    x = std::move(x_new);
                    prior_theta = prior_new;
                    target = target_new;
                    if (gaussian) {
                        q = std::move(q_new);
                        logq = logq_new;
                    }
                }
                if (it < options.n_burnin) {
                    adapt(step, accept, it);
                } else if (accept && move == 0) {
                    ++accepted[f];
                }
            }
        }

        if (!gaussian) {
            q = engine.laplace(theta, q.mean);
        }
        if (model.likelihood == Likelihood::gaussian) {
            x = engine.sample(q, rng);
        } else {
            // Elliptical slice moves with the Gaussian approximation as the
            // reference measure.
            auto excess = [&](const VectorXd &v) {
                return engine.log_prior_x(v, theta) + engine.log_lik(v, theta) - engine.log_density(q, v);
            };
            for (std::size_t s = 0; s < options.slice_steps; ++s) {
                const VectorXd nu = engine.sample(q, rng) - q.mean;
                const VectorXd x0 = x - q.mean;
                const double level = excess(x) + std::log(uniform_draw(rng));
                double angle = 2.0 * std::numbers::pi * uniform_draw(rng);
                double lo = angle - 2.0 * std::numbers::pi;
                double hi = angle;
                for (int shrink = 0; shrink < 200; ++shrink) {
                    VectorXd cand = q.mean + x0 * std::cos(angle) + nu * std::sin(angle);
                    if (excess(cand) > level) {
                        x = std::move(cand);
                        break;
                    }
                    if (angle < 0.0) {
                        lo = angle;
                    } else {
                        hi = angle;
                    }
                    angle = lo + (hi - lo) * uniform_draw(rng);
                }
            }
        }
        target = prior_theta + engine.log_prior_x(x, theta) + engine.log_lik(x, theta);
        logq = engine.log_density(q, x);

        if (it >= options.n_burnin) {
            const auto row = static_cast<Eigen::Index>(it - options.n_burnin);
            out.draws.row(row).head(p) = x.transpose();
            for (Eigen::Index k = 0; k < h; ++k) {
                out.draws(row, p + k) = theta[static_cast<std::size_t>(k)];
            }
            for (std::size_t f = 0; f < free.size(); ++f) {
                out.traces[f].push_back(u[f]);
            }
            out.max_residual = std::max(out.max_residual, engine.max_residual(x));
        }
    }
    out.acceptance.assign(model.hypers.size(), nan_value);
    for (std::size_t f = 0; f < free.size(); ++f) {
        out.acceptance[free[f]] =
            options.n_draws > 0 ? static_cast<double>(accepted[f]) / static_cast<double>(options.n_draws) : nan_value;
    }
    return out;
}

PosteriorDraws run_sampler(const LatentModel &model, const SamplerOptions &options) {
    if (options.chains == 0 || options.n_draws == 0) {
        throw std::invalid_argument("sampler needs at least one chain and one draw");
    }
    const Engine engine(model);
    std::vector<ChainResult> results(options.chains);
    if (options.parallel && options.chains > 1) {
        std::vector<std::exception_ptr> errors(options.chains);
        std::vector<std::thread> threads;
        for (std::size_t c = 0; c < options.chains; ++c) {
            threads.emplace_back([&, c] {
                try {
                    results[c] = run_chain(engine, options, c);
                } catch (...) {
                    errors[c] = std::current_exception();
                }
            });
        }
        for (auto &t : threads) {
            t.join();
        }
        for (auto &e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    } else {
        for (std::size_t c = 0; c < options.chains; ++c) {
            results[c] = run_chain(engine, options, c);
        }
    }

    PosteriorDraws out;
    const auto p = static_cast<Eigen::Index>(engine.p());
    const auto h = static_cast<Eigen::Index>(model.hypers.size());
    const auto n = static_cast<Eigen::Index>(options.n_draws);
    out.draws.resize(n * static_cast<Eigen::Index>(options.chains), p + h);
    for (std::size_t c = 0; c < options.chains; ++c) {
        out.draws.middleRows(static_cast<Eigen::Index>(c) * n, n) = results[c].draws;
        out.acceptance.push_back(results[c].acceptance);
        out.max_constraint_residual = std::max(out.max_constraint_residual, results[c].max_residual);
    }
    const auto offsets = model.offsets();
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto &comp = model.components[k];
        out.components.push_back(ComponentRange{comp.name, offsets[k], comp.size(), comp.labels});
    }
    for (const auto &hp : model.hypers) {
        out.hyper_names.push_back(hp.name);
    }
    out.hyper_start = engine.p();
    out.seed = options.seed;
    out.chains = options.chains;
    out.rhat.assign(model.hypers.size(), nan_value);
    out.ess.assign(model.hypers.size(), nan_value);
    const auto &free = engine.free();
    for (std::size_t f = 0; f < free.size(); ++f) {
        std::vector<std::vector<double>> traces;
        for (const auto &r : results) {
            traces.push_back(r.traces[f]);
        }
        out.rhat[free[f]] = split_rhat(traces);
        out.ess[free[f]] = effective_sample_size(traces);
    }
    return out;
}

} // namespace

PosteriorDraws fit_gaussian_lgm(const LatentModel &model, const SamplerOptions &options) {
    if (model.likelihood != Likelihood::gaussian) {
        throw std::invalid_argument("fit_gaussian_lgm needs a Gaussian likelihood");
    }
    return run_sampler(model, options);
}

PosteriorDraws fit_betabinomial_lgm(const LatentModel &model, const SamplerOptions &options) {
    if (model.likelihood != Likelihood::betabinomial) {
        throw std::invalid_argument("fit_betabinomial_lgm needs a beta-binomial likelihood");
    }
    return run_sampler(model, options);
}

PosteriorDraws fit_lgm(const LatentModel &model, const SamplerOptions &options) { return run_sampler(model, options); }

// ---------------------------------------------------------------------------
// Diagnostics

double split_rhat(const std::vector<std::vector<double>> &chains) {
    std::vector<std::vector<double>> halves;
    for (const auto &c : chains) {
        const std::size_t n = c.size() / 2;
        if (n < 2) {
            return nan_value;
        }
        halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
        halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(n), c.end());
    }
    const double n = static_cast<double>(halves.front().size());
    std::vector<double> means, vars;
    for (const auto &s : halves) {
        means.push_back(mean(s));
        vars.push_back(variance(s));
    }
    const double W = mean(vars);
    const double B = n * variance(means);
    if (W <= 0.0) {
        return B <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    const double var_plus = (n - 1.0) / n * W + B / n;
    return std::sqrt(var_plus / W);
}

double effective_sample_size(const std::vector<std::vector<double>> &chains) {
    const std::size_t M = chains.size();
    const std::size_t N = chains.empty() ? 0 : chains.front().size();
    if (M == 0 || N < 4) {
        return nan_value;
    }
    std::vector<double> means, vars;
    for (const auto &c : chains) {
        means.push_back(mean(c));
        vars.push_back(variance(c));
    }
    const double W = mean(vars);
    const double n = static_cast<double>(N);
    const double B = M > 1 ? n * variance(means) : 0.0;
    const double var_plus = (n - 1.0) / n * W + B / n;
    if (!(var_plus > 0.0)) {
        return nan_value;
    }
    auto rho = [&](std::size_t lag) {
        double acov = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            const auto &c = chains[m];
            double s = 0.0;
            for (std::size_t t = 0; t + lag < N; ++t) {
                s += (c[t] - means[m]) * (c[t + lag] - means[m]);
            }
            acov += s / n;
        }
        acov /= static_cast<double>(M);
        return 1.0 - (W - acov) / var_plus;
    };
    double tau = -1.0;
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; 2 * k + 1 < N; ++k) {
        double pair = rho(2 * k) + rho(2 * k + 1);
        if (pair < 0.0) {
            break;
        }
        pair = std::min(pair, prev);
        prev = pair;
        tau += 2.0 * pair;
    }
    tau = std::max(tau, 1.0 / std::log10(static_cast<double>(M) * n));
    return static_cast<double>(M) * n / tau;
}

// ---------------------------------------------------------------------------
// PosteriorDraws

const ComponentRange &PosteriorDraws::component(const std::string &name) const {
    for (const auto &c : components) {
        if (c.name == name) {
            return c;
        }
    }
    throw std::invalid_argument(fmt::format("draws have no component '{}'", name));
}

bool PosteriorDraws::has_component(const std::string &name) const {
    return std::any_of(components.begin(), components.end(), [&](const auto &c) { return c.name == name; });
}

std::size_t PosteriorDraws::hyper_column(const std::string &name) const {
    for (std::size_t k = 0; k < hyper_names.size(); ++k) {
        if (hyper_names[k] == name) {
            return hyper_start + k;
        }
    }
    throw std::invalid_argument(fmt::format("draws have no hyperparameter '{}'", name));
}

std::vector<std::string> PosteriorDraws::column_names() const {
    std::vector<std::string> out;
    for (const auto &c : components) {
        for (const auto &l : c.labels) {
            out.push_back(fmt::format("{}[{}]", c.name, l));
        }
    }
    for (const auto &h : hyper_names) {
        out.push_back(h);
    }
    return out;
}

void PosteriorDraws::write_csv(std::ostream &out) const {
    const auto names = column_names();
    for (std::size_t j = 0; j < names.size(); ++j) {
        out << (j ? "," : "") << names[j];
    }
    out << '\n';
    for (Eigen::Index i = 0; i < draws.rows(); ++i) {
        for (Eigen::Index j = 0; j < draws.cols(); ++j) {
            out << (j ? "," : "") << csv::format_number(draws(i, j));
        }
        out << '\n';
    }
}

void PosteriorDraws::write_csv(const std::filesystem::path &path) const {
    std::ofstream f(path);
    if (!f) {
        throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    }
    write_csv(f);
}

PosteriorDraws PosteriorDraws::read_csv(const std::filesystem::path &path) {
    const auto table = csv::Table::read(path);
    PosteriorDraws out;
    out.chains = 1;
    const auto &header = table.header();
    std::size_t j = 0;
    for (; j < header.size(); ++j) {
        const auto &name = header[j];
        const auto open = name.find('[');
        if (open == std::string::npos || name.back() != ']') {
            break;
        }
        const std::string comp = name.substr(0, open);
        const std::string label = name.substr(open + 1, name.size() - open - 2);
        if (out.components.empty() || out.components.back().name != comp) {
            out.components.push_back(ComponentRange{comp, j, 0, {}});
        }
        out.components.back().size += 1;
        out.components.back().labels.push_back(label);
    }
    out.hyper_start = j;
    for (; j < header.size(); ++j) {
        out.hyper_names.push_back(header[j]);
    }
    out.draws.resize(static_cast<Eigen::Index>(table.rows()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t r = 0; r < table.rows(); ++r) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            out.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::stod(table.cell(r, c));
        }
    }
    out.rhat.assign(out.hyper_names.size(), nan_value);
    out.ess.assign(out.hyper_names.size(), nan_value);
    return out;
}

std::string PosteriorDraws::diagnostics_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["seed"] = seed;
    j["chains"] = chains;
    j["draws"] = size();
    j["max_constraint_residual"] = max_constraint_residual;
    nlohmann::json hypers = nlohmann::json::array();
    for (std::size_t k = 0; k < hyper_names.size(); ++k) {
        nlohmann::json h;
        h["name"] = hyper_names[k];
        nlohmann::json acc = nlohmann::json::array();
        for (const auto &chain : acceptance) {
            acc.push_back(num(k < chain.size() ? chain[k] : nan_value));
        }
        h["acceptance"] = acc;
        h["rhat"] = num(k < rhat.size() ? rhat[k] : nan_value);
        h["ess"] = num(k < ess.size() ? ess[k] : nan_value);
        hypers.push_back(h);
    }
    j["hyperparameters"] = hypers;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Grid oracle

double GridAxis::step() const { return (upper - lower) / static_cast<double>(points); }

double GridAxis::node(std::size_t k) const { return lower + (static_cast<double>(k) + 0.5) * step(); }

GridResult grid_oracle(const LatentModel &model, const GridSpec &spec) {
    model.validate();
    if (model.constraint_matrix().rows() > 0) {
        throw std::invalid_argument("grid oracle: constrained models are not supported");
    }
    const std::size_t p = model.latent_size();
    std::vector<std::size_t> free;
    for (std::size_t j = 0; j < model.hypers.size(); ++j) {
        if (!model.hypers[j].fixed) {
            free.push_back(j);
        }
    }
    if (p > 3 || free.size() > 2) {
        throw std::invalid_argument("grid oracle: at most three latent coordinates and two free hyperparameters");
    }
    if (spec.latent.size() != p || spec.hyper.size() != free.size()) {
        throw std::invalid_argument("grid oracle: one axis is needed per latent coordinate and free hyperparameter");
    }
    std::vector<GridAxis> axes = spec.latent;
    axes.insert(axes.end(), spec.hyper.begin(), spec.hyper.end());
    double total = 1.0;
    for (const auto &a : axes) {
        if (a.points == 0 || !(a.upper > a.lower)) {
            throw std::invalid_argument("grid oracle: empty axis");
        }
        total *= static_cast<double>(a.points);
    }
    if (total > 3e8) {
        throw std::invalid_argument("grid oracle: grid too large");
    }
    const auto n_latent = static_cast<std::size_t>(std::llround(
        std::accumulate(spec.latent.begin(), spec.latent.end(), 1.0, [](double s, const GridAxis &a) { return s * static_cast<double>(a.points); })));
    const auto n_hyper = static_cast<std::size_t>(std::llround(
        std::accumulate(spec.hyper.begin(), spec.hyper.end(), 1.0, [](double s, const GridAxis &a) { return s * static_cast<double>(a.points); })));

    auto unravel = [](std::size_t flat, const std::vector<GridAxis> &ax, std::vector<std::size_t> &idx) {
        for (std::size_t d = ax.size(); d-- > 0;) {
            idx[d] = flat % ax[d].points;
            flat /= ax[d].points;
        }
    };

    std::vector<double> logpost(n_latent * n_hyper);
    std::vector<std::size_t> hidx(spec.hyper.size()), lidx(spec.latent.size());
    std::vector<double> theta;
    for (const auto &h : model.hypers) {
        theta.push_back(h.initial);
    }
    for (std::size_t hf = 0; hf < n_hyper; ++hf) {
        unravel(hf, spec.hyper, hidx);
        double lp_theta = 0.0;
        for (std::size_t f = 0; f < free.size(); ++f) {
            theta[free[f]] = spec.hyper[f].node(hidx[f]);
            lp_theta += model.hypers[free[f]].log_prior(theta[free[f]]);
        }
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
        const auto off = model.offsets();
        for (std::size_t k = 0; k < model.components.size(); ++k) {
            const auto n = static_cast<Eigen::Index>(model.components[k].size());
            Q.block(static_cast<Eigen::Index>(off[k]), static_cast<Eigen::Index>(off[k]), n, n) = component_precision(model, k, theta);
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(Q);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0)) {
            throw std::invalid_argument("grid oracle: prior precision must be positive definite");
        }
        const double logdet = ldlt.vectorD().array().log().sum();
        Eigen::VectorXd x(static_cast<Eigen::Index>(p));
        for (std::size_t lf = 0; lf < n_latent; ++lf) {
            unravel(lf, spec.latent, lidx);
            for (std::size_t d = 0; d < p; ++d) {
                x(static_cast<Eigen::Index>(d)) = spec.latent[d].node(lidx[d]);
            }
            const double lp = lp_theta + 0.5 * logdet - 0.5 * static_cast<double>(p) * log_2pi - 0.5 * x.dot(Q * x) +
                              log_likelihood(model, x, theta);
            logpost[hf * n_latent + lf] = lp;
        }
    }
    const double top = *std::max_element(logpost.begin(), logpost.end());
    if (!std::isfinite(top)) {
        throw std::invalid_argument("grid oracle: posterior vanishes on the whole grid");
    }
    std::vector<std::vector<double>> mass(axes.size());
    for (std::size_t d = 0; d < axes.size(); ++d) {
        mass[d].assign(axes[d].points, 0.0);
    }
    double norm = 0.0;
    for (std::size_t hf = 0; hf < n_hyper; ++hf) {
        unravel(hf, spec.hyper, hidx);
        for (std::size_t lf = 0; lf < n_latent; ++lf) {
            unravel(lf, spec.latent, lidx);
            const double w = std::exp(logpost[hf * n_latent + lf] - top);
            norm += w;
            for (std::size_t d = 0; d < p; ++d) {
                mass[d][lidx[d]] += w;
            }
            for (std::size_t f = 0; f < free.size(); ++f) {
                mass[p + f][hidx[f]] += w;
            }
        }
    }
    GridResult out;
    for (std::size_t d = 0; d < axes.size(); ++d) {
        GridMarginal g;
        g.axis = axes[d];
        if (d < p) {
            std::size_t comp = 0;
            std::size_t start = 0;
            const auto off = model.offsets();
            for (std::size_t k = 0; k < off.size(); ++k) {
                if (off[k] <= d) {
                    comp = k;
                    start = off[k];
                }
            }
            g.name = fmt::format("{}[{}]", model.components[comp].name, model.components[comp].labels[d - start]);
        } else {
            g.name = model.hypers[free[d - p]].name;
        }
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t k = 0; k < axes[d].points; ++k) {
            const double w = mass[d][k] / norm;
            const double v = axes[d].node(k);
            g.nodes.push_back(v);
            g.mass.push_back(w);
            m1 += w * v;
            m2 += w * v * v;
        }
        g.mean = m1;
        g.sd = std::sqrt(std::max(m2 - m1 * m1, 0.0));
        if ((!axes[d].lower_is_domain_edge && g.mass.front() > 0.01) ||
            (!axes[d].upper_is_domain_edge && g.mass.back() > 0.01)) {
            throw std::invalid_argument(fmt::format(
                "grid oracle: axis '{}' carries {:.3g} / {:.3g} of the mass at its edges; widen the grid", g.name,
                g.mass.front(), g.mass.back()));
        }
        (d < p ? out.latent : out.hyper).push_back(std::move(g));
    }
    return out;
}

double total_variation(const GridMarginal &marginal, std::span<const double> draws, std::size_t bins) {
    if (draws.empty()) {
        throw std::invalid_argument("total variation needs draws");
    }
    const auto &a = marginal.axis;
    bins = std::clamp<std::size_t>(bins, 1, a.points);
    const std::size_t group = (a.points + bins - 1) / bins;
    const std::size_t groups = (a.points + group - 1) / group;
    std::vector<double> grid(groups, 0.0), emp(groups, 0.0);
    for (std::size_t k = 0; k < a.points; ++k) {
        grid[k / group] += marginal.mass[k];
    }
    double outside = 0.0;
    const double w = 1.0 / static_cast<double>(draws.size());
    for (double v : draws) {
        if (!(v >= a.lower && v < a.upper)) {
            outside += w;
            continue;
        }
        const auto k = std::min(static_cast<std::size_t>((v - a.lower) / a.step()), a.points - 1);
        emp[k / group] += w;
    }
    double tv = outside;
    for (std::size_t g = 0; g < groups; ++g) {
        tv += std::abs(grid[g] - emp[g]);
    }
    return 0.5 * tv;
}

// ---------------------------------------------------------------------------

QuantitySummary summarize_values(std::span<const double> values, std::span<const double> probs) {
    if (values.empty()) {
        throw std::invalid_argument("cannot summarise an empty set of draws");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    QuantitySummary s;
    s.mean = mean(sorted);
    s.variance = variance(sorted);
    s.median = quantile_sorted(sorted, 0.5);
    for (double p : probs) {
        s.quantiles.push_back(quantile_sorted(sorted, p));
    }
    return s;
}

std::vector<QuantitySummary> summarize_draws(const PosteriorDraws &draws,
                                             const std::function<std::vector<double>(const Eigen::RowVectorXd &)> &transform,
                                             std::span<const double> probs) {
    if (draws.size() == 0) {
        throw std::invalid_argument("cannot summarise an empty set of draws");
    }
    std::vector<std::vector<double>> values;
    for (Eigen::Index i = 0; i < draws.draws.rows(); ++i) {
        const Eigen::RowVectorXd row = draws.draws.row(i);
        const auto t = transform(row);
        if (values.empty()) {
            values.resize(t.size());
        } else if (t.size() != values.size()) {
            throw std::invalid_argument("transform returned a varying number of quantities");
        }
        for (std::size_t q = 0; q < t.size(); ++q) {
            values[q].push_back(t[q]);
        }
    }
    std::vector<QuantitySummary> out;
    for (const auto &v : values) {
        out.push_back(summarize_values(v, probs));
    }
    return out;
}

} // namespace sae
