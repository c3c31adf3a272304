#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace sae {

/// Support of a hyperparameter; decides the unbounded scale the sampler
/// moves on (log, logit, atanh).
enum class HyperScale { positive, unit, symmetric };

double to_sampler_scale(HyperScale scale, double value);
double from_sampler_scale(HyperScale scale, double u);
/// log |d value / d u|
double sampler_log_jacobian(HyperScale scale, double u);

struct Hyperparameter {
    std::string name;
    HyperScale scale = HyperScale::positive;
    /// Log prior density on the natural scale.
    std::function<double(double)> log_prior;
    double initial = 1.0;
    bool fixed = false;
};

/// Which share of a BYM2 variance a component carries.
enum class MixingRole { none, unstructured, structured };

/// A Gaussian block x_k with precision R_k(theta) / v_k(theta), where
/// v_k = sigma^2 (times 1 - phi or phi for BYM2 parts) and R_k is either a
/// fixed structure or ar1(T, omega) kron `ar1_right`.
struct LatentComponent {
    std::string name;
    std::vector<std::string> labels;
    Eigen::MatrixXd structure;
    std::optional<std::size_t> ar1_omega;
    std::size_t ar1_length = 0;
    /// Right Kronecker factor for AR1 interactions; empty means scalar 1.
    Eigen::MatrixXd ar1_right;
    std::optional<std::size_t> sigma;
    /// Used when `sigma` is unset (fixed effects).
    double fixed_variance = 1.0;
    std::optional<std::size_t> mixing;
    MixingRole mixing_role = MixingRole::none;
    /// Rows of A with A x_k = 0.
    Eigen::MatrixXd constraints;

    std::size_t size() const { return labels.size(); }
};

/// A linear predictor: sum of loading * x[index] plus an offset.
struct PredictorCell {
    std::vector<std::pair<std::size_t, double>> loading;
    double offset = 0.0;
};

struct GaussianObservation {
    std::size_t cell = 0;
    double y = 0.0;
    double variance = 1.0;
};

struct CountObservation {
    std::size_t cell = 0;
    long deaths = 0;
    long trials = 0;
};

enum class Likelihood { gaussian, betabinomial };

struct LatentModel {
    std::vector<Hyperparameter> hypers;
    std::vector<LatentComponent> components;
    std::vector<PredictorCell> cells;
    Likelihood likelihood = Likelihood::gaussian;
    std::vector<GaussianObservation> gaussian;
    std::vector<CountObservation> counts;
    /// Hyperparameter holding the beta-binomial correlation rho.
    std::optional<std::size_t> overdispersion;

    std::size_t latent_size() const;
    /// Start of each component in the latent vector.
    std::vector<std::size_t> offsets() const;
    std::size_t component_index(const std::string &name) const;
    std::size_t component_offset(const std::string &name) const;
    std::size_t hyper_index(const std::string &name) const;
    bool has_component(const std::string &name) const;
    /// Stacked constraint matrix over the whole latent vector.
    Eigen::MatrixXd constraint_matrix() const;
    /// Throws std::invalid_argument describing the first problem found.
    void validate() const;
    /// Appends a cell and returns its index.
    std::size_t add_cell(PredictorCell cell);
};

/// Precision of one component at natural-scale hyperparameters.
Eigen::MatrixXd component_precision(const LatentModel &model, std::size_t k, std::span<const double> theta);
/// Prior variance factor v_k.
double component_variance(const LatentModel &model, std::size_t k, std::span<const double> theta);
/// Log-likelihood of all observations at latent x.
double log_likelihood(const LatentModel &model, const Eigen::VectorXd &x, std::span<const double> theta);

struct SamplerOptions {
    std::uint64_t seed = 1;
    std::size_t chains = 4;
    std::size_t n_draws = 5000; ///< per chain, after burn-in
    std::size_t n_burnin = 5000;
    double target_acceptance = 0.44;
    /// Elliptical slice refreshes of the latent field per iteration
    /// (beta-binomial only).
    std::size_t slice_steps = 1;
    bool parallel = true;
};

struct ComponentRange {
    std::string name;
    std::size_t start = 0;
    std::size_t size = 0;
    std::vector<std::string> labels;
};

struct PosteriorDraws {
    /// Rows are draws (chains stacked in order); latent columns first, then
    /// hyperparameters on the natural scale.
    Eigen::MatrixXd draws;
    std::vector<ComponentRange> components;
    std::vector<std::string> hyper_names;
    std::size_t hyper_start = 0;
    std::uint64_t seed = 0;
    std::size_t chains = 0;
    std::vector<std::vector<double>> acceptance; ///< [chain][hyper]; NaN when fixed
    std::vector<double> rhat;                    ///< split R-hat per hyper; NaN when fixed
    std::vector<double> ess;                     ///< effective sample size per hyper
    double max_constraint_residual = 0.0;

    std::size_t size() const { return static_cast<std::size_t>(draws.rows()); }
    const ComponentRange &component(const std::string &name) const;
    bool has_component(const std::string &name) const;
    std::size_t hyper_column(const std::string &name) const;
    std::vector<std::string> column_names() const;

    void write_csv(std::ostream &out) const;
    void write_csv(const std::filesystem::path &path) const;
    static PosteriorDraws read_csv(const std::filesystem::path &path);
    std::string diagnostics_json() const;
};

PosteriorDraws fit_gaussian_lgm(const LatentModel &model, const SamplerOptions &options);
PosteriorDraws fit_betabinomial_lgm(const LatentModel &model, const SamplerOptions &options);
/// Dispatches on the likelihood.
PosteriorDraws fit_lgm(const LatentModel &model, const SamplerOptions &options);

/// Split R-hat over chains of equal length (each split in half).
double split_rhat(const std::vector<std::vector<double>> &chains);
/// Multi-chain effective sample size with Geyer's initial positive sequence.
double effective_sample_size(const std::vector<std::vector<double>> &chains);

// ---------------------------------------------------------------------------
// Brute-force oracle

struct GridAxis {
    double lower = 0.0;
    double upper = 1.0;
    std::size_t points = 100;
    /// Edges that coincide with the edge of the parameter domain may carry
    /// mass without failing the coverage check.
    bool lower_is_domain_edge = false;
    bool upper_is_domain_edge = false;

    double node(std::size_t k) const;
    double step() const;
};

struct GridSpec {
    std::vector<GridAxis> latent; ///< one per latent coordinate
    std::vector<GridAxis> hyper;  ///< one per free hyperparameter, in order
};

struct GridMarginal {
    std::string name;
    GridAxis axis;
    std::vector<double> nodes;
    std::vector<double> mass; ///< sums to one
    double mean = 0.0;
    double sd = 0.0;
};

struct GridResult {
    std::vector<GridMarginal> latent;
    std::vector<GridMarginal> hyper;
};

/// Midpoint-rule tensor grid over at most three latent coordinates and two
/// free hyperparameters of an unconstrained model.
GridResult grid_oracle(const LatentModel &model, const GridSpec &spec);

/// Total variation between a grid marginal and draws, after merging the
/// grid cells into `bins` equal groups. Draws outside the grid count fully.
double total_variation(const GridMarginal &marginal, std::span<const double> draws, std::size_t bins = 20);

// ---------------------------------------------------------------------------

struct QuantitySummary {
    double mean = 0.0;
    double variance = 0.0;
    double median = 0.0;
    std::vector<double> quantiles;
};

/// Empirical summaries (type 7 quantiles) of transform(row) over draws.
/// The transform returns one value per quantity.
std::vector<QuantitySummary> summarize_draws(const PosteriorDraws &draws,
                                             const std::function<std::vector<double>(const Eigen::RowVectorXd &)> &transform,
                                             std::span<const double> probs);

/// Summaries of columns of a plain draw matrix.
QuantitySummary summarize_values(std::span<const double> values, std::span<const double> probs);

} // namespace sae
