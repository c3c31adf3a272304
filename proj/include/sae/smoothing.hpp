#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sae/direct_estimation.hpp"
#include "sae/gmrf.hpp"
#include "sae/inference.hpp"
#include "sae/pc_priors.hpp"
#include "sae/survey_data.hpp"

namespace sae {

enum class TemporalModel { none, rw1, rw2, ar1 };
enum class SpatialModel { bym2, iid, none };

TemporalModel parse_temporal_model(const std::string &name);
std::string temporal_model_name(TemporalModel m);

/// Model menu shared by the area-level and cluster-level families.
struct LatentModelSpec {
    TemporalModel time_model = TemporalModel::rw2;
    /// Interaction temporal model; defaults to `time_model`.
    std::optional<TemporalModel> st_time_model;
    /// Knorr-Held interaction; none drops the space-time term.
    std::optional<InteractionType> type_st = InteractionType::I;
    /// Fixed linear trend alongside rw2 / ar1 main effects.
    bool linear_trend = true;
    /// Unstructured temporal effects epsilon_t in the model.
    bool time_unstruct = true;
    /// Whether epsilon_t enters predictions; unset picks the family default
    /// (included for smoothed direct, excluded for cluster models).
    std::optional<bool> predict_time_unstruct;
    SpatialModel spatial = SpatialModel::bym2;
    bool random_slopes = false;
    PCSlopePrior slope_prior;

    bool yearly = false;
    int m = 1;
    /// First calendar year of the yearly grid (yearly mode only).
    int first_year = 0;

    bool stratified = true;
    bool time_invariant_strata = false;
    bool survey_effect = false;
    /// Frame label per survey; surveys not listed share the default frame.
    std::map<std::string, std::string> survey_frame;
    /// BIAS_{k,t} ratios entered as log offsets.
    std::vector<AdjustmentRatio> bias;

    PCSigmaPrior pc_sigma;
    double pc_phi_u = 0.5;
    double pc_phi_alpha = 2.0 / 3.0;
    double pc_cor_u = 0.7;
    double pc_cor_alpha = 0.9;
    OverdispersionPrior overdispersion;

    TemporalModel interaction_time_model() const { return st_time_model.value_or(time_model); }
    /// Throws std::invalid_argument on inconsistent choices.
    void validate() const;

    static LatentModelSpec from_json(const nlohmann::json &j);
    nlohmann::json to_json() const;
};

enum class ModelFamily { smooth_direct, cluster };

/// Everything needed to interpret draws of a fitted model.
struct ModelLayout {
    ModelFamily family = ModelFamily::smooth_direct;
    LatentModelSpec spec;
    std::vector<std::string> regions; ///< {"All"} in national mode
    bool national = false;
    std::vector<std::string> period_labels;
    std::vector<std::string> time_labels; ///< years in yearly mode, else periods
    std::vector<bool> time_observed;
    std::vector<std::string> strata; ///< {"urban", "rural"} or {"all"}
    std::vector<std::string> frames;
    std::vector<int> month_cuts;
    std::vector<int> trend_cuts;

    AgeBandSchema schema() const;
    std::size_t region_index(const std::string &name) const;
    std::size_t time_index(const std::string &label) const;
    /// Time position scaled to [-0.5, 0.5].
    double scaled_time(std::size_t t) const;
    bool include_time_unstruct() const;

    static ModelLayout from_json(const nlohmann::json &j);
    nlohmann::json to_json() const;
};

struct BuiltModel {
    LatentModel model;
    ModelLayout layout;
    std::vector<std::string> warnings;
};

/// Area-level model on logit direct estimates with known variances. A null
/// graph selects national mode ("All" rows only, no spatial terms).
BuiltModel build_smooth_direct(const std::vector<DirectEstimate> &direct, const RegionGraph *graph,
                               const std::vector<std::string> &period_labels, const LatentModelSpec &spec);

/// Cluster-level beta-binomial model on per-cluster death counts.
BuiltModel build_smooth_cluster(const std::vector<ClusterCounts> &counts, const RegionGraph *graph,
                                const std::vector<std::string> &period_labels, const LatentModelSpec &spec,
                                const AgeBandSchema &schema);

/// Stratum of a count row label ("urban" or "rural"), from the label's
/// suffix; nothing for unrecognised labels.
std::optional<std::string> stratum_kind(const std::string &label);

struct SmoothedEstimate {
    std::string region;
    std::string period;
    std::optional<std::string> stratum;
    double median = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double logit_mean = 0.0;
    double logit_var = 0.0;
    bool is_projection = false;
};

/// Per-draw linear predictor of a smoothed direct model for region x time.
Eigen::VectorXd smooth_direct_predictor(const PosteriorDraws &draws, const ModelLayout &layout, std::size_t region,
                                        std::size_t time);

/// Posterior summaries of the smoothed direct predictor, one row per
/// region x time (plus per period averages in yearly mode).
std::vector<SmoothedEstimate> smoothed_direct_estimates(const PosteriorDraws &draws, const ModelLayout &layout,
                                                        double level = 0.95);

/// Per-draw U5MR by region x time x stratum x frame.
struct StratifiedDraws {
    std::vector<std::string> regions;
    std::vector<std::string> times;
    std::vector<std::string> strata;
    std::vector<std::string> frames;
    std::vector<bool> time_observed;
    /// Columns indexed by cell(); rows are draws.
    Eigen::MatrixXd values;

    std::size_t cell(std::size_t region, std::size_t time, std::size_t stratum, std::size_t frame) const;
};

/// 1 - prod_a (1 - expit(predictor_a))^z[a] per draw; survey effects and
/// bias offsets are left out.
StratifiedDraws predict_u5mr(const PosteriorDraws &draws, const ModelLayout &layout);

/// Hazard-scale predictor of one band, per draw.
Eigen::VectorXd cluster_predictor(const PosteriorDraws &draws, const ModelLayout &layout, std::size_t region,
                                  std::size_t time, std::size_t band, std::size_t stratum, std::size_t frame);

struct StrataProportions {
    std::string region;
    std::string year;
    double q = 0.0; ///< urban share
    std::string frame;
};

/// Per-draw overall values by region x time x frame.
struct OverallDraws {
    std::vector<std::string> regions;
    std::vector<std::string> times;
    std::vector<std::string> frames;
    std::vector<bool> time_observed;
    Eigen::MatrixXd values;

    std::size_t cell(std::size_t region, std::size_t time, std::size_t frame) const;
};

/// q * urban + (1 - q) * rural per draw. Without proportions the overall
/// output is absent, except in unstratified mode where it equals the single
/// stratum.
std::optional<OverallDraws> aggregate_strata(const StratifiedDraws &stratified,
                                             const std::vector<StrataProportions> &props);

/// Inverse posterior-variance weights on the logit scale.
std::vector<double> frame_weights(const std::vector<double> &logit_variances);

/// Meta-analysis combination across frames; returns draws by region x time.
Eigen::MatrixXd combine_frames(const OverallDraws &overall);

std::vector<SmoothedEstimate> summarize_stratified(const StratifiedDraws &draws, double level = 0.95);
/// Summaries of frame-combined overall draws.
std::vector<SmoothedEstimate> summarize_overall(const OverallDraws &overall, double level = 0.95);

struct BenchmarkResult {
    std::vector<AdjustmentRatio> ratios;
    std::vector<std::string> warnings;
};

/// ratio_t = model median_t / target_t for national estimates.
BenchmarkResult benchmark_to_series(const std::vector<SmoothedEstimate> &estimates,
                                    const std::vector<std::pair<std::string, double>> &target);

struct DiagnosticRow {
    std::string field;
    std::string component; ///< e.g. "RW2", "IID", "Total"
    std::string group;     ///< age group, stratum or empty
    std::string label;     ///< time label, region or region:time
    double median = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double mean = 0.0;
};

/// Labelled summaries of random effects for field time, space or spacetime.
std::vector<DiagnosticRow> extract_diagnostics(const PosteriorDraws &draws, const ModelLayout &layout,
                                               const std::string &field, double level = 0.95);

} // namespace sae
