#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sae/survey_data.hpp"

namespace sae {

/// Design-based summary of one area x period cell. Probability-scale bounds
/// come from a symmetric interval on the logit scale.
struct DirectStats {
    double mean = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double logit_est = 0.0;
    double var_est = 0.0;

    double logit_prec() const { return 1.0 / var_est; }
};

/// Builds the stats from a logit-scale estimate and variance.
DirectStats stats_from_logit(double logit_est, double var_est, double level = 0.95);

struct DirectEstimate {
    std::string region; // "All" for national
    std::string period;
    std::optional<std::string> survey;
    /// Absent when the cell has no deaths, no exposure in some band, or a
    /// single cluster.
    std::optional<DirectStats> stats;
};

inline constexpr const char *national_label = "All";

struct HTResult {
    double estimate = 0.0;
    /// All outcomes equal, so the logit is undefined.
    bool degenerate = false;
};

/// Weighted mean sum(w y) / sum(w).
HTResult ht_estimate(std::span<const double> y, std::span<const double> w);

/// var_p / (p (1 - p))^2, or nothing when p is 0 or 1.
std::optional<double> logit_delta_variance(double p, double var_p);

enum class VarianceMethod {
    /// Leave-one-cluster-out jackknife of the logit composite.
    jackknife,
    /// Taylor linearisation of the weighted mean; single-band schemas only.
    linearization,
};

struct JackknifeConfig {
    double interval_level = 0.95;
    VarianceMethod method = VarianceMethod::jackknife;
};

/// Per-band hazards, the synthetic-cohort composite and its variance.
struct CompositeEstimate {
    std::vector<double> band_hazard;
    double estimate = 0.0;
    double var_logit = 0.0;
    /// Variance on the probability scale from the same replicates.
    double var_prob = 0.0;
    std::size_t clusters = 0;
};

/// Returns nothing if any band lacks exposure, there are no deaths, or the
/// variance is undefined (fewer than two clusters). The variance may be zero.
std::optional<CompositeEstimate> estimate_composite(std::span<const PersonMonthRecord> rows,
                                                    const AgeBandSchema &schema,
                                                    const JackknifeConfig &config = {});

/// Direct synthetic-cohort estimate for the rows of one area x period;
/// nothing when the composite is missing or its variance is zero.
std::optional<DirectStats> direct_u5mr(std::span<const PersonMonthRecord> rows, const AgeBandSchema &schema,
                                       const JackknifeConfig &config = {});

/// Linearised variance of the weighted mean of a binary outcome with
/// stratified cluster sampling. Strata with a single cluster contribute zero.
double linearized_variance(std::span<const PersonMonthRecord> rows, double p_hat);

using NamedSurvey = std::pair<std::string, std::vector<PersonMonthRecord>>;

/// Survey x region x period direct estimates with a national "All" row per
/// survey x period (listed first). Throws on region labels not in `regions`.
std::vector<DirectEstimate> direct_all(const std::vector<NamedSurvey> &surveys,
                                       const std::vector<std::string> &regions, const PeriodScheme &periods,
                                       const AgeBandSchema &schema, const JackknifeConfig &config = {});

/// Inverse-variance combination on the logit scale across surveys within
/// each region x period. Missing survey rows are skipped.
std::vector<DirectEstimate> aggregate_surveys(const std::vector<DirectEstimate> &direct, double level = 0.95);

struct AdjustmentRatio {
    std::string period;
    std::optional<std::string> survey;
    double ratio = 1.0;
};

enum class RatioMode {
    /// adjusted = estimate x ratio
    multiply,
    /// adjusted = estimate / ratio, for ratios expressed as estimate / target
    divide,
};

struct AdjustResult {
    std::vector<DirectEstimate> estimates;
    /// Rows left unadjusted because no ratio matched.
    std::vector<std::string> warnings;
};

/// Scales mean and interval bounds by the matching ratio (capped below 1)
/// and recomputes the logit variance from the adjusted interval.
AdjustResult adjust_ratio(const std::vector<DirectEstimate> &direct, const std::vector<AdjustmentRatio> &ratios,
                          RatioMode mode = RatioMode::multiply, double level = 0.95);

} // namespace sae
