#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sae {

/// One child from a full birth history. Times are integer month indices
/// counted from a caller-chosen epoch.
struct ChildRecord {
    std::string cluster;
    std::string household;
    std::string stratum;
    std::string region;
    double weight = 1.0;
    int birth = 0;
    /// Interview month. Exposure ends the month before it.
    int observation_end = 0;
    std::optional<int> death_age;
};

/// Monthly age bands for the discrete hazards model.
///
/// `month_cuts` are the exclusive upper ends of each band, so the default
/// {1, 12, 24, 36, 48, 60} gives the bands [0,1), [1,12), ..., [48,60).
/// `trend_cuts` groups bands that share a temporal trend; every trend cut
/// must also be a month cut.
class AgeBandSchema {
  public:
    explicit AgeBandSchema(std::vector<int> month_cuts, std::vector<int> trend_cuts = {});

    /// Under-five bands with trend groups {0}, {1-11}, {12-59}.
    static AgeBandSchema under_five();
    /// Single neonatal band "0".
    static AgeBandSchema neonatal();

    std::size_t bands() const { return cuts_.size(); }
    std::size_t trend_groups() const { return trend_cuts_.size(); }
    int final_cut() const { return cuts_.back(); }

    const std::vector<int> &month_cuts() const { return cuts_; }
    const std::vector<int> &trend_cuts() const { return trend_cuts_; }

    /// Band index a[m] (zero-based) of completed month m.
    std::size_t band_of_month(int month) const;
    /// Trend group index a*[m] (zero-based) of completed month m.
    std::size_t trend_group_of_month(int month) const;
    std::size_t trend_group_of_band(std::size_t band) const;
    /// Months per band, z[a].
    int band_length(std::size_t band) const;
    std::vector<int> band_lengths() const;

    const std::string &band_label(std::size_t band) const { return labels_[band]; }
    const std::vector<std::string> &band_labels() const { return labels_; }
    const std::string &trend_label(std::size_t group) const { return trend_labels_[group]; }
    /// Band index of a label such as "1-11"; throws if unknown.
    std::size_t band_index(const std::string &label) const;

  private:
    std::vector<int> cuts_;
    std::vector<int> trend_cuts_;
    std::vector<std::string> labels_;
    std::vector<std::string> trend_labels_;
};

/// Calendar periods as half-open month ranges [cuts[p], cuts[p+1]).
class PeriodScheme {
  public:
    PeriodScheme(std::vector<int> month_cuts, std::vector<std::string> labels);

    /// Consecutive periods of `years_per_period` years from `first_year`,
    /// with month 0 at January of `epoch_year`. Labels are "YYYY" for
    /// single years and "yy-yy" otherwise (e.g. "85-89").
    static PeriodScheme from_years(int first_year, int last_year_exclusive, int years_per_period,
                                   int epoch_year);

    std::size_t size() const { return labels_.size(); }
    const std::vector<int> &cuts() const { return cuts_; }
    const std::vector<std::string> &labels() const { return labels_; }
    const std::string &label(std::size_t p) const { return labels_[p]; }
    std::optional<std::size_t> period_of_month(int month) const;
    std::size_t index(const std::string &label) const;

  private:
    std::vector<int> cuts_;
    std::vector<std::string> labels_;
};

std::string period_label_for_years(int first_year, int last_year);

/// One child-month of exposure.
struct PersonMonthRecord {
    std::string cluster;
    std::string household;
    std::string stratum;
    std::string region;
    std::size_t period = 0;
    std::size_t band = 0;
    double weight = 1.0;
    bool died = false;
};

/// Deaths and person-months for one cluster x period x age band.
struct ClusterCounts {
    std::string cluster;
    std::string stratum;
    std::string region;
    std::size_t period = 0;
    std::size_t band = 0;
    long deaths = 0;
    long exposure = 0;
    std::string survey;
};

/// Expands birth histories to person-month rows. Throws
/// std::invalid_argument naming the record index when a child's exposure
/// falls outside the period span.
std::vector<PersonMonthRecord> expand_births(const std::vector<ChildRecord> &records,
                                             const AgeBandSchema &schema,
                                             const PeriodScheme &periods);

/// Deaths and exposure per cluster, stratum, region, period and band.
/// Groups without person-months are not emitted.
std::vector<ClusterCounts> aggregate_counts(const std::vector<PersonMonthRecord> &rows,
                                            const std::string &survey = {});

/// Keeps rows whose period index is in `keep`. Used to trim partial years.
std::vector<PersonMonthRecord> filter_periods(const std::vector<PersonMonthRecord> &rows,
                                              const std::vector<std::size_t> &keep);

// ---------------------------------------------------------------------------
// Synthetic stratified two-stage cluster surveys

/// Monthly hazards by region x period x band for rural children; urban
/// hazards are `urban_hazard_ratio` times the rural ones.
struct HazardTruth {
    std::vector<std::string> regions;
    std::vector<std::vector<std::vector<double>>> rural_hazard; // [region][period][band]
    double urban_hazard_ratio = 1.0;
};

/// Finite population layout. Every region has one urban and one rural
/// stratum, labelled "<region>.urban" and "<region>.rural".
struct FrameDesign {
    int urban_clusters = 30;
    int rural_clusters = 60;
    int households_per_cluster = 40;
    double children_per_household = 2.0;
};

/// Two-stage sample: clusters by simple random sampling within stratum,
/// then households by simple random sampling within cluster.
struct SampleDesign {
    int urban_clusters = 8;
    int rural_clusters = 8;
    int households_per_cluster = 20;
};

struct TruthRow {
    std::string region; // "All" for national
    std::size_t period = 0;
    std::vector<double> band_hazard;
    double u5mr = 0.0;
};

class SurveyPopulation {
  public:
    /// Simulates every child in the frame, including death times drawn from
    /// the hazards. Births are uniform over the period span and the interview
    /// month is the final period cut.
    SurveyPopulation(HazardTruth truth, FrameDesign frame, AgeBandSchema schema,
                     PeriodScheme periods, std::uint64_t seed);

    /// Draws one sample. Selection depends only on strata, never on outcomes.
    std::vector<ChildRecord> sample(const SampleDesign &design, std::mt19937_64 &rng) const;

    /// Finite-population synthetic-cohort U5MR per region x period and for
    /// the nation ("All").
    const std::vector<TruthRow> &truth() const { return truth_; }

    const std::vector<std::string> &regions() const { return truth_spec_.regions; }
    const AgeBandSchema &schema() const { return schema_; }
    const PeriodScheme &periods() const { return periods_; }
    /// Children in the population per stratum label.
    std::size_t stratum_population(const std::string &stratum) const;

  private:
    struct Household {
        std::vector<ChildRecord> children;
    };
    struct Cluster {
        std::string id;
        std::vector<Household> households;
    };
    struct Stratum {
        std::string label;
        std::string region;
        bool urban = false;
        std::vector<Cluster> clusters;
    };

    HazardTruth truth_spec_;
    FrameDesign frame_;
    AgeBandSchema schema_;
    PeriodScheme periods_;
    std::vector<Stratum> strata_;
    std::vector<TruthRow> truth_;
};

struct SimulatedSurvey {
    std::vector<ChildRecord> records;
    std::vector<TruthRow> truth;
};

/// Builds a population and draws one sample from it.
SimulatedSurvey simulate_survey(const HazardTruth &truth, const FrameDesign &frame,
                                const SampleDesign &design, const AgeBandSchema &schema,
                                const PeriodScheme &periods, std::uint64_t seed);

/// Synthetic-cohort composite 1 - prod (1 - q_a)^z_a.
double synthetic_cohort(const std::vector<double> &band_hazard, const std::vector<int> &band_lengths);

} // namespace sae
