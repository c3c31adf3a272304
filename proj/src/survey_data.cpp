#include "sae/survey_data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include <fmt/format.h>

namespace sae {

namespace {

std::string band_text(int lo, int hi_exclusive) {
    if (hi_exclusive - lo == 1) {
        return std::to_string(lo);
    }
    return fmt::format("{}-{}", lo, hi_exclusive - 1);
}

void require_increasing(const std::vector<int> &cuts, const char *what) {
    if (cuts.empty()) {
        throw std::invalid_argument(fmt::format("{} must not be empty", what));
    }
    for (std::size_t i = 1; i < cuts.size(); ++i) {
        if (cuts[i] <= cuts[i - 1]) {
            throw std::invalid_argument(fmt::format("{} must be strictly increasing", what));
        }
    }
}

} // namespace

AgeBandSchema::AgeBandSchema(std::vector<int> month_cuts, std::vector<int> trend_cuts)
    : cuts_{std::move(month_cuts)}, trend_cuts_{std::move(trend_cuts)} {
    require_increasing(cuts_, "month cuts");
    if (cuts_.front() <= 0) {
        throw std::invalid_argument("month cuts must be positive");
    }
    if (trend_cuts_.empty()) {
        trend_cuts_ = cuts_;
    }
    require_increasing(trend_cuts_, "trend cuts");
    if (trend_cuts_.back() != cuts_.back()) {
        throw std::invalid_argument("trend cuts must end at the final month cut");
    }
    for (int c : trend_cuts_) {
        if (std::find(cuts_.begin(), cuts_.end(), c) == cuts_.end()) {
            throw std::invalid_argument(fmt::format("trend cut {} is not a month cut", c));
        }
    }
    int lo = 0;
    for (int c : cuts_) {
        labels_.push_back(band_text(lo, c));
        lo = c;
    }
    lo = 0;
    for (int c : trend_cuts_) {
        trend_labels_.push_back(band_text(lo, c));
        lo = c;
    }
}

AgeBandSchema AgeBandSchema::under_five() { return AgeBandSchema{{1, 12, 24, 36, 48, 60}, {1, 12, 60}}; }

AgeBandSchema AgeBandSchema::neonatal() { return AgeBandSchema{{1}, {1}}; }

std::size_t AgeBandSchema::band_of_month(int month) const {
    if (month < 0 || month >= cuts_.back()) {
        throw std::out_of_range(fmt::format("month {} outside the age bands", month));
    }
    auto it = std::upper_bound(cuts_.begin(), cuts_.end(), month);
    return static_cast<std::size_t>(it - cuts_.begin());
}

std::size_t AgeBandSchema::trend_group_of_month(int month) const {
    if (month < 0 || month >= trend_cuts_.back()) {
        throw std::out_of_range(fmt::format("month {} outside the age bands", month));
    }
    auto it = std::upper_bound(trend_cuts_.begin(), trend_cuts_.end(), month);
    return static_cast<std::size_t>(it - trend_cuts_.begin());
}

std::size_t AgeBandSchema::trend_group_of_band(std::size_t band) const {
    const int first_month = band == 0 ? 0 : cuts_[band - 1];
    return trend_group_of_month(first_month);
}

int AgeBandSchema::band_length(std::size_t band) const {
    return band == 0 ? cuts_[0] : cuts_[band] - cuts_[band - 1];
}

std::vector<int> AgeBandSchema::band_lengths() const {
    std::vector<int> z;
    for (std::size_t a = 0; a < bands(); ++a) {
        z.push_back(band_length(a));
    }
    return z;
}

std::size_t AgeBandSchema::band_index(const std::string &label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) {
        throw std::invalid_argument(fmt::format("unknown age band '{}'", label));
    }
    return static_cast<std::size_t>(it - labels_.begin());
}

PeriodScheme::PeriodScheme(std::vector<int> month_cuts, std::vector<std::string> labels)
    : cuts_{std::move(month_cuts)}, labels_{std::move(labels)} {
    require_increasing(cuts_, "period cuts");
    if (labels_.size() + 1 != cuts_.size()) {
        throw std::invalid_argument("need exactly one period label per pair of consecutive cuts");
    }
}

std::string period_label_for_years(int first_year, int last_year) {
    if (first_year == last_year) {
        return std::to_string(first_year);
    }
    return fmt::format("{:02d}-{:02d}", first_year % 100, last_year % 100);
}

PeriodScheme PeriodScheme::from_years(int first_year, int last_year_exclusive, int years_per_period,
                                      int epoch_year) {
    if (years_per_period <= 0 || last_year_exclusive <= first_year ||
        (last_year_exclusive - first_year) % years_per_period != 0) {
        throw std::invalid_argument("year range must split into whole periods");
    }
    std::vector<int> cuts;
    std::vector<std::string> labels;
    for (int y = first_year; y <= last_year_exclusive; y += years_per_period) {
        cuts.push_back((y - epoch_year) * 12);
        if (y < last_year_exclusive) {
            labels.push_back(period_label_for_years(y, y + years_per_period - 1));
        }
    }
    return PeriodScheme{std::move(cuts), std::move(labels)};
}

std::optional<std::size_t> PeriodScheme::period_of_month(int month) const {
    if (month < cuts_.front() || month >= cuts_.back()) {
        return std::nullopt;
    }
    auto it = std::upper_bound(cuts_.begin(), cuts_.end(), month);
    return static_cast<std::size_t>(it - cuts_.begin()) - 1;
}

std::size_t PeriodScheme::index(const std::string &label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) {
        throw std::invalid_argument(fmt::format("unknown period label '{}'", label));
    }
    return static_cast<std::size_t>(it - labels_.begin());
}

std::vector<PersonMonthRecord> expand_births(const std::vector<ChildRecord> &records,
                                             const AgeBandSchema &schema,
                                             const PeriodScheme &periods) {
    std::vector<PersonMonthRecord> rows;
    const int final_cut = schema.final_cut();
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto &child = records[r];
        if (child.observation_end < child.birth) {
            throw std::invalid_argument(fmt::format("record {}: interview precedes birth", r));
        }
        if (!(child.weight > 0.0)) {
            throw std::invalid_argument(fmt::format("record {}: weight must be positive", r));
        }
        if (child.death_age && (*child.death_age < 0 || *child.death_age > child.observation_end - child.birth)) {
            throw std::invalid_argument(fmt::format("record {}: death age outside the observed window", r));
        }
        if (child.birth < periods.cuts().front() || child.observation_end > periods.cuts().back()) {
            throw std::invalid_argument(fmt::format("record {}: outside the period cuts", r));
        }
        // Months of life 0..last_age are exposed; the interview month is not.
        int last_age = std::min(child.observation_end - child.birth - 1, final_cut - 1);
        bool dies = false;
        if (child.death_age && *child.death_age <= last_age) {
            last_age = *child.death_age;
            dies = true;
        }
        for (int age = 0; age <= last_age; ++age) {
            const int month = child.birth + age;
            PersonMonthRecord pm;
            pm.cluster = child.cluster;
            pm.household = child.household;
            pm.stratum = child.stratum;
            pm.region = child.region;
            pm.period = *periods.period_of_month(month);
            pm.band = schema.band_of_month(age);
            pm.weight = child.weight;
            pm.died = dies && age == last_age;
            rows.push_back(std::move(pm));
        }
    }
    return rows;
}

std::vector<ClusterCounts> aggregate_counts(const std::vector<PersonMonthRecord> &rows,
                                            const std::string &survey) {
    using Key = std::tuple<std::string, std::string, std::string, std::size_t, std::size_t>;
    std::map<Key, std::pair<long, long>> groups;
    for (const auto &pm : rows) {
        auto &[deaths, exposure] = groups[Key{pm.cluster, pm.region, pm.stratum, pm.period, pm.band}];
        deaths += pm.died ? 1 : 0;
        exposure += 1;
    }
    std::vector<ClusterCounts> out;
    out.reserve(groups.size());
    for (const auto &[key, value] : groups) {
        ClusterCounts c;
        std::tie(c.cluster, c.region, c.stratum, c.period, c.band) = key;
        c.deaths = value.first;
        c.exposure = value.second;
        c.survey = survey;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<PersonMonthRecord> filter_periods(const std::vector<PersonMonthRecord> &rows,
                                              const std::vector<std::size_t> &keep) {
    std::vector<PersonMonthRecord> out;
    for (const auto &pm : rows) {
        if (std::find(keep.begin(), keep.end(), pm.period) != keep.end()) {
            out.push_back(pm);
        }
    }
    return out;
}

double synthetic_cohort(const std::vector<double> &band_hazard, const std::vector<int> &band_lengths) {
    if (band_hazard.size() != band_lengths.size()) {
        throw std::invalid_argument("hazards and band lengths differ in size");
    }
    double log_survival = 0.0;
    for (std::size_t a = 0; a < band_hazard.size(); ++a) {
        log_survival += band_lengths[a] * std::log1p(-band_hazard[a]);
    }
    return -std::expm1(log_survival);
}

// ---------------------------------------------------------------------------

SurveyPopulation::SurveyPopulation(HazardTruth truth, FrameDesign frame, AgeBandSchema schema,
                                   PeriodScheme periods, std::uint64_t seed)
    : truth_spec_{std::move(truth)}, frame_{frame}, schema_{std::move(schema)}, periods_{std::move(periods)} {
    const auto n_regions = truth_spec_.regions.size();
    if (n_regions == 0 || frame_.urban_clusters <= 0 || frame_.rural_clusters <= 0 ||
        frame_.households_per_cluster <= 0) {
        throw std::invalid_argument("degenerate frame: every stratum needs clusters and households");
    }
    if (truth_spec_.rural_hazard.size() != n_regions) {
        throw std::invalid_argument("hazard table must have one entry per region");
    }
    for (const auto &per_region : truth_spec_.rural_hazard) {
        if (per_region.size() != periods_.size()) {
            throw std::invalid_argument("hazard table must have one entry per period");
        }
        for (const auto &per_period : per_region) {
            if (per_period.size() != schema_.bands()) {
                throw std::invalid_argument("hazard table must have one entry per age band");
            }
            for (double h : per_period) {
                if (!(h > 0.0 && h < 1.0) || !(h * truth_spec_.urban_hazard_ratio < 1.0)) {
                    throw std::invalid_argument("hazards must lie in (0, 1)");
                }
            }
        }
    }

    std::mt19937_64 rng{seed};
    const int first = periods_.cuts().front();
    const int interview = periods_.cuts().back();
    std::uniform_int_distribution<int> birth_month{first, interview - 1};
    std::poisson_distribution<int> n_children{frame_.children_per_household};
    std::uniform_real_distribution<double> unif{0.0, 1.0};

    const auto n_periods = periods_.size();
    const auto n_bands = schema_.bands();
    // deaths and exposure per [region][period][band]
    std::vector<double> deaths(n_regions * n_periods * n_bands, 0.0);
    std::vector<double> exposure(deaths.size(), 0.0);
    auto cell = [&](std::size_t i, std::size_t t, std::size_t a) { return (i * n_periods + t) * n_bands + a; };

    int cluster_counter = 0;
    for (std::size_t i = 0; i < n_regions; ++i) {
        for (bool urban : {true, false}) {
            Stratum stratum;
            stratum.region = truth_spec_.regions[i];
            stratum.urban = urban;
            stratum.label = stratum.region + (urban ? ".urban" : ".rural");
            const double ratio = urban ? truth_spec_.urban_hazard_ratio : 1.0;
            const int n_clusters = urban ? frame_.urban_clusters : frame_.rural_clusters;
            for (int c = 0; c < n_clusters; ++c) {
                Cluster cluster;
                cluster.id = std::to_string(++cluster_counter);
                for (int h = 0; h < frame_.households_per_cluster; ++h) {
                    Household household;
                    const int kids = n_children(rng);
                    for (int k = 0; k < kids; ++k) {
                        ChildRecord child;
                        child.cluster = cluster.id;
                        child.household = fmt::format("{}-{}", cluster.id, h + 1);
                        child.stratum = stratum.label;
                        child.region = stratum.region;
                        child.birth = birth_month(rng);
                        child.observation_end = interview;
                        const int last_age = std::min(interview - child.birth - 1, schema_.final_cut() - 1);
                        for (int age = 0; age <= last_age; ++age) {
                            const auto t = *periods_.period_of_month(child.birth + age);
                            const auto a = schema_.band_of_month(age);
                            const double hazard = ratio * truth_spec_.rural_hazard[i][t][a];
                            exposure[cell(i, t, a)] += 1.0;
                            if (unif(rng) < hazard) {
                                deaths[cell(i, t, a)] += 1.0;
                                child.death_age = age;
                                break;
                            }
                        }
                        household.children.push_back(std::move(child));
                    }
                    cluster.households.push_back(std::move(household));
                }
                stratum.clusters.push_back(std::move(cluster));
            }
            strata_.push_back(std::move(stratum));
        }
    }

    const auto z = schema_.band_lengths();
    for (std::size_t t = 0; t < n_periods; ++t) {
        TruthRow national{"All", t, std::vector<double>(n_bands, 0.0), 0.0};
        for (std::size_t a = 0; a < n_bands; ++a) {
            double d = 0.0;
            double e = 0.0;
            for (std::size_t i = 0; i < n_regions; ++i) {
                d += deaths[cell(i, t, a)];
                e += exposure[cell(i, t, a)];
            }
            national.band_hazard[a] = e > 0.0 ? d / e : 0.0;
        }
        national.u5mr = synthetic_cohort(national.band_hazard, z);
        truth_.push_back(std::move(national));
    }
    for (std::size_t i = 0; i < n_regions; ++i) {
        for (std::size_t t = 0; t < n_periods; ++t) {
            TruthRow row{truth_spec_.regions[i], t, std::vector<double>(n_bands, 0.0), 0.0};
            for (std::size_t a = 0; a < n_bands; ++a) {
                const double e = exposure[cell(i, t, a)];
                row.band_hazard[a] = e > 0.0 ? deaths[cell(i, t, a)] / e : 0.0;
            }
            row.u5mr = synthetic_cohort(row.band_hazard, z);
            truth_.push_back(std::move(row));
        }
    }
}

namespace {

/// Indices of a simple random sample of `n` out of `N`, in ascending order.
std::vector<std::size_t> srs(std::size_t N, std::size_t n, std::mt19937_64 &rng) {
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t k = 0; k < n; ++k) {
        std::uniform_int_distribution<std::size_t> pick{k, N - 1};
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace

std::vector<ChildRecord> SurveyPopulation::sample(const SampleDesign &design, std::mt19937_64 &rng) const {
    if (design.urban_clusters <= 0 || design.rural_clusters <= 0 || design.households_per_cluster <= 0) {
        throw std::invalid_argument("degenerate design: sample sizes must be positive");
    }
    std::vector<ChildRecord> out;
    for (const auto &stratum : strata_) {
        const auto N = stratum.clusters.size();
        const auto n = static_cast<std::size_t>(stratum.urban ? design.urban_clusters : design.rural_clusters);
        const auto M = static_cast<std::size_t>(frame_.households_per_cluster);
        const auto m = static_cast<std::size_t>(design.households_per_cluster);
        if (n > N || m > M) {
            throw std::invalid_argument(fmt::format("stratum {}: sample larger than frame", stratum.label));
        }
        const double weight = (static_cast<double>(N) / static_cast<double>(n)) *
                              (static_cast<double>(M) / static_cast<double>(m));
        for (auto c : srs(N, n, rng)) {
            const auto &cluster = stratum.clusters[c];
            for (auto h : srs(M, m, rng)) {
                for (auto child : cluster.households[h].children) {
                    child.weight = weight;
                    out.push_back(std::move(child));
                }
            }
        }
    }
    return out;
}

std::size_t SurveyPopulation::stratum_population(const std::string &stratum) const {
    std::size_t n = 0;
    for (const auto &s : strata_) {
        if (s.label != stratum) {
            continue;
        }
        for (const auto &c : s.clusters) {
            for (const auto &h : c.households) {
                n += h.children.size();
            }
        }
    }
    return n;
}

SimulatedSurvey simulate_survey(const HazardTruth &truth, const FrameDesign &frame,
                                const SampleDesign &design, const AgeBandSchema &schema,
                                const PeriodScheme &periods, std::uint64_t seed) {
    SurveyPopulation population{truth, frame, schema, periods, seed};
    std::mt19937_64 rng{seed ^ 0x9e3779b97f4a7c15ULL};
    return SimulatedSurvey{population.sample(design, rng), population.truth()};
}

} // namespace sae
