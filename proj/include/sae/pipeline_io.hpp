#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sae/csv.hpp"
#include "sae/direct_estimation.hpp"
#include "sae/reports.hpp"
#include "sae/smoothing.hpp"
#include "sae/survey_data.hpp"

namespace sae {

/// Calendar periods and age bands shared by the pipeline stages.
struct PipelineConfig {
    int epoch_year = 1990;
    PeriodScheme periods = PeriodScheme::from_years(1990, 2020, 5, 1990);
    AgeBandSchema schema = AgeBandSchema::under_five();

    /// Keys: epoch_year; periods {first_year, last_year, years_per_period}
    /// or {cuts, labels}; age {month_cuts, trend_cuts}. Missing keys keep
    /// the defaults.
    static PipelineConfig from_json(const nlohmann::json &j);
    static PipelineConfig read(const std::filesystem::path &path);
    nlohmann::json to_json() const;
};

nlohmann::json read_json(const std::filesystem::path &path);
void write_text(const std::filesystem::path &path, const std::string &text);

// Child records: cluster,household,stratum,region,weight,birth,obs_end,death_age
csv::Table births_table(const std::vector<ChildRecord> &records);
std::vector<ChildRecord> read_births(const csv::Table &table);

// Person-months: cluster,household,strata,region,years,age,weight,died
csv::Table person_month_table(const std::vector<PersonMonthRecord> &rows, const PipelineConfig &config);
std::vector<PersonMonthRecord> read_person_months(const csv::Table &table, const PipelineConfig &config);

// Counts: cluster,region,strata,years,age,Y,total,survey
csv::Table counts_table(const std::vector<ClusterCounts> &rows, const PipelineConfig &config);
std::vector<ClusterCounts> read_counts(const csv::Table &table, const PipelineConfig &config);

// Direct estimates: region,years,mean,lower,upper,logit.est,var.est,survey,logit.prec
csv::Table direct_table(const std::vector<DirectEstimate> &rows);
std::vector<DirectEstimate> read_direct(const csv::Table &table);

// Ratios: years,survey,ratio
csv::Table ratio_table(const std::vector<AdjustmentRatio> &rows);
std::vector<AdjustmentRatio> read_ratios(const csv::Table &table);

// Smoothed estimates: region,years,strata,median,lower,upper,logit.mean,logit.var,is.projection
csv::Table smoothed_table(const std::vector<SmoothedEstimate> &rows);
std::vector<SmoothedEstimate> read_smoothed(const csv::Table &table);

// Strata proportions: region,year,frame,q_urban
std::vector<StrataProportions> read_proportions(const csv::Table &table);

// Truth: region,years,u5mr
csv::Table truth_table(const std::vector<TruthRow> &rows, const PipelineConfig &config);

// Diagnostics: field,component,group,label,median,lower,upper,mean
csv::Table diagnostics_table(const std::vector<DiagnosticRow> &rows);

/// Long-format draws: region,years,strata,draw,value.
csv::Table draws_table(const StratifiedDraws &draws);
csv::Table draws_table(const OverallDraws &overall);
/// Draws grouped per region x year; `stratum` filters the strata column
/// (empty keeps rows whose strata cell is "overall").
std::vector<CellDraws> read_cell_draws(const csv::Table &table, const std::string &stratum = "overall");

// TCP: region,years,interval,tcp,mass.1..mass.K
csv::Table tcp_table(const TCPResult &result);
nlohmann::json tcp_summary(const TCPResult &result);

/// Map values from a smoothed or direct table: region,years,median|mean,lower,upper.
std::vector<MapValue> read_map_values(const csv::Table &table, const std::vector<std::string> &years = {},
                                      const std::string &stratum = {});

// ---------------------------------------------------------------------------
// Bundled synthetic setting

/// Four regions: northern spans the top and borders the other three, which
/// sit side by side (western, central, eastern).
std::string demo_geojson();

/// Rural monthly hazards that differ by region and decline over periods;
/// urban hazards are 0.8 times the rural ones.
HazardTruth demo_truth(const std::vector<std::string> &regions, const PipelineConfig &config);

} // namespace sae
