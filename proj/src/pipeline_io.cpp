#include "sae/pipeline_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "sae/stats.hpp"

namespace sae {

namespace {

using csv::format_number;

std::string text_or_na(const std::optional<std::string> &s) { return s ? *s : std::string{"NA"}; }

std::optional<std::string> optional_text(const std::string &cell) {
    if (csv::is_missing(cell)) {
        return std::nullopt;
    }
    return cell;
}

std::string cell_or(const csv::Table &t, std::size_t r, const char *name, const std::string &fallback = {}) {
    return t.has_column(name) ? t.cell(r, name) : fallback;
}

std::string bool_text(bool b) { return b ? "TRUE" : "FALSE"; }

bool parse_bool(const std::string &s) {
    if (s == "TRUE" || s == "true" || s == "1") {
        return true;
    }
    if (s == "FALSE" || s == "false" || s == "0") {
        return false;
    }
    throw std::invalid_argument(fmt::format("expected a boolean, got '{}'", s));
}

} // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json &j) {
    PipelineConfig c;
    c.epoch_year = j.value("epoch_year", c.epoch_year);
    if (j.contains("periods")) {
        const auto &p = j.at("periods");
        if (p.contains("cuts")) {
            c.periods = PeriodScheme(p.at("cuts").get<std::vector<int>>(), p.at("labels").get<std::vector<std::string>>());
        } else {
            c.periods = PeriodScheme::from_years(p.at("first_year").get<int>(), p.at("last_year").get<int>(),
                                                 p.value("years_per_period", 5), c.epoch_year);
        }
    } else if (j.contains("epoch_year")) {
        c.periods = PeriodScheme::from_years(c.epoch_year, c.epoch_year + 30, 5, c.epoch_year);
    }
    if (j.contains("age")) {
        const auto &a = j.at("age");
        c.schema = AgeBandSchema(a.at("month_cuts").get<std::vector<int>>(),
                                 a.value("trend_cuts", std::vector<int>{}));
    }
    return c;
}

PipelineConfig PipelineConfig::read(const std::filesystem::path &path) { return from_json(read_json(path)); }

nlohmann::json PipelineConfig::to_json() const {
    return {{"epoch_year", epoch_year},
            {"periods", {{"cuts", periods.cuts()}, {"labels", periods.labels()}}},
            {"age", {{"month_cuts", schema.month_cuts()}, {"trend_cuts", schema.trend_cuts()}}}};
}

nlohmann::json read_json(const std::filesystem::path &path) {
    std::ifstream in{path};
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error &e) {
        throw std::invalid_argument(fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
    }
}

void write_text(const std::filesystem::path &path, const std::string &text) {
    std::ofstream out{path, std::ios::binary};
    if (!out) {
        throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    }
    out << text;
}

// ---------------------------------------------------------------------------

csv::Table births_table(const std::vector<ChildRecord> &records) {
    csv::Table t({"cluster", "household", "stratum", "region", "weight", "birth", "obs_end", "death_age"});
    for (const auto &r : records) {
        t.add_row({r.cluster, r.household, r.stratum, r.region, format_number(r.weight), std::to_string(r.birth),
                   std::to_string(r.observation_end), r.death_age ? std::to_string(*r.death_age) : "NA"});
    }
    return t;
}

std::vector<ChildRecord> read_births(const csv::Table &t) {
    std::vector<ChildRecord> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        ChildRecord c;
        c.cluster = t.cell(r, "cluster");
        c.household = cell_or(t, r, "household", c.cluster);
        c.stratum = cell_or(t, r, "stratum");
        c.region = t.cell(r, "region");
        c.weight = t.number(r, "weight");
        c.birth = static_cast<int>(t.integer(r, "birth"));
        c.observation_end = static_cast<int>(t.integer(r, "obs_end"));
        if (t.has_column("death_age") && !csv::is_missing(t.cell(r, "death_age"))) {
            c.death_age = static_cast<int>(t.integer(r, "death_age"));
        }
        out.push_back(std::move(c));
    }
    return out;
}

csv::Table person_month_table(const std::vector<PersonMonthRecord> &rows, const PipelineConfig &config) {
    csv::Table t({"cluster", "household", "strata", "region", "years", "age", "weight", "died"});
    for (const auto &r : rows) {
        t.add_row({r.cluster, r.household, r.stratum, r.region, config.periods.label(r.period),
                   config.schema.band_label(r.band), format_number(r.weight), r.died ? "1" : "0"});
    }
    return t;
}

std::vector<PersonMonthRecord> read_person_months(const csv::Table &t, const PipelineConfig &config) {
    std::vector<PersonMonthRecord> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        PersonMonthRecord p;
        p.cluster = t.cell(r, "cluster");
        p.household = cell_or(t, r, "household", p.cluster);
        p.stratum = cell_or(t, r, "strata");
        p.region = t.cell(r, "region");
        p.period = config.periods.index(t.cell(r, "years"));
        p.band = config.schema.band_index(t.cell(r, "age"));
        p.weight = t.number(r, "weight");
        p.died = t.integer(r, "died") != 0;
        out.push_back(std::move(p));
    }
    return out;
}

csv::Table counts_table(const std::vector<ClusterCounts> &rows, const PipelineConfig &config) {
    csv::Table t({"cluster", "region", "strata", "years", "age", "Y", "total", "survey"});
    for (const auto &r : rows) {
        t.add_row({r.cluster, r.region, csv::is_missing(r.stratum) ? "NA" : r.stratum, config.periods.label(r.period),
                   config.schema.band_label(r.band), std::to_string(r.deaths), std::to_string(r.exposure),
                   r.survey.empty() ? "NA" : r.survey});
    }
    return t;
}

std::vector<ClusterCounts> read_counts(const csv::Table &t, const PipelineConfig &config) {
    std::vector<ClusterCounts> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        ClusterCounts c;
        c.cluster = t.cell(r, "cluster");
        c.region = t.cell(r, "region");
        c.stratum = cell_or(t, r, "strata");
        if (csv::is_missing(c.stratum)) {
            c.stratum.clear();
        }
        c.period = config.periods.index(t.cell(r, "years"));
        c.band = config.schema.band_index(t.cell(r, "age"));
        c.deaths = static_cast<long>(t.integer(r, "Y"));
        c.exposure = static_cast<long>(t.integer(r, "total"));
        c.survey = cell_or(t, r, "survey");
        if (csv::is_missing(c.survey)) {
            c.survey.clear();
        }
        if (c.exposure <= 0 || c.deaths < 0 || c.deaths > c.exposure) {
            throw std::invalid_argument(fmt::format("count row {} needs 0 <= Y <= total and total > 0", r + 1));
        }
        out.push_back(std::move(c));
    }
    return out;
}

csv::Table direct_table(const std::vector<DirectEstimate> &rows) {
    csv::Table t({"region", "years", "mean", "lower", "upper", "logit.est", "var.est", "survey", "logit.prec"});
    for (const auto &d : rows) {
        if (d.stats) {
            const auto &s = *d.stats;
            t.add_row({d.region, d.period, format_number(s.mean), format_number(s.lower), format_number(s.upper),
                       format_number(s.logit_est), format_number(s.var_est), text_or_na(d.survey),
                       format_number(s.logit_prec())});
        } else {
            t.add_row({d.region, d.period, "NA", "NA", "NA", "NA", "NA", text_or_na(d.survey), "NA"});
        }
    }
    return t;
}

std::vector<DirectEstimate> read_direct(const csv::Table &t) {
    std::vector<DirectEstimate> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        DirectEstimate d;
        d.region = t.cell(r, "region");
        d.period = t.cell(r, "years");
        if (t.has_column("survey")) {
            d.survey = optional_text(t.cell(r, "survey"));
        }
        const auto logit = t.optional_number(r, "logit.est");
        const auto var = t.optional_number(r, "var.est");
        if (logit && var) {
            DirectStats s;
            s.logit_est = *logit;
            s.var_est = *var;
            s.mean = t.optional_number(r, "mean").value_or(expit(*logit));
            s.lower = t.optional_number(r, "lower").value_or(s.mean);
            s.upper = t.optional_number(r, "upper").value_or(s.mean);
            d.stats = s;
        }
        out.push_back(std::move(d));
    }
    return out;
}

csv::Table ratio_table(const std::vector<AdjustmentRatio> &rows) {
    csv::Table t({"years", "survey", "ratio"});
    for (const auto &r : rows) {
        t.add_row({r.period, text_or_na(r.survey), format_number(r.ratio)});
    }
    return t;
}

std::vector<AdjustmentRatio> read_ratios(const csv::Table &t) {
    std::vector<AdjustmentRatio> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        AdjustmentRatio a;
        a.period = t.cell(r, "years");
        if (t.has_column("survey")) {
            a.survey = optional_text(t.cell(r, "survey"));
        }
        a.ratio = t.number(r, "ratio");
        out.push_back(std::move(a));
    }
    return out;
}

csv::Table smoothed_table(const std::vector<SmoothedEstimate> &rows) {
    csv::Table t({"region", "years", "strata", "median", "lower", "upper", "logit.mean", "logit.var", "is.projection"});
    for (const auto &e : rows) {
        t.add_row({e.region, e.period, text_or_na(e.stratum), format_number(e.median), format_number(e.lower),
                   format_number(e.upper), format_number(e.logit_mean), format_number(e.logit_var),
                   bool_text(e.is_projection)});
    }
    return t;
}

std::vector<SmoothedEstimate> read_smoothed(const csv::Table &t) {
    std::vector<SmoothedEstimate> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        SmoothedEstimate e;
        e.region = t.cell(r, "region");
        e.period = t.cell(r, "years");
        if (t.has_column("strata")) {
            e.stratum = optional_text(t.cell(r, "strata"));
        }
        e.median = t.number(r, "median");
        e.lower = t.number(r, "lower");
        e.upper = t.number(r, "upper");
        e.logit_mean = t.has_column("logit.mean") ? t.number(r, "logit.mean") : 0.0;
        e.logit_var = t.has_column("logit.var") ? t.number(r, "logit.var") : 0.0;
        e.is_projection = t.has_column("is.projection") && parse_bool(t.cell(r, "is.projection"));
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<StrataProportions> read_proportions(const csv::Table &t) {
    std::vector<StrataProportions> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        StrataProportions p;
        p.region = t.cell(r, "region");
        p.year = t.cell(r, "year");
        p.frame = cell_or(t, r, "frame");
        if (csv::is_missing(p.frame)) {
            p.frame.clear();
        }
        p.q = t.number(r, "q_urban");
        out.push_back(std::move(p));
    }
    return out;
}

csv::Table truth_table(const std::vector<TruthRow> &rows, const PipelineConfig &config) {
    csv::Table t({"region", "years", "u5mr"});
    for (const auto &r : rows) {
        t.add_row({r.region, config.periods.label(r.period), format_number(r.u5mr)});
    }
    return t;
}

csv::Table diagnostics_table(const std::vector<DiagnosticRow> &rows) {
    csv::Table t({"field", "component", "group", "label", "median", "lower", "upper", "mean"});
    for (const auto &d : rows) {
        t.add_row({d.field, d.component, d.group.empty() ? "NA" : d.group, d.label.empty() ? "NA" : d.label,
                   format_number(d.median), format_number(d.lower), format_number(d.upper), format_number(d.mean)});
    }
    return t;
}

csv::Table draws_table(const StratifiedDraws &draws) {
    csv::Table t({"region", "years", "strata", "draw", "value"});
    for (std::size_t i = 0; i < draws.regions.size(); ++i) {
        for (std::size_t y = 0; y < draws.times.size(); ++y) {
            for (std::size_t s = 0; s < draws.strata.size(); ++s) {
                for (std::size_t f = 0; f < draws.frames.size(); ++f) {
                    const auto col = static_cast<Eigen::Index>(draws.cell(i, y, s, f));
                    const auto label = draws.frames.size() > 1 ? draws.strata[s] + ":" + draws.frames[f] : draws.strata[s];
                    for (Eigen::Index d = 0; d < draws.values.rows(); ++d) {
                        t.add_row({draws.regions[i], draws.times[y], label, std::to_string(d + 1),
                                   format_number(draws.values(d, col))});
                    }
                }
            }
        }
    }
    return t;
}

csv::Table draws_table(const OverallDraws &overall) {
    const Eigen::MatrixXd combined = combine_frames(overall);
    const auto T = overall.times.size();
    csv::Table t({"region", "years", "strata", "draw", "value"});
    for (std::size_t i = 0; i < overall.regions.size(); ++i) {
        for (std::size_t y = 0; y < T; ++y) {
            const auto col = static_cast<Eigen::Index>(i * T + y);
            for (Eigen::Index d = 0; d < combined.rows(); ++d) {
                t.add_row({overall.regions[i], overall.times[y], "overall", std::to_string(d + 1),
                           format_number(combined(d, col))});
            }
        }
    }
    return t;
}

std::vector<CellDraws> read_cell_draws(const csv::Table &t, const std::string &stratum) {
    std::vector<CellDraws> out;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (t.has_column("strata") && t.cell(r, "strata") != stratum) {
            continue;
        }
        const auto key = std::make_pair(t.cell(r, "region"), t.cell(r, "years"));
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, out.size()).first;
            out.push_back(CellDraws{key.first, key.second, {}});
        }
        out[it->second].values.push_back(t.number(r, "value"));
    }
    if (out.empty()) {
        throw std::invalid_argument(fmt::format("no draws with strata '{}'", stratum));
    }
    return out;
}

csv::Table tcp_table(const TCPResult &result) {
    std::vector<std::string> header{"region", "years", "interval", "tcp"};
    for (std::size_t k = 0; k < result.intervals(); ++k) {
        header.push_back(fmt::format("mass.{}", k + 1));
    }
    csv::Table t(header);
    for (const auto &c : result.cells) {
        std::vector<std::string> row{c.region, c.year, std::to_string(c.interval + 1), format_number(c.tcp)};
        for (double m : c.mass) {
            row.push_back(format_number(m));
        }
        t.add_row(std::move(row));
    }
    return t;
}

nlohmann::json tcp_summary(const TCPResult &result) {
    return {{"thresholds", result.thresholds}, {"intervals", result.intervals()}, {"atcp", result.atcp}};
}

std::vector<MapValue> read_map_values(const csv::Table &t, const std::vector<std::string> &years,
                                      const std::string &stratum) {
    const char *value_col = t.has_column("median") ? "median" : "mean";
    std::vector<MapValue> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto &year = t.cell(r, "years");
        if (!years.empty() && std::find(years.begin(), years.end(), year) == years.end()) {
            continue;
        }
        if (t.has_column("strata")) {
            const auto &s = t.cell(r, "strata");
            const bool overall_row = csv::is_missing(s);
            if (stratum.empty() ? !overall_row : s != stratum) {
                continue;
            }
        }
        if (t.cell(r, "region") == national_label) {
            continue;
        }
        const auto v = t.optional_number(r, value_col);
        if (!v) {
            continue;
        }
        MapValue m;
        m.region = t.cell(r, "region");
        m.facet = year;
        m.value = *v;
        m.lower = t.optional_number(r, "lower").value_or(*v);
        m.upper = t.optional_number(r, "upper").value_or(*v);
        out.push_back(std::move(m));
    }
    if (out.empty()) {
        throw std::invalid_argument("no map values selected");
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string demo_geojson() {
    auto feature = [](const char *name, const char *ring) {
        return fmt::format("{{\"type\":\"Feature\",\"properties\":{{\"name\":\"{}\"}},"
                           "\"geometry\":{{\"type\":\"Polygon\",\"coordinates\":[[{}]]}}}}",
                           name, ring);
    };
    return "{\"type\":\"FeatureCollection\",\"features\":[" +
           feature("northern", "[0,2],[1,2],[2,2],[3,2],[3,3],[0,3],[0,2]") + "," +
           feature("western", "[0,0],[1,0],[1,2],[0,2],[0,0]") + "," +
           feature("central", "[1,0],[2,0],[2,2],[1,2],[1,0]") + "," +
           feature("eastern", "[2,0],[3,0],[3,2],[2,2],[2,0]") + "]}\n";
}

HazardTruth demo_truth(const std::vector<std::string> &regions, const PipelineConfig &config) {
    HazardTruth truth;
    truth.regions = regions;
    truth.urban_hazard_ratio = 0.8;
    const auto &schema = config.schema;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const double region_factor = 0.8 + 0.15 * static_cast<double>(i % 4);
        std::vector<std::vector<double>> per_period;
        for (std::size_t t = 0; t < config.periods.size(); ++t) {
            const double trend = std::pow(0.9, static_cast<double>(t));
            std::vector<double> bands;
            for (std::size_t b = 0; b < schema.bands(); ++b) {
                // Neonatal month, then infancy, then childhood.
                const int start = b == 0 ? 0 : schema.month_cuts()[b - 1];
                const double base = start == 0 ? 0.03 : start < 12 ? 0.004 : 0.0012;
                bands.push_back(base * region_factor * trend);
            }
            per_period.push_back(std::move(bands));
        }
        truth.rural_hazard.push_back(std::move(per_period));
    }
    return truth;
}

} // namespace sae
