// Command-line driver for the estimation pipeline:
// simulate -> births/counts -> direct -> aggregate/adjust -> smooth-* ->
// predict -> benchmark/diag -> map/hatch/ridge/tcp.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "sae/direct_estimation.hpp"
#include "sae/gmrf.hpp"
#include "sae/inference.hpp"
#include "sae/pipeline_io.hpp"
#include "sae/reports.hpp"
#include "sae/smoothing.hpp"
#include "sae/stats.hpp"
#include "sae/survey_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sae;

namespace {

struct Common {
    std::string config_path;
    std::uint64_t seed = 1;
};

struct FitFlags {
    std::size_t nsim = 1000;
    std::size_t burnin = 1000;
    std::size_t chains = 4;
};

PipelineConfig load_config(const Common &c) {
    return c.config_path.empty() ? PipelineConfig{} : PipelineConfig::read(c.config_path);
}

std::uint64_t default_seed() {
    if (const char *env = std::getenv("SAE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception &) {
            throw std::invalid_argument(fmt::format("SAE_SEED='{}' is not an unsigned integer", env));
        }
    }
    return 1;
}

void write_table(const csv::Table &t, const std::string &path) {
    if (path == "-") {
        t.write(std::cout);
    } else {
        t.write(fs::path(path));
    }
}

RegionGraph load_graph(const std::string &path) {
    if (path.ends_with(".geojson") || path.ends_with(".json")) {
        return RegionGraph::from_geo(GeoMap::read(path));
    }
    return RegionGraph::from_csv(fs::path(path));
}

LatentModelSpec load_spec(const std::string &path) {
    return path.empty() ? LatentModelSpec{} : LatentModelSpec::from_json(read_json(path));
}

SamplerOptions sampler_options(const Common &c, const FitFlags &f) {
    SamplerOptions o;
    o.seed = c.seed;
    o.chains = f.chains;
    o.n_draws = f.nsim;
    o.n_burnin = f.burnin;
    return o;
}

void save_fit(const fs::path &dir, const BuiltModel &built, const PosteriorDraws &draws) {
    fs::create_directories(dir);
    draws.write_csv(dir / "draws.csv");
    write_text(dir / "layout.json", built.layout.to_json().dump(2) + "\n");
    auto diag = json::parse(draws.diagnostics_json());
    diag["warnings"] = built.warnings;
    write_text(dir / "diagnostics.json", diag.dump(2) + "\n");
    for (const auto &w : built.warnings) {
        std::cerr << "warning: " << w << "\n";
    }
}

struct LoadedFit {
    ModelLayout layout;
    PosteriorDraws draws;
};

LoadedFit load_fit(const fs::path &dir) {
    return LoadedFit{ModelLayout::from_json(read_json(dir / "layout.json")), PosteriorDraws::read_csv(dir / "draws.csv")};
}

std::vector<PersonMonthRecord> person_months_from(const std::string &births, const PipelineConfig &config) {
    return expand_births(read_births(csv::Table::read(fs::path(births))), config.schema, config.periods);
}

std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

/// Smoothed direct fits become "overall" draws on the probability scale.
StratifiedDraws smooth_direct_draws(const LoadedFit &fit) {
    StratifiedDraws out;
    out.regions = fit.layout.regions;
    out.times = fit.layout.time_labels;
    out.strata = {"overall"};
    out.frames = {"frame"};
    out.time_observed = fit.layout.time_observed;
    out.values.resize(fit.draws.draws.rows(), static_cast<Eigen::Index>(out.regions.size() * out.times.size()));
    for (std::size_t i = 0; i < out.regions.size(); ++i) {
        for (std::size_t t = 0; t < out.times.size(); ++t) {
            out.values.col(static_cast<Eigen::Index>(out.cell(i, t, 0, 0))) =
                smooth_direct_predictor(fit.draws, fit.layout, i, t).unaryExpr([](double v) { return expit(v); });
        }
    }
    return out;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Small-area estimation of survey prevalence and child mortality"};
    app.require_subcommand(1);
    Common common;
    common.seed = 1;
    std::string command;

    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--config", common.config_path, "Periods and age bands (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "Random seed (default: SAE_SEED or 1)");
    };
    FitFlags fit_flags;
    auto add_fit = [&](CLI::App *sub) {
        sub->add_option("--nsim", fit_flags.nsim, "Posterior draws per chain");
        sub->add_option("--burnin", fit_flags.burnin, "Burn-in iterations per chain");
        sub->add_option("--chains", fit_flags.chains, "Number of chains");
    };

    // simulate
    auto *simulate = app.add_subcommand("simulate", "Synthetic stratified cluster survey with known truth");
    std::string sim_out;
    std::string survey_name = "S1";
    SampleDesign sample_design;
    simulate->add_option("--out-dir", sim_out, "Output directory")->required();
    simulate->add_option("--survey", survey_name, "Survey name");
    simulate->add_option("--urban-clusters", sample_design.urban_clusters, "Sampled urban clusters per region");
    simulate->add_option("--rural-clusters", sample_design.rural_clusters, "Sampled rural clusters per region");
    simulate->add_option("--households", sample_design.households_per_cluster, "Sampled households per cluster");
    add_common(simulate);

    // births
    auto *births = app.add_subcommand("births", "Expand birth records to person-months");
    std::string births_in;
    std::string out_path;
    births->add_option("--births", births_in, "Child records CSV")->required()->check(CLI::ExistingFile);
    births->add_option("--out", out_path, "Output CSV ('-' for stdout)")->required();
    add_common(births);

    // counts
    auto *counts = app.add_subcommand("counts", "Deaths and exposure per cluster, period and age band");
    std::string counts_survey;
    counts->add_option("--births", births_in, "Child records CSV")->required()->check(CLI::ExistingFile);
    counts->add_option("--survey", counts_survey, "Survey label for the rows");
    counts->add_option("--out", out_path, "Output CSV")->required();
    add_common(counts);

    // direct
    auto *direct = app.add_subcommand("direct", "Design-based direct estimates");
    std::vector<std::string> direct_births;
    std::vector<std::string> direct_surveys;
    std::string graph_path;
    std::string variance_method = "jackknife";
    double level = 0.95;
    direct->add_option("--births", direct_births, "Child records CSV, one per survey")->required()->check(CLI::ExistingFile);
    direct->add_option("--survey", direct_surveys, "Survey names, matching --births");
    direct->add_option("--graph", graph_path, "Adjacency CSV or GeoJSON giving the regions")->required();
    direct->add_option("--variance", variance_method, "jackknife or linearization")
        ->check(CLI::IsMember({"jackknife", "linearization"}));
    direct->add_option("--level", level, "Interval level");
    direct->add_option("--out", out_path, "Output CSV")->required();
    add_common(direct);

    // aggregate
    auto *aggregate = app.add_subcommand("aggregate", "Combine direct estimates across surveys");
    std::string direct_in;
    aggregate->add_option("--direct", direct_in, "Direct estimates CSV")->required()->check(CLI::ExistingFile);
    aggregate->add_option("--out", out_path, "Output CSV")->required();

    // adjust
    auto *adjust = app.add_subcommand("adjust", "Ratio adjustment of direct estimates");
    std::string ratios_in;
    std::string ratio_mode = "multiply";
    adjust->add_option("--direct", direct_in, "Direct estimates CSV")->required()->check(CLI::ExistingFile);
    adjust->add_option("--ratios", ratios_in, "Ratios CSV (years,survey,ratio)")->required()->check(CLI::ExistingFile);
    adjust->add_option("--mode", ratio_mode, "multiply, or divide for estimate/target ratios")
        ->check(CLI::IsMember({"multiply", "divide"}));
    adjust->add_option("--out", out_path, "Output CSV")->required();

    // smooth-direct
    auto *smooth_direct = app.add_subcommand("smooth-direct", "Area-level space-time smoothing of direct estimates");
    std::string spec_path;
    std::string fit_dir;
    bool national = false;
    smooth_direct->add_option("--direct", direct_in, "Direct estimates CSV")->required()->check(CLI::ExistingFile);
    smooth_direct->add_option("--graph", graph_path, "Adjacency CSV or GeoJSON");
    smooth_direct->add_flag("--national", national, "National model without spatial terms");
    smooth_direct->add_option("--spec", spec_path, "Model spec JSON")->check(CLI::ExistingFile);
    smooth_direct->add_option("--out-dir", fit_dir, "Fit directory")->required();
    add_common(smooth_direct);
    add_fit(smooth_direct);

    // smooth-cluster
    auto *smooth_cluster = app.add_subcommand("smooth-cluster", "Cluster-level beta-binomial space-time model");
    std::string counts_in;
    smooth_cluster->add_option("--counts", counts_in, "Counts CSV")->required()->check(CLI::ExistingFile);
    smooth_cluster->add_option("--graph", graph_path, "Adjacency CSV or GeoJSON");
    smooth_cluster->add_flag("--national", national, "National model without spatial terms");
    smooth_cluster->add_option("--spec", spec_path, "Model spec JSON")->check(CLI::ExistingFile);
    smooth_cluster->add_option("--out-dir", fit_dir, "Fit directory")->required();
    add_common(smooth_cluster);
    add_fit(smooth_cluster);

    // predict
    auto *predict = app.add_subcommand("predict", "Posterior summaries and draws of a fit");
    std::string props_in;
    std::string pred_out;
    predict->add_option("--fit", fit_dir, "Fit directory")->required()->check(CLI::ExistingDirectory);
    predict->add_option("--props", props_in, "Urban proportions CSV (region,year,frame,q_urban)")
        ->check(CLI::ExistingFile);
    predict->add_option("--level", level, "Interval level");
    predict->add_option("--out-dir", pred_out, "Output directory")->required();

    // benchmark
    auto *benchmark = app.add_subcommand("benchmark", "Ratios of national estimates to a target series");
    std::string estimates_in;
    std::string target_in;
    benchmark->add_option("--estimates", estimates_in, "Smoothed estimates CSV")->required()->check(CLI::ExistingFile);
    benchmark->add_option("--target", target_in, "Target CSV (years,mean)")->required()->check(CLI::ExistingFile);
    benchmark->add_option("--out", out_path, "Ratios CSV")->required();

    // diag
    auto *diag = app.add_subcommand("diag", "Posterior summaries of random effects");
    std::string field;
    diag->add_option("--fit", fit_dir, "Fit directory")->required()->check(CLI::ExistingDirectory);
    diag->add_option("--field", field, "time, space or spacetime")->required();
    diag->add_option("--level", level, "Interval level");
    diag->add_option("--out", out_path, "Output CSV")->required();

    // map / hatch
    std::string values_in;
    std::string geo_in;
    std::string years_list;
    std::string strata;
    MapOptions map_options;
    auto add_map = [&](CLI::App *sub) {
        sub->add_option("--values", values_in, "Estimates CSV")->required()->check(CLI::ExistingFile);
        sub->add_option("--geo", geo_in, "GeoJSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--years", years_list, "Comma-separated facets");
        sub->add_option("--strata", strata, "Stratum rows to plot (default: overall rows)");
        sub->add_option("--title", map_options.title, "Title");
        sub->add_flag("--per1000", map_options.per1000, "Display per 1000");
        sub->add_option("--out", out_path, "Output SVG")->required();
    };
    auto *map = app.add_subcommand("map", "Faceted choropleth");
    add_map(map);
    auto *hatch = app.add_subcommand("hatch", "Choropleth with uncertainty hatching");
    add_map(hatch);
    hatch->add_option("--lines-per-unit", map_options.lines_per_unit, "Hatch lines per unit interval width");

    // ridge
    auto *ridge = app.add_subcommand("ridge", "Posterior density ridges");
    std::string draws_in;
    std::string by = "year";
    RidgeOptions ridge_options;
    ridge->add_option("--draws", draws_in, "Long-format draws CSV")->required()->check(CLI::ExistingFile);
    ridge->add_option("--strata", strata, "Stratum to plot (default: overall)");
    ridge->add_option("--years", years_list, "Comma-separated years");
    ridge->add_option("--order-year", ridge_options.order_year, "Year ordering the regions");
    ridge->add_option("--by", by, "Panel per year or per region")->check(CLI::IsMember({"year", "region"}));
    ridge->add_option("--bandwidth", ridge_options.bandwidth, "Kernel bandwidth");
    ridge->add_option("--title", ridge_options.title, "Title");
    ridge->add_flag("--per1000", ridge_options.per1000, "Display per 1000");
    ridge->add_option("--out", out_path, "Output SVG")->required();

    // tcp
    auto *tcp = app.add_subcommand("tcp", "True classification probabilities");
    std::size_t intervals = 4;
    std::string thresholds_list;
    std::string summary_out;
    tcp->add_option("--draws", draws_in, "Long-format draws CSV")->required()->check(CLI::ExistingFile);
    tcp->add_option("--strata", strata, "Stratum (default: overall)");
    tcp->add_option("--years", years_list, "Comma-separated years");
    tcp->add_option("--intervals", intervals, "Number of intervals K");
    tcp->add_option("--thresholds", thresholds_list, "Explicit comma-separated thresholds");
    tcp->add_option("--out", out_path, "Per-region CSV")->required();
    tcp->add_option("--summary", summary_out, "Thresholds and ATCP (JSON)");

    try {
        common.seed = default_seed();
    } catch (const std::exception &e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << json{{"error", e.what()}, {"kind", e.get_name()}}.dump() << "\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    try {
        if (*simulate) {
            command = "simulate";
            const auto config = load_config(common);
            const fs::path dir = sim_out;
            fs::create_directories(dir);
            const auto geo_text = demo_geojson();
            write_text(dir / "map.geojson", geo_text);
            const auto geo = GeoMap::parse(geo_text);
            const auto graph = RegionGraph::from_geo(geo);
            {
                std::ofstream out{dir / "graph.csv"};
                graph.write_csv(out);
            }
            write_text(dir / "config.json", config.to_json().dump(2) + "\n");
            const SurveyPopulation population{demo_truth(graph.names(), config), FrameDesign{}, config.schema,
                                              config.periods, common.seed};
            std::mt19937_64 rng{common.seed ^ 0x5bd1e995ULL};
            births_table(population.sample(sample_design, rng)).write(dir / ("births_" + survey_name + ".csv"));
            truth_table(population.truth(), config).write(dir / "truth.csv");
            csv::Table props({"region", "year", "frame", "q_urban"});
            csv::Table target({"years", "mean"});
            for (const auto &r : graph.names()) {
                const double u = static_cast<double>(population.stratum_population(r + ".urban"));
                const double all = u + static_cast<double>(population.stratum_population(r + ".rural"));
                for (const auto &p : config.periods.labels()) {
                    props.add_row({r, p, "NA", csv::format_number(u / all)});
                }
            }
            props.write(dir / "props.csv");
            for (const auto &row : population.truth()) {
                if (row.region == national_label) {
                    target.add_row({config.periods.label(row.period), csv::format_number(row.u5mr)});
                }
            }
            target.write(dir / "target.csv");
        } else if (*births) {
            command = "births";
            const auto config = load_config(common);
            write_table(person_month_table(person_months_from(births_in, config), config), out_path);
        } else if (*counts) {
            command = "counts";
            const auto config = load_config(common);
            write_table(counts_table(aggregate_counts(person_months_from(births_in, config), counts_survey), config),
                        out_path);
        } else if (*direct) {
            command = "direct";
            const auto config = load_config(common);
            if (!direct_surveys.empty() && direct_surveys.size() != direct_births.size()) {
                throw std::invalid_argument("give one --survey name per --births file");
            }
            std::vector<NamedSurvey> surveys;
            for (std::size_t k = 0; k < direct_births.size(); ++k) {
                const auto name = direct_surveys.empty() ? fmt::format("S{}", k + 1) : direct_surveys[k];
                surveys.emplace_back(name, person_months_from(direct_births[k], config));
            }
            JackknifeConfig jk;
            jk.interval_level = level;
            jk.method = variance_method == "jackknife" ? VarianceMethod::jackknife : VarianceMethod::linearization;
            const auto graph = load_graph(graph_path);
            write_table(direct_table(direct_all(surveys, graph.names(), config.periods, config.schema, jk)), out_path);
        } else if (*aggregate) {
            command = "aggregate";
            write_table(direct_table(aggregate_surveys(read_direct(csv::Table::read(fs::path(direct_in))))), out_path);
        } else if (*adjust) {
            command = "adjust";
            const auto result = adjust_ratio(read_direct(csv::Table::read(fs::path(direct_in))),
                                             read_ratios(csv::Table::read(fs::path(ratios_in))),
                                             ratio_mode == "divide" ? RatioMode::divide : RatioMode::multiply);
            for (const auto &w : result.warnings) {
                std::cerr << "warning: " << w << "\n";
            }
            write_table(direct_table(result.estimates), out_path);
        } else if (*smooth_direct || *smooth_cluster) {
            command = *smooth_direct ? "smooth-direct" : "smooth-cluster";
            if (national == !graph_path.empty()) {
                throw std::invalid_argument("give either --graph or --national");
            }
            const auto config = load_config(common);
            const auto spec = load_spec(spec_path);
            std::optional<RegionGraph> graph;
            if (!national) {
                graph = load_graph(graph_path);
            }
            const RegionGraph *g = graph ? &*graph : nullptr;
            const auto built =
                *smooth_direct
                    ? build_smooth_direct(read_direct(csv::Table::read(fs::path(direct_in))), g,
                                          config.periods.labels(), spec)
                    : build_smooth_cluster(read_counts(csv::Table::read(fs::path(counts_in)), config), g,
                                           config.periods.labels(), spec, config.schema);
            const auto draws = fit_lgm(built.model, sampler_options(common, fit_flags));
            save_fit(fit_dir, built, draws);
            if (*smooth_direct) {
                smoothed_table(smoothed_direct_estimates(draws, built.layout)).write(fs::path(fit_dir) / "estimates.csv");
            }
        } else if (*predict) {
            command = "predict";
            const auto fit = load_fit(fit_dir);
            const fs::path dir = pred_out;
            fs::create_directories(dir);
            if (fit.layout.family == ModelFamily::smooth_direct) {
                smoothed_table(smoothed_direct_estimates(fit.draws, fit.layout, level)).write(dir / "estimates.csv");
                draws_table(smooth_direct_draws(fit)).write(dir / "draws.csv");
            } else {
                const auto stratified = predict_u5mr(fit.draws, fit.layout);
                const auto props = props_in.empty() ? std::vector<StrataProportions>{}
                                                    : read_proportions(csv::Table::read(fs::path(props_in)));
                const auto overall = aggregate_strata(stratified, props);
                auto rows = summarize_stratified(stratified, level);
                csv::Table draws = draws_table(stratified);
                if (overall) {
                    const auto o = summarize_overall(*overall, level);
                    rows.insert(rows.begin(), o.begin(), o.end());
                    const auto od = draws_table(*overall);
                    for (std::size_t r = 0; r < od.rows(); ++r) {
                        std::vector<std::string> row;
                        for (std::size_t c = 0; c < od.cols(); ++c) {
                            row.push_back(od.cell(r, c));
                        }
                        draws.add_row(std::move(row));
                    }
                } else {
                    std::cerr << "warning: no strata proportions; overall estimates are empty\n";
                }
                smoothed_table(rows).write(dir / "estimates.csv");
                draws.write(dir / "draws.csv");
            }
        } else if (*benchmark) {
            command = "benchmark";
            const auto target_table = csv::Table::read(fs::path(target_in));
            std::vector<std::pair<std::string, double>> target;
            for (std::size_t r = 0; r < target_table.rows(); ++r) {
                target.emplace_back(target_table.cell(r, "years"), target_table.number(r, "mean"));
            }
            auto estimates = read_smoothed(csv::Table::read(fs::path(estimates_in)));
            const auto result = benchmark_to_series(estimates, target);
            for (const auto &w : result.warnings) {
                std::cerr << "warning: " << w << "\n";
            }
            write_table(ratio_table(result.ratios), out_path);
        } else if (*diag) {
            command = "diag";
            const auto fit = load_fit(fit_dir);
            write_table(diagnostics_table(extract_diagnostics(fit.draws, fit.layout, field, level)), out_path);
        } else if (*map || *hatch) {
            command = *map ? "map" : "hatch";
            const auto values = read_map_values(csv::Table::read(fs::path(values_in)), split_list(years_list), strata);
            const auto geo = GeoMap::read(geo_in);
            write_text(out_path, *map ? render_map(values, geo, map_options) : render_hatch(values, geo, map_options));
        } else if (*ridge || *tcp) {
            command = *ridge ? "ridge" : "tcp";
            auto cells = read_cell_draws(csv::Table::read(fs::path(draws_in)), strata.empty() ? "overall" : strata);
            const auto years = split_list(years_list);
            if (!years.empty()) {
                std::erase_if(cells, [&](const CellDraws &c) {
                    return std::find(years.begin(), years.end(), c.year) == years.end();
                });
            }
            if (*ridge) {
                ridge_options.by_year = by == "year";
                write_text(out_path, render_ridge(cells, ridge_options));
            } else {
                std::vector<double> thresholds;
                for (const auto &s : split_list(thresholds_list)) {
                    thresholds.push_back(std::stod(s));
                }
                const auto result = thresholds.empty() ? tcp_classify(cells, intervals) : tcp_classify(cells, thresholds);
                write_table(tcp_table(result), out_path);
                if (!summary_out.empty()) {
                    write_text(summary_out, tcp_summary(result).dump(2) + "\n");
                }
            }
        }
    } catch (const std::exception &e) {
        std::cerr << json{{"error", e.what()}, {"command", command}}.dump() << "\n";
        return 1;
    }
    return 0;
}
