#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "sae/pipeline_io.hpp"

using namespace sae;
namespace fs = std::filesystem;

namespace {

csv::Table reparse(const csv::Table &t) {
    std::ostringstream out;
    t.write(out);
    std::istringstream in(out.str());
    return csv::Table::parse(in);
}

struct Run {
    int status = -1;
    std::string output;
};

/// Runs the CLI with stderr folded into the captured output.
Run cli(const std::string &args) {
    const std::string command = std::string(SAE_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE *pipe = popen(command.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (const auto n = std::fread(buf, 1, sizeof buf, pipe)) {
        r.output.append(buf, n);
    }
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

fs::path scratch(const std::string &name) {
    const auto dir = fs::temp_directory_path() / ("sae_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("CSV quoting") {
    csv::Table t({"a", "b"});
    t.add_row({"x,y", "say \"hi\""});
    t.add_row({"", "NA"});
    const auto back = reparse(t);
    CHECK(back.cell(0, "a") == "x,y");
    CHECK(back.cell(0, "b") == "say \"hi\"");
    CHECK_FALSE(back.optional_number(1, "a").has_value());
    CHECK_FALSE(back.optional_number(1, "b").has_value());
    CHECK_THROWS_AS(back.column("c"), std::invalid_argument);
    CHECK_THROWS_AS(t.add_row({"1"}), std::invalid_argument);
    CHECK(csv::format_number(0.1) == "0.1");
}

TEST_CASE("table round trips") {
    const PipelineConfig config;
    SUBCASE("births") {
        ChildRecord c;
        c.cluster = "c1";
        c.household = "h1";
        c.stratum = "north.urban";
        c.region = "north";
        c.weight = 1.25;
        c.birth = 14;
        c.observation_end = 80;
        c.death_age = 3;
        ChildRecord alive = c;
        alive.death_age = std::nullopt;
        const auto back = read_births(reparse(births_table({c, alive})));
        REQUIRE(back.size() == 2);
        CHECK(back[0].weight == 1.25);
        CHECK(back[0].death_age == 3);
        CHECK_FALSE(back[1].death_age.has_value());
        CHECK(back[1].observation_end == 80);
    }
    SUBCASE("counts") {
        ClusterCounts row{"c7", "north.rural", "north", 2, 3, 1, 36, "S2"};
        const auto table = counts_table({row}, config);
        CHECK(table.cell(0, "years") == "00-04");
        CHECK(table.cell(0, "age") == "24-35");
        const auto back = read_counts(reparse(table), config);
        REQUIRE(back.size() == 1);
        CHECK(back[0].period == 2);
        CHECK(back[0].band == 3);
        CHECK(back[0].deaths == 1);
        CHECK(back[0].exposure == 36);
        CHECK(back[0].survey == "S2");
    }
    SUBCASE("direct estimates") {
        const std::vector<DirectEstimate> rows{{"north", "90-94", std::string("S1"), stats_from_logit(-2.2, 0.04)},
                                               {"south", "90-94", std::string("S1"), std::nullopt}};
        const auto table = direct_table(rows);
        for (const char *col : {"region", "years", "mean", "lower", "upper", "logit.est", "var.est", "survey", "logit.prec"}) {
            CHECK(table.has_column(col));
        }
        const auto back = read_direct(reparse(table));
        REQUIRE(back.size() == 2);
        CHECK(back[0].stats->logit_est == -2.2);
        CHECK(back[0].stats->var_est == 0.04);
        CHECK_FALSE(back[1].stats.has_value());
        CHECK(*back[1].survey == "S1");
    }
    SUBCASE("ratios") {
        const std::vector<AdjustmentRatio> rows{{"90-94", std::nullopt, 1.1}, {"95-99", std::string("S1"), 0.9}};
        const auto back = read_ratios(reparse(ratio_table(rows)));
        REQUIRE(back.size() == 2);
        CHECK_FALSE(back[0].survey.has_value());
        CHECK(back[1].ratio == 0.9);
    }
    SUBCASE("smoothed estimates and map values") {
        SmoothedEstimate e{"north", "90-94", std::nullopt, 0.08, 0.06, 0.1, -2.4, 0.02, false};
        SmoothedEstimate u = e;
        u.stratum = "urban";
        u.median = 0.05;
        SmoothedEstimate later = e;
        later.period = "95-99";
        later.is_projection = true;
        const auto table = smoothed_table({e, u, later});
        const auto back = read_smoothed(reparse(table));
        REQUIRE(back.size() == 3);
        CHECK(back[1].stratum == "urban");
        CHECK(back[2].is_projection);
        const auto overall = read_map_values(table);
        CHECK(overall.size() == 2);
        const auto urban = read_map_values(table, {}, "urban");
        REQUIRE(urban.size() == 1);
        CHECK(urban[0].value == 0.05);
        CHECK(read_map_values(table, {"95-99"}).size() == 1);
    }
}

TEST_CASE("pipeline config") {
    const PipelineConfig d;
    CHECK(d.periods.size() == 6);
    CHECK(d.schema.bands() == 6);
    const auto back = PipelineConfig::from_json(d.to_json());
    CHECK(back.to_json() == d.to_json());
    const auto custom = PipelineConfig::from_json(
        nlohmann::json{{"periods", {{"first_year", 2000}, {"last_year", 2010}, {"years_per_period", 2}}}});
    CHECK(custom.periods.size() == 5);
    CHECK(custom.periods.label(0) == "00-01");
    const auto nmr = PipelineConfig::from_json(nlohmann::json{{"age", {{"month_cuts", {1}}, {"trend_cuts", {1}}}}});
    CHECK(nmr.schema.bands() == 1);
}

TEST_CASE("bundled geometry and truth") {
    const auto geo = GeoMap::parse(demo_geojson());
    CHECK(geo.features().size() == 4);
    const PipelineConfig config;
    const auto truth = demo_truth({"central", "eastern", "northern", "western"}, config);
    REQUIRE(truth.rural_hazard.size() == 4);
    CHECK(truth.rural_hazard[0].size() == config.periods.size());
    CHECK(truth.urban_hazard_ratio == 0.8);
    CHECK(truth.rural_hazard[0][0][0] > truth.rural_hazard[0].back()[0]);
}

TEST_CASE("CLI exit codes") {
    const auto dir = scratch("cli");
    SUBCASE("missing required flag") {
        const auto r = cli("direct --births nowhere.csv");
        CHECK(r.status == 2);
        CHECK(r.output.find("\"kind\"") != std::string::npos);
    }
    SUBCASE("unknown subcommand") {
        CHECK(cli("frobnicate").status == 2);
    }
    SUBCASE("runtime error reports JSON") {
        const auto bad = dir / "bad.csv";
        std::ofstream(bad) << "cluster,region\nc1,north\n";
        const auto r = cli("counts --births " + bad.string() + " --out " + (dir / "out.csv").string());
        CHECK(r.status == 1);
        CHECK(r.output.find("\"command\":\"counts\"") != std::string::npos);
        CHECK(r.output.find("\"error\"") != std::string::npos);
    }
    SUBCASE("simulate writes its artifacts") {
        const auto r = cli("simulate --out-dir " + (dir / "sim").string() +
                           " --urban-clusters 2 --rural-clusters 2 --households 3 --seed 5");
        CHECK(r.status == 0);
        CHECK(fs::exists(dir / "sim" / "births_S1.csv"));
        CHECK(fs::exists(dir / "sim" / "truth.csv"));
        CHECK(fs::exists(dir / "sim" / "map.geojson"));
    }
    fs::remove_all(dir);
}
