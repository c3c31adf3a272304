#include <doctest.h>

#include <cmath>
#include <set>

#include "sae/pipeline_io.hpp"
#include "sae/survey_data.hpp"

using namespace sae;

namespace {

ChildRecord child(int birth, int end, std::optional<int> death = std::nullopt) {
    ChildRecord c;
    c.cluster = "c1";
    c.household = "h1";
    c.stratum = "north.urban";
    c.region = "north";
    c.birth = birth;
    c.observation_end = end;
    c.death_age = death;
    return c;
}

const PeriodScheme periods = PeriodScheme::from_years(1990, 2020, 5, 1990);

} // namespace

TEST_CASE("age band schema labels and lengths") {
    const auto s = AgeBandSchema::under_five();
    CHECK(s.bands() == 6);
    CHECK(s.trend_groups() == 3);
    CHECK(s.band_labels() == std::vector<std::string>{"0", "1-11", "12-23", "24-35", "36-47", "48-59"});
    CHECK(s.band_lengths() == std::vector<int>{1, 11, 12, 12, 12, 12});
    CHECK(s.band_of_month(0) == 0);
    CHECK(s.band_of_month(11) == 1);
    CHECK(s.band_of_month(59) == 5);
    CHECK(s.trend_group_of_month(30) == 2);
    CHECK(s.band_index("24-35") == 3);
    CHECK_THROWS_AS(s.band_index("60-71"), std::invalid_argument);
    CHECK_THROWS_AS(AgeBandSchema({1, 12}, {6, 12}), std::invalid_argument);
}

TEST_CASE("period labels") {
    CHECK(periods.size() == 6);
    CHECK(periods.label(0) == "90-94");
    CHECK(periods.label(5) == "15-19");
    CHECK(*periods.period_of_month(59) == 0);
    CHECK(*periods.period_of_month(60) == 1);
    CHECK_FALSE(periods.period_of_month(360).has_value());
    const auto yearly = PeriodScheme::from_years(2000, 2003, 1, 2000);
    CHECK(yearly.labels() == std::vector<std::string>{"2000", "2001", "2002"});
}

TEST_CASE("death in the first month gives one row") {
    const auto rows = expand_births({child(10, 100, 0)}, AgeBandSchema::under_five(), periods);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].band == 0);
    CHECK(rows[0].died);
}

TEST_CASE("fourteen observed months enumerate by band") {
    const auto rows = expand_births({child(10, 24)}, AgeBandSchema::under_five(), periods);
    REQUIRE(rows.size() == 14);
    std::vector<int> per_band(6, 0);
    for (const auto &r : rows) {
        ++per_band[r.band];
        CHECK_FALSE(r.died);
    }
    CHECK(per_band == std::vector<int>{1, 11, 2, 0, 0, 0});
}

TEST_CASE("exposure straddling a period boundary follows the calendar") {
    // Born in the last month of 90-94, observed for three months.
    const auto rows = expand_births({child(59, 62)}, AgeBandSchema::under_five(), periods);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].period == 0);
    CHECK(rows[1].period == 1);
    CHECK(rows[2].period == 1);
}

TEST_CASE("exposure stops at the final age cut") {
    const auto rows = expand_births({child(0, 200)}, AgeBandSchema::under_five(), periods);
    CHECK(rows.size() == 60);
}

TEST_CASE("invalid records name their index") {
    const auto schema = AgeBandSchema::under_five();
    auto bad = child(10, 5);
    try {
        expand_births({child(10, 20), bad}, schema, periods);
        FAIL("expected a throw");
    } catch (const std::invalid_argument &e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
    CHECK_THROWS_AS(expand_births({child(10, 400)}, schema, periods), std::invalid_argument);
    CHECK_THROWS_AS(expand_births({child(10, 20, 15)}, schema, periods), std::invalid_argument);
}

TEST_CASE("aggregate_counts sums deaths within a group") {
    PersonMonthRecord pm;
    pm.cluster = "a";
    pm.region = "r";
    pm.stratum = "r.urban";
    std::vector<PersonMonthRecord> rows(3, pm);
    rows[2].died = true;
    auto b = pm;
    b.cluster = "b";
    rows.push_back(b);
    const auto counts = aggregate_counts(rows, "S1");
    REQUIRE(counts.size() == 2);
    CHECK(counts[0].cluster == "a");
    CHECK(counts[0].deaths == 1);
    CHECK(counts[0].exposure == 3);
    CHECK(counts[1].deaths == 0);
    CHECK(counts[1].exposure == 1);
    CHECK(counts[1].survey == "S1");
}

TEST_CASE("counts table carries the printed column names") {
    PersonMonthRecord pm;
    pm.cluster = "a";
    pm.region = "r";
    pm.stratum = "r.rural";
    const auto table = counts_table(aggregate_counts({pm}), PipelineConfig{});
    for (const char *col : {"cluster", "years", "age", "Y", "total"}) {
        CHECK(table.has_column(col));
    }
}

TEST_CASE("synthetic cohort composite") {
    const std::vector<double> h(6, 0.01);
    CHECK(synthetic_cohort(h, {1, 11, 12, 12, 12, 12}) == doctest::Approx(1.0 - std::pow(0.99, 60)).epsilon(1e-14));
    CHECK(synthetic_cohort({0.2}, {1}) == doctest::Approx(0.2));
}

namespace {

HazardTruth flat_truth(std::size_t regions, std::size_t bands, double h) {
    HazardTruth t;
    for (std::size_t i = 0; i < regions; ++i) {
        t.regions.push_back("r" + std::to_string(i));
        t.rural_hazard.push_back(std::vector<std::vector<double>>(periods.size(), std::vector<double>(bands, h)));
    }
    t.urban_hazard_ratio = 0.8;
    return t;
}

std::set<double> weights_by(const std::vector<ChildRecord> &records, const std::string &suffix) {
    std::set<double> w;
    for (const auto &r : records) {
        if (r.stratum.size() >= suffix.size() && r.stratum.ends_with(suffix)) {
            w.insert(r.weight);
        }
    }
    return w;
}

} // namespace

TEST_CASE("design weights follow the selection probabilities") {
    const auto schema = AgeBandSchema::under_five();
    FrameDesign frame{10, 20, 10, 2.0};
    SUBCASE("equal probabilities") {
        const auto sim = simulate_survey(flat_truth(2, 6, 0.002), frame, SampleDesign{4, 8, 5}, schema, periods, 3);
        const auto u = weights_by(sim.records, ".urban");
        const auto r = weights_by(sim.records, ".rural");
        REQUIRE(u.size() == 1);
        REQUIRE(r.size() == 1);
        CHECK(*u.begin() == doctest::Approx(*r.begin()));
    }
    SUBCASE("urban sampled at twice the rate") {
        const auto sim = simulate_survey(flat_truth(2, 6, 0.002), frame, SampleDesign{8, 8, 5}, schema, periods, 3);
        const auto u = weights_by(sim.records, ".urban");
        const auto r = weights_by(sim.records, ".rural");
        REQUIRE(u.size() == 1);
        REQUIRE(r.size() == 1);
        CHECK(*u.begin() == doctest::Approx(0.5 * *r.begin()));
    }
}

TEST_CASE("simulation is reproducible and checks its design") {
    const auto schema = AgeBandSchema::under_five();
    const FrameDesign frame{5, 5, 6, 1.5};
    const auto a = simulate_survey(flat_truth(2, 6, 0.003), frame, SampleDesign{2, 2, 3}, schema, periods, 11);
    const auto b = simulate_survey(flat_truth(2, 6, 0.003), frame, SampleDesign{2, 2, 3}, schema, periods, 11);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].birth == b.records[i].birth);
        CHECK(a.records[i].death_age == b.records[i].death_age);
    }
    CHECK_THROWS_AS(simulate_survey(flat_truth(2, 6, 0.003), frame, SampleDesign{6, 2, 3}, schema, periods, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(simulate_survey(flat_truth(2, 6, 0.003), frame, SampleDesign{0, 2, 3}, schema, periods, 1),
                    std::invalid_argument);
    // Truth covers every region and period plus the national series.
    CHECK(a.truth.size() == 3 * periods.size());
}
