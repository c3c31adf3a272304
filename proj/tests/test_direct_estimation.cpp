#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sae/direct_estimation.hpp"
#include "sae/stats.hpp"

using namespace sae;

namespace {

PersonMonthRecord pm(const std::string &cluster, std::size_t band, bool died, double w = 1.0,
                     const std::string &region = "r") {
    PersonMonthRecord r;
    r.cluster = cluster;
    r.stratum = region + ".urban";
    r.region = region;
    r.band = band;
    r.died = died;
    r.weight = w;
    return r;
}

} // namespace

TEST_CASE("ht_estimate") {
    const std::vector<double> ones{1, 1, 1, 1};
    CHECK(ht_estimate(std::vector<double>{0, 1, 1, 0}, ones).estimate == 0.5);
    CHECK(ht_estimate(std::vector<double>{1, 0}, std::vector<double>{1, 3}).estimate == 0.25);
    CHECK(ht_estimate(std::vector<double>{0, 0}, std::vector<double>{1, 2}).degenerate);
    CHECK_THROWS_AS(ht_estimate(std::vector<double>{1}, std::vector<double>{0}), std::invalid_argument);
    CHECK_THROWS_AS(ht_estimate(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);

    std::mt19937_64 rng(5);
    std::vector<double> y(30), w(30);
    std::uniform_real_distribution<double> u(0.2, 4.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = i % 3 == 0 ? 1.0 : 0.0;
        w[i] = u(rng);
    }
    const double before = ht_estimate(y, w).estimate;
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> y2, w2;
    for (auto i : idx) {
        y2.push_back(y[i]);
        w2.push_back(w[i]);
    }
    CHECK(ht_estimate(y2, w2).estimate == doctest::Approx(before).epsilon(1e-15));
}

TEST_CASE("logit delta variance") {
    CHECK(*logit_delta_variance(0.5, 0.01) == doctest::Approx(0.16));
    CHECK(*logit_delta_variance(0.1, 0.0009) == doctest::Approx(0.0009 / 0.0081));
    CHECK_FALSE(logit_delta_variance(0.0, 0.01).has_value());
    CHECK_FALSE(logit_delta_variance(1.0, 0.01).has_value());
}

TEST_CASE("direct_u5mr missing and closed-form cases") {
    const auto schema = AgeBandSchema::under_five();
    SUBCASE("no deaths") {
        std::vector<PersonMonthRecord> rows;
        for (std::size_t a = 0; a < 6; ++a) {
            rows.push_back(pm("c1", a, false));
            rows.push_back(pm("c2", a, false));
        }
        CHECK_FALSE(direct_u5mr(rows, schema).has_value());
    }
    SUBCASE("a band without exposure") {
        std::vector<PersonMonthRecord> rows{pm("c1", 0, true), pm("c2", 0, false)};
        CHECK_FALSE(direct_u5mr(rows, schema).has_value());
    }
    SUBCASE("constant hazard 0.01 in every band") {
        // 100 person-months per band per cluster, one death each.
        std::vector<PersonMonthRecord> rows;
        for (const char *c : {"c1", "c2", "c3"}) {
            for (std::size_t a = 0; a < 6; ++a) {
                for (int k = 0; k < 100; ++k) {
                    rows.push_back(pm(c, a, k == 0));
                }
            }
        }
        const auto est = estimate_composite(rows, schema);
        REQUIRE(est.has_value());
        for (double q : est->band_hazard) {
            CHECK(q == doctest::Approx(0.01).epsilon(1e-14));
        }
        CHECK(est->estimate == doctest::Approx(1.0 - std::pow(0.99, 60)).epsilon(1e-13));
        CHECK(est->estimate == doctest::Approx(0.45284).epsilon(1e-5));
        // Identical clusters leave no between-cluster variance.
        CHECK(est->var_logit == doctest::Approx(0.0));
        CHECK_FALSE(direct_u5mr(rows, schema).has_value());
    }
}

TEST_CASE("single neonatal band reduces to the weighted mean") {
    const auto schema = AgeBandSchema::neonatal();
    std::vector<PersonMonthRecord> rows{pm("a", 0, true, 2.0), pm("a", 0, false, 1.0), pm("b", 0, false, 3.0),
                                        pm("b", 0, true, 1.0), pm("c", 0, false, 1.5)};
    std::vector<double> y, w;
    for (const auto &r : rows) {
        y.push_back(r.died ? 1.0 : 0.0);
        w.push_back(r.weight);
    }
    const auto d = direct_u5mr(rows, schema);
    REQUIRE(d.has_value());
    CHECK(d->mean == doctest::Approx(ht_estimate(y, w).estimate).epsilon(1e-14));
}

TEST_CASE("jackknife variance matches a brute-force leave-one-cluster-out") {
    const auto schema = AgeBandSchema({1, 12}, {});
    std::mt19937_64 rng(9);
    std::bernoulli_distribution death(0.08);
    std::uniform_real_distribution<double> wdist(0.5, 2.0);
    std::vector<PersonMonthRecord> rows;
    for (int c = 0; c < 6; ++c) {
        const double w = wdist(rng);
        for (std::size_t a = 0; a < 2; ++a) {
            for (int k = 0; k < 25; ++k) {
                rows.push_back(pm("c" + std::to_string(c), a, death(rng), w));
            }
        }
    }
    const auto est = estimate_composite(rows, schema);
    REQUIRE(est.has_value());
    auto composite = [&](const std::string &drop) {
        double q[2]{}, n[2]{};
        for (const auto &r : rows) {
            if (r.cluster == drop) {
                continue;
            }
            q[r.band] += r.died ? r.weight : 0.0;
            n[r.band] += r.weight;
        }
        return 1.0 - std::pow(1.0 - q[0] / n[0], 1) * std::pow(1.0 - q[1] / n[1], 11);
    };
    std::vector<double> reps;
    for (int c = 0; c < 6; ++c) {
        reps.push_back(logit(composite("c" + std::to_string(c))));
    }
    const double m = mean(reps);
    double ss = 0.0;
    for (double r : reps) {
        ss += (r - m) * (r - m);
    }
    CHECK(est->var_logit == doctest::Approx(5.0 / 6.0 * ss).epsilon(1e-12));
    CHECK(est->estimate == doctest::Approx(composite("")).epsilon(1e-14));
}

TEST_CASE("linearised variance for a single band") {
    const auto schema = AgeBandSchema::neonatal();
    std::vector<PersonMonthRecord> rows{pm("a", 0, true), pm("a", 0, false), pm("b", 0, false),
                                        pm("b", 0, false), pm("c", 0, true),  pm("c", 0, true)};
    JackknifeConfig cfg;
    cfg.method = VarianceMethod::linearization;
    const auto est = estimate_composite(rows, schema, cfg);
    REQUIRE(est.has_value());
    // Cluster scores z_c = sum (y - p) with p = 1/2: 0, -1, 1.
    CHECK(est->var_prob == doctest::Approx(3.0 / 2.0 * 2.0 / 36.0));
    auto two_bands = rows;
    for (const auto &r : rows) {
        auto later = r;
        later.band = 1;
        two_bands.push_back(later);
    }
    CHECK_THROWS_AS(estimate_composite(two_bands, AgeBandSchema({1, 12}), cfg), std::invalid_argument);
}

TEST_CASE("direct_all lists the national row first") {
    const auto schema = AgeBandSchema::neonatal();
    const auto periods = PeriodScheme::from_years(1990, 2000, 5, 1990);
    std::vector<PersonMonthRecord> rows;
    for (const char *c : {"a", "b", "c"}) {
        for (int k = 0; k < 10; ++k) {
            auto r = pm(c, 0, k == 0 || (k == 1 && c[0] == 'a'), 1.0, "east");
            r.period = 0;
            rows.push_back(r);
        }
    }
    const auto out = direct_all({{"S1", rows}}, {"east", "west"}, periods, schema);
    REQUIRE(out.size() == 6);
    CHECK(out[0].region == national_label);
    CHECK(out[0].period == "90-94");
    CHECK(out[1].region == national_label);
    CHECK(out[0].stats.has_value());
    CHECK_FALSE(out[1].stats.has_value());
    CHECK(out[2].region == "east");
    CHECK(out[4].region == "west");
    CHECK_FALSE(out[4].stats.has_value());
    CHECK(out[0].stats->mean == doctest::Approx(out[2].stats->mean));
    auto bad = rows;
    bad[0].region = "south";
    CHECK_THROWS_AS(direct_all({{"S1", bad}}, {"east", "west"}, periods, schema), std::invalid_argument);
}

namespace {

DirectEstimate row(const std::string &survey, double logit_est, double var) {
    return DirectEstimate{"r", "90-94", survey, stats_from_logit(logit_est, var)};
}

} // namespace

TEST_CASE("aggregate_surveys") {
    SUBCASE("equal variances") {
        const auto out = aggregate_surveys({row("A", -1.0, 0.04), row("B", -2.0, 0.04)});
        REQUIRE(out.size() == 1);
        CHECK(out[0].stats->logit_est == doctest::Approx(-1.5));
        CHECK(out[0].stats->var_est == doctest::Approx(0.02));
        CHECK_FALSE(out[0].survey.has_value());
    }
    SUBCASE("hand inverse variance") {
        const auto out = aggregate_surveys({row("A", -1.0, 0.04), row("B", -1.4, 0.12)});
        CHECK(out[0].stats->logit_est == doctest::Approx(-1.1));
        CHECK(out[0].stats->var_est == doctest::Approx(0.03));
    }
    SUBCASE("missing survey passes the other through") {
        DirectEstimate missing{"r", "90-94", std::string("B"), std::nullopt};
        const auto out = aggregate_surveys({row("A", -1.3, 0.05), missing});
        CHECK(out[0].stats->logit_est == doctest::Approx(-1.3));
        CHECK(out[0].stats->var_est == doctest::Approx(0.05));
    }
}

TEST_CASE("adjust_ratio") {
    const auto base = row("A", logit(0.10), 0.04);
    SUBCASE("identity") {
        const auto out = adjust_ratio({base}, {{"90-94", std::nullopt, 1.0}});
        const auto &s = *out.estimates[0].stats;
        CHECK(s.mean == doctest::Approx(base.stats->mean).epsilon(1e-14));
        CHECK(s.logit_est == doctest::Approx(base.stats->logit_est).epsilon(1e-12));
        CHECK(s.var_est == doctest::Approx(base.stats->var_est).epsilon(1e-10));
        CHECK(out.warnings.empty());
    }
    SUBCASE("scales the mean and bounds") {
        const auto out = adjust_ratio({base}, {{"90-94", std::nullopt, 1.2}});
        const auto &s = *out.estimates[0].stats;
        CHECK(s.mean == doctest::Approx(0.12));
        CHECK(s.lower == doctest::Approx(1.2 * base.stats->lower));
        CHECK(s.upper == doctest::Approx(1.2 * base.stats->upper));
        const double oracle = std::pow((logit(s.upper) - logit(s.lower)) / (2.0 * 1.959963984540054), 2);
        CHECK(s.var_est == doctest::Approx(oracle).epsilon(1e-12));
    }
    SUBCASE("divide mode and survey-specific ratios") {
        const auto out = adjust_ratio({base}, {{"90-94", std::nullopt, 2.0}, {"90-94", std::string("A"), 1.25}},
                                      RatioMode::divide);
        CHECK(out.estimates[0].stats->mean == doctest::Approx(0.08));
    }
    SUBCASE("missing ratio warns") {
        const auto out = adjust_ratio({base}, {{"95-99", std::nullopt, 2.0}});
        CHECK(out.estimates[0].stats->mean == doctest::Approx(0.10));
        CHECK(out.warnings.size() == 1);
    }
    CHECK_THROWS_AS(adjust_ratio({base}, {{"90-94", std::nullopt, 0.0}}), std::invalid_argument);
}
