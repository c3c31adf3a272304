// Acceptance runner: one PASS/FAIL line per headline criterion.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include "sae/direct_estimation.hpp"
#include "sae/gmrf.hpp"
#include "sae/inference.hpp"
#include "sae/pc_priors.hpp"
#include "sae/pipeline_io.hpp"
#include "sae/reports.hpp"
#include "sae/smoothing.hpp"
#include "sae/stats.hpp"
#include "sae/survey_data.hpp"

namespace fs = std::filesystem;
using namespace sae;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

const std::vector<std::string> four_names{"central", "eastern", "northern", "western"};

RegionGraph four_regions() {
    Eigen::MatrixXi a(4, 4);
    a << 0, 1, 1, 1, 1, 0, 1, 0, 1, 1, 0, 1, 1, 0, 1, 0;
    return RegionGraph(four_names, a);
}

std::vector<double> column(const PosteriorDraws &d, std::size_t c) {
    const auto col = d.draws.col(static_cast<Eigen::Index>(c));
    return {col.data(), col.data() + col.size()};
}

SamplerOptions sampler(std::size_t chains, std::size_t draws, std::size_t burnin, std::uint64_t seed) {
    SamplerOptions o;
    o.chains = chains;
    o.n_draws = draws;
    o.n_burnin = burnin;
    o.seed = seed;
    return o;
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// ---------------------------------------------------------------------------

Outcome estimator_oracle() {
    std::mt19937_64 rng(101);
    const AgeBandSchema schema({1, 12, 24}, {});
    double worst = 0.0;
    std::size_t composites = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int clusters = std::uniform_int_distribution<int>(2, 6)(rng);
        const int n = std::uniform_int_distribution<int>(6, 40)(rng);
        std::uniform_real_distribution<double> wdist(0.1, 5.0);
        std::bernoulli_distribution death(std::uniform_real_distribution<double>(0.02, 0.4)(rng));
        std::vector<PersonMonthRecord> rows;
        std::vector<double> y, w;
        for (int k = 0; k < n; ++k) {
            PersonMonthRecord r;
            r.cluster = "c" + std::to_string(k % clusters);
            r.region = "r";
            r.stratum = "r.urban";
            r.band = static_cast<std::size_t>(k % 3);
            r.died = death(rng);
            r.weight = wdist(rng);
            rows.push_back(r);
            y.push_back(r.died ? 1.0 : 0.0);
            w.push_back(r.weight);
        }
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < y.size(); ++k) {
            num += w[k] * y[k];
            den += w[k];
        }
        worst = std::max(worst, relative_gap(ht_estimate(y, w).estimate, num / den));
        const auto est = estimate_composite(rows, schema);
        if (!est) {
            continue;
        }
        ++composites;
        for (std::size_t b = 0; b < 3; ++b) {
            double bn = 0.0, bd = 0.0;
            for (const auto &r : rows) {
                if (r.band == b) {
                    bn += r.died ? r.weight : 0.0;
                    bd += r.weight;
                }
            }
            const double q = bn / bd;
            worst = std::max(worst, q == 0.0 ? std::abs(est->band_hazard[b]) : relative_gap(est->band_hazard[b], q));
        }
    }

    // Jackknife on simple random samples of n = 500.
    const double p = 0.1;
    const int n = 500;
    std::bernoulli_distribution draw(p);
    double total = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<PersonMonthRecord> rows(n);
        for (int k = 0; k < n; ++k) {
            rows[k].cluster = "c" + std::to_string(k);
            rows[k].died = draw(rng);
        }
        total += estimate_composite(rows, AgeBandSchema::neonatal())->var_prob;
    }
    const double ratio = total / 200.0 / (p * (1.0 - p) / n);
    const bool pass = worst < 1e-12 && composites > 500 && std::abs(ratio - 1.0) < 0.10;
    return {pass, fmt::format("max relative error {:.2e} over 1000 datasets ({} composites); mean jackknife / "
                              "p(1-p)/n = {:.4f}",
                              worst, composites, ratio)};
}

Outcome unbiasedness() {
    const PipelineConfig config;
    const SurveyPopulation population(demo_truth(four_names, config), FrameDesign{}, config.schema, config.periods, 2024);
    // Urban clusters are sampled at twice the rural rate.
    const SampleDesign design{16, 16, 20};
    std::mt19937_64 rng(78);
    std::map<std::pair<std::string, std::string>, std::vector<double>> estimates;
    std::size_t missing = 0;
    const int R = 500;
    for (int rep = 0; rep < R; ++rep) {
        const auto rows = expand_births(population.sample(design, rng), config.schema, config.periods);
        for (const auto &d : direct_all({{"S", rows}}, four_names, config.periods, config.schema)) {
            if (!d.stats) {
                ++missing;
                continue;
            }
            estimates[{d.region, d.period}].push_back(d.stats->mean);
        }
    }
    std::size_t cells = 0, failures = 0;
    double worst = 0.0;
    for (const auto &t : population.truth()) {
        const auto it = estimates.find({t.region, config.periods.label(t.period)});
        if (it == estimates.end()) {
            ++failures;
            continue;
        }
        const auto &v = it->second;
        const double se = std::sqrt(variance(v) / static_cast<double>(v.size()));
        const double z = std::abs(mean(v) - t.u5mr) / se;
        worst = std::max(worst, z);
        ++cells;
        if (z > 3.0) {
            ++failures;
        }
    }
    return {failures == 0 && missing == 0,
            fmt::format("{} cells over {} replicates, max |mean - truth| = {:.2f} MC standard errors, {} missing",
                        cells, R, worst, missing)};
}

Outcome scaling_invariant() {
    double worst = 0.0;
    const auto icar = icar_precision(four_regions());
    worst = std::max(worst, std::abs(geometric_mean(constrained_marginal_variances(icar.Q, icar.rank_deficiency)) - 1.0));
    for (std::size_t T : {5, 10, 35}) {
        for (int order : {1, 2}) {
            const auto s = rw_precision(T, order);
            worst = std::max(worst, std::abs(geometric_mean(constrained_marginal_variances(s.Q, s.rank_deficiency)) - 1.0));
        }
    }
    return {worst < 1e-8, fmt::format("max |geometric mean - 1| = {:.2e} over ICAR(4 regions), RW1/RW2 T in {{5,10,35}}",
                                      worst)};
}

Outcome pc_priors() {
    using boost::math::quadrature::gauss_kronrod;
    const PCSigmaPrior sigma{1.0, 0.01};
    const double p_sigma =
        gauss_kronrod<double, 61>::integrate([&](double s) { return std::exp(sigma.log_density(s)); }, 1.0,
                                             std::numeric_limits<double>::infinity(), 15, 1e-12);
    const PCPhiPrior phi(four_regions());
    const double p_phi = gauss_kronrod<double, 61>::integrate([&](double x) { return std::exp(phi.log_density(x)); },
                                                              0.0, 0.5, 15, 1e-12);
    const PCOmegaPrior omega(6);
    boost::math::quadrature::tanh_sinh<double> ts;
    const double p_omega = ts.integrate([&](double w) { return std::exp(omega.log_density(w)); }, 0.7, 1.0);
    const double worst = std::max({std::abs(p_sigma - 0.01), std::abs(p_phi - 2.0 / 3.0), std::abs(p_omega - 0.9)});
    return {worst < 1e-3, fmt::format("P(sigma > 1) = {:.6f}, P(phi < 0.5) = {:.6f}, P(omega > 0.7) = {:.6f}", p_sigma,
                                      p_phi, p_omega)};
}

Outcome inference_oracle() {
    std::vector<std::string> parts;
    double worst = 0.0;
    auto record = [&](const std::string &label, double tv) {
        worst = std::max(worst, tv);
        parts.push_back(fmt::format("{} {:.3f}", label, tv));
    };

    {
        // Conjugate normal mean with known prior scale.
        LatentModel m;
        const PCSigmaPrior prior{1.0, 0.01};
        m.hypers.push_back(Hyperparameter{"sigma", HyperScale::positive, [prior](double s) { return prior.log_density(s); },
                                          1.0, true});
        LatentComponent c;
        c.name = "x";
        c.labels = {"x"};
        c.structure = Eigen::MatrixXd::Identity(1, 1);
        c.sigma = 0;
        m.components.push_back(c);
        const auto cell = m.add_cell(PredictorCell{{{0, 1.0}}, 0.0});
        m.gaussian.push_back({cell, 1.2, 0.4});
        m.gaussian.push_back({cell, 0.9, 0.4});
        GridSpec spec;
        spec.latent.push_back(GridAxis{-3.0, 4.0, 700});
        const auto g = grid_oracle(m, spec);
        const auto fit = fit_lgm(m, sampler(4, 5000, 1000, 11));
        record("conjugate x", total_variation(g.latent[0], column(fit, 0)));
    }
    {
        // Two areas, iid spatial effects, no temporal terms.
        const RegionGraph graph({"a", "b"}, Eigen::MatrixXi::Zero(2, 2));
        LatentModelSpec spec;
        spec.time_model = TemporalModel::none;
        spec.time_unstruct = false;
        spec.type_st = std::nullopt;
        spec.spatial = SpatialModel::iid;
        const std::vector<std::string> periods{"90-94"};
        const std::vector<DirectEstimate> direct{{"a", "90-94", std::nullopt, stats_from_logit(-2.5, 0.05)},
                                                 {"b", "90-94", std::nullopt, stats_from_logit(-0.5, 0.05)}};
        const auto built = build_smooth_direct(direct, &graph, periods, spec);
        if (built.model.latent_size() != 3 || built.model.hypers.size() != 1) {
            return {false, "unexpected two-area model layout"};
        }
        GridSpec gs;
        gs.latent.push_back(GridAxis{-8.0, 5.0, 90});
        gs.latent.push_back(GridAxis{-5.0, 5.0, 90});
        gs.latent.push_back(GridAxis{-5.0, 5.0, 90});
        gs.hyper.push_back(GridAxis{0.0, 4.0, 90, true, false});
        const auto g = grid_oracle(built.model, gs);
        const auto fit = fit_lgm(built.model, sampler(4, 5000, 1000, 12));
        record("two-area intercept", total_variation(g.latent[0], column(fit, 0)));
        record("two-area u_a", total_variation(g.latent[1], column(fit, 1)));
        record("two-area u_b", total_variation(g.latent[2], column(fit, 2)));
        record("two-area sigma", total_variation(g.hyper[0], column(fit, fit.hyper_start)));
    }
    {
        // One cluster cell with free overdispersion.
        LatentModel m;
        m.likelihood = Likelihood::betabinomial;
        const OverdispersionPrior prior;
        m.hypers.push_back(
            Hyperparameter{"rho", HyperScale::unit, [prior](double r) { return prior.log_density(r); }, 0.05, false});
        m.overdispersion = 0;
        LatentComponent c;
        c.name = "intercept";
        c.labels = {"x"};
        c.structure = Eigen::MatrixXd::Identity(1, 1);
        c.fixed_variance = 4.0;
        m.components.push_back(c);
        const auto cell = m.add_cell(PredictorCell{{{0, 1.0}}, -2.0});
        m.counts.push_back({cell, 6, 80});
        GridSpec gs;
        gs.latent.push_back(GridAxis{-4.0, 4.0, 400});
        gs.hyper.push_back(GridAxis{0.0, 0.6, 300, true, false});
        const auto g = grid_oracle(m, gs);
        const auto fit = fit_lgm(m, sampler(4, 5000, 1000, 13));
        record("beta-binomial x", total_variation(g.latent[0], column(fit, 0)));
        record("beta-binomial rho", total_variation(g.hyper[0], column(fit, 1)));
    }
    std::string detail = "TV at 20000 draws:";
    for (const auto &p : parts) {
        detail += " " + p + ";";
    }
    detail.pop_back();
    return {worst < 0.05, detail};
}

/// One synthetic survey on the bundled four-region setting.
struct Synthetic {
    PipelineConfig config;
    std::vector<DirectEstimate> direct;
    std::vector<ClusterCounts> counts;
    std::vector<TruthRow> truth;
};

Synthetic synthetic(std::uint64_t seed, const SampleDesign &design = {}) {
    Synthetic s;
    const SurveyPopulation population(demo_truth(four_names, s.config), FrameDesign{}, s.config.schema,
                                      s.config.periods, seed);
    std::mt19937_64 rng(seed + 1);
    const auto rows = expand_births(population.sample(design, rng), s.config.schema, s.config.periods);
    s.direct = direct_all({{"S1", rows}}, four_names, s.config.periods, s.config.schema);
    s.counts = aggregate_counts(rows, "S1");
    s.truth = population.truth();
    return s;
}

Outcome shrinkage() {
    const auto data = synthetic(31);
    const auto graph = four_regions();
    const auto built = build_smooth_direct(data.direct, &graph, data.config.periods.labels(), LatentModelSpec{});
    const auto draws = fit_lgm(built.model, sampler(4, 2000, 1000, 5));
    const auto smoothed = smoothed_direct_estimates(draws, built.layout);
    std::size_t compared = 0, larger = 0;
    double worst = 0.0;
    for (const auto &d : data.direct) {
        if (!d.stats || d.region == national_label) {
            continue;
        }
        for (const auto &s : smoothed) {
            if (s.region == d.region && s.period == d.period) {
                ++compared;
                worst = std::max(worst, s.logit_var / d.stats->var_est);
                if (!(s.logit_var < d.stats->var_est)) {
                    ++larger;
                }
            }
        }
    }
    return {compared > 0 && larger == 0,
            fmt::format("{} region-period cells, max smoothed / direct logit variance = {:.3f}", compared, worst)};
}

Outcome composite_identity() {
    const auto data = synthetic(41);
    const auto graph = four_regions();
    LatentModelSpec spec;
    spec.time_model = TemporalModel::rw1;
    const auto built =
        build_smooth_cluster(data.counts, &graph, data.config.periods.labels(), spec, data.config.schema);
    const auto &m = built.model;
    const auto z = data.config.schema.band_lengths();
    const bool exponents = z == std::vector<int>{1, 11, 12, 12, 12, 12};
    PosteriorDraws draws;
    const auto off = m.offsets();
    for (std::size_t k = 0; k < m.components.size(); ++k) {
        draws.components.push_back(ComponentRange{m.components[k].name, off[k], m.components[k].size(), m.components[k].labels});
    }
    draws.hyper_start = m.latent_size();
    for (const auto &h : m.hypers) {
        draws.hyper_names.push_back(h.name);
    }
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> lh(std::log(1e-6), std::log(0.3));
    const int D = 200;
    std::vector<double> hazard(D);
    draws.draws = Eigen::MatrixXd::Zero(D, static_cast<Eigen::Index>(m.latent_size() + m.hypers.size()));
    const auto &icpt = draws.component("intercept");
    for (int d = 0; d < D; ++d) {
        hazard[d] = std::exp(lh(rng));
        for (std::size_t k = 0; k < icpt.size; ++k) {
            draws.draws(d, static_cast<Eigen::Index>(icpt.start + k)) = logit(hazard[d]);
        }
    }
    const auto out = predict_u5mr(draws, built.layout);
    double worst = 0.0;
    for (int d = 0; d < D; ++d) {
        const double expect = 1.0 - std::pow(1.0 - hazard[d], 60);
        for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
            worst = std::max(worst, std::abs(out.values(d, c) - expect));
        }
    }
    return {exponents && worst < 1e-12,
            fmt::format("max |U5MR - (1 - (1 - h)^60)| = {:.2e} over {} draws x {} cells; exponents {}", worst, D,
                        out.values.cols(), exponents ? "(1,11,12,12,12,12)" : "differ")};
}

Outcome constraint_suite() {
    const auto data = synthetic(51);
    const auto graph = four_regions();
    const auto periods = data.config.periods.labels();
    double worst = 0.0;
    std::size_t fits = 0, draws_checked = 0;
    auto check = [&](const BuiltModel &built, const SamplerOptions &o) {
        const auto draws = fit_lgm(built.model, o);
        const Eigen::MatrixXd A = built.model.constraint_matrix();
        const auto p = static_cast<Eigen::Index>(built.model.latent_size());
        if (A.rows() > 0) {
            worst = std::max(worst, (draws.draws.leftCols(p) * A.transpose()).cwiseAbs().maxCoeff());
        }
        worst = std::max(worst, draws.max_constraint_residual);
        draws_checked += draws.size();
        ++fits;
    };
    for (int type = 1; type <= 4; ++type) {
        for (auto tm : {TemporalModel::rw1, TemporalModel::rw2, TemporalModel::ar1}) {
            LatentModelSpec spec;
            spec.time_model = tm;
            spec.type_st = parse_interaction_type(type);
            check(build_smooth_direct(data.direct, &graph, periods, spec), sampler(2, 500, 500, 7));
            check(build_smooth_cluster(data.counts, &graph, periods, spec, data.config.schema), sampler(2, 250, 250, 7));
        }
    }
    // Random slopes, yearly grid, and time-invariant strata.
    LatentModelSpec slopes;
    slopes.time_model = TemporalModel::rw1;
    slopes.random_slopes = true;
    check(build_smooth_direct(data.direct, &graph, periods, slopes), sampler(2, 500, 500, 8));
    LatentModelSpec yearly;
    yearly.yearly = true;
    yearly.m = 5;
    yearly.first_year = 1990;
    check(build_smooth_direct(data.direct, &graph, periods, yearly), sampler(2, 500, 500, 9));
    LatentModelSpec invariant;
    invariant.time_invariant_strata = true;
    check(build_smooth_cluster(data.counts, &graph, periods, invariant, data.config.schema), sampler(2, 250, 250, 10));
    return {worst < 1e-8, fmt::format("max |A x| = {:.2e} over {} fits and {} retained draws", worst, fits, draws_checked)};
}

Outcome benchmarking_closure() {
    // National series come from a large sample, as national benchmarks do.
    const auto data = synthetic(61, SampleDesign{24, 48, 30});
    const auto periods = data.config.periods.labels();
    // An external series with a different level and trajectory.
    std::vector<std::pair<std::string, double>> target;
    for (const auto &t : data.truth) {
        if (t.region == national_label) {
            target.emplace_back(periods[t.period], t.u5mr * (1.15 + 0.02 * static_cast<double>(t.period)));
        }
    }
    std::vector<DirectEstimate> national;
    for (const auto &d : data.direct) {
        if (d.region == national_label) {
            national.push_back(d);
        }
    }
    auto fit = [&](const std::vector<DirectEstimate> &direct, std::uint64_t seed) {
        const auto built = build_smooth_direct(direct, nullptr, periods, LatentModelSpec{});
        return smoothed_direct_estimates(fit_lgm(built.model, sampler(4, 2000, 1000, seed)), built.layout);
    };
    const auto first = fit(national, 1);
    const auto ratios = benchmark_to_series(first, target);
    const auto adjusted = adjust_ratio(national, ratios.ratios, RatioMode::divide);
    const auto second = fit(adjusted.estimates, 2);
    double worst = 0.0, before = 0.0;
    for (const auto &[period, value] : target) {
        for (const auto &e : first) {
            if (e.period == period) {
                before = std::max(before, relative_gap(e.median, value));
            }
        }
        for (const auto &e : second) {
            if (e.period == period) {
                worst = std::max(worst, relative_gap(e.median, value));
            }
        }
    }
    return {worst < 0.03, fmt::format("max |median / target - 1| = {:.4f} after benchmarking (was {:.4f})", worst, before)};
}

Outcome tcp_contract() {
    std::vector<std::string> problems;
    std::mt19937_64 rng(9);
    std::vector<CellDraws> cells;
    for (int i = 0; i < 8; ++i) {
        std::normal_distribution<double> d(0.05 + 0.01 * i, 0.012);
        CellDraws c{"r" + std::to_string(i), "2015", {}};
        for (int k = 0; k < 1000; ++k) {
            c.values.push_back(d(rng));
        }
        cells.push_back(c);
    }
    std::vector<double> pooled;
    for (const auto &c : cells) {
        pooled.insert(pooled.end(), c.values.begin(), c.values.end());
    }
    std::sort(pooled.begin(), pooled.end());
    const auto thresholds = tcp_thresholds(cells, 4);
    const double probs[] = {0.01, 0.25, 0.5, 0.75, 0.99};
    for (std::size_t k = 0; k < 5; ++k) {
        // Type 7 quantile written out.
        const double h = (static_cast<double>(pooled.size()) - 1.0) * probs[k];
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const double q = pooled[lo] + (h - static_cast<double>(lo)) * (pooled[std::min(lo + 1, pooled.size() - 1)] - pooled[lo]);
        if (thresholds.size() != 5 || std::abs(thresholds[k] - q) > 1e-15) {
            problems.push_back(fmt::format("threshold {} differs", k));
        }
    }
    const auto r = tcp_classify(cells, thresholds);
    for (const auto &c : r.cells) {
        double total = 0.0;
        for (double m : c.mass) {
            total += m;
        }
        if (std::abs(total - 1.0) > 1e-12 || c.tcp < 0.25 || c.tcp > 1.0) {
            problems.push_back("cell masses out of bounds");
        }
    }
    if (r.atcp < 0.25 || r.atcp > 1.0) {
        problems.push_back("ATCP out of [1/K, 1]");
    }
    const std::vector<double> fixed{0.0, 0.1, 0.2, 0.3, 0.4};
    const auto split = tcp_classify({{"a", "y", {0.05, 0.25}}}, fixed);
    if (split.cells[0].tcp != 0.5 || split.cells[0].interval != 0) {
        problems.push_back("two-point split");
    }
    const auto together = tcp_classify({{"a", "y", {0.21, 0.29}}, {"b", "y", {0.15, 0.35}}}, fixed);
    if (together.cells[0].tcp != 1.0 || together.cells[0].interval != 2 || together.cells[1].tcp != 0.5 ||
        together.atcp != 0.75) {
        problems.push_back("two-point fixtures");
    }
    std::string detail = fmt::format("thresholds [{:.5f} .. {:.5f}], ATCP {:.4f} on 8 cells; two-point fixtures exact",
                                     thresholds.front(), thresholds.back(), r.atcp);
    for (const auto &p : problems) {
        detail += "; " + p;
    }
    return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// End-to-end CLI

int run(const std::string &command, const fs::path &log) {
    const int raw = std::system((command + " >>" + log.string() + " 2>&1").c_str());
    return raw == -1 ? -1 : WEXITSTATUS(raw);
}

bool has_columns(const fs::path &path, const std::vector<std::string> &cols, std::string &why) {
    try {
        const auto t = csv::Table::read(path);
        for (const auto &c : cols) {
            if (!t.has_column(c)) {
                why = fmt::format("{} lacks column {}", path.filename().string(), c);
                return false;
            }
        }
        if (t.rows() == 0) {
            why = fmt::format("{} is empty", path.filename().string());
            return false;
        }
        return true;
    } catch (const std::exception &e) {
        why = e.what();
        return false;
    }
}

bool probabilities_in_range(const fs::path &path, const std::vector<std::string> &cols, std::string &why) {
    const auto t = csv::Table::read(path);
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (const auto &c : cols) {
            const auto v = t.optional_number(r, c);
            if (v && !(*v >= 0.0 && *v <= 1.0)) {
                why = fmt::format("{} has {} = {} outside [0, 1]", path.filename().string(), c, *v);
                return false;
            }
        }
    }
    return true;
}

bool valid_svg(const fs::path &path, std::string &why) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto s = ss.str();
    const auto count = [&](const std::string &needle) {
        std::size_t n = 0;
        for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) {
            ++n;
        }
        return n;
    };
    if (s.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0) != 0 || !s.ends_with("</svg>\n") ||
        count("<g") != count("</g>")) {
        why = fmt::format("{} is not a well-formed SVG", path.filename().string());
        return false;
    }
    return true;
}

bool valid_json(const fs::path &path, std::string &why) {
    try {
        (void)read_json(path);
        return true;
    } catch (const std::exception &e) {
        why = fmt::format("{}: {}", path.filename().string(), e.what());
        return false;
    }
}

Outcome end_to_end(const std::string &cli, const fs::path &work) {
    fs::remove_all(work);
    fs::create_directories(work);
    const auto log = work / "cli.log";
    const auto w = [&](const std::string &name) { return (work / name).string(); };
    const std::vector<std::pair<std::string, std::string>> steps{
        {"simulate", fmt::format("simulate --out-dir {} --seed 7", w("sim"))},
        {"births", fmt::format("births --births {} --out {}", w("sim/births_S1.csv"), w("person_months.csv"))},
        {"counts", fmt::format("counts --births {} --survey S1 --out {}", w("sim/births_S1.csv"), w("counts.csv"))},
        {"direct", fmt::format("direct --births {} --survey S1 --graph {} --out {}", w("sim/births_S1.csv"),
                               w("sim/graph.csv"), w("direct.csv"))},
        {"aggregate", fmt::format("aggregate --direct {} --out {}", w("direct.csv"), w("aggregated.csv"))},
        {"smooth-direct national", fmt::format("smooth-direct --direct {} --national --out-dir {}", w("direct.csv"),
                                               w("fit_national"))},
        {"benchmark", fmt::format("benchmark --estimates {} --target {} --out {}", w("fit_national/estimates.csv"),
                                  w("sim/target.csv"), w("ratios.csv"))},
        {"adjust", fmt::format("adjust --direct {} --ratios {} --mode divide --out {}", w("direct.csv"), w("ratios.csv"),
                               w("adjusted.csv"))},
        {"smooth-direct", fmt::format("smooth-direct --direct {} --graph {} --out-dir {}", w("adjusted.csv"),
                                      w("sim/map.geojson"), w("fit_sd"))},
        {"smooth-cluster", fmt::format("smooth-cluster --counts {} --graph {} --out-dir {}", w("counts.csv"),
                                       w("sim/graph.csv"), w("fit_cl"))},
        {"predict direct", fmt::format("predict --fit {} --out-dir {}", w("fit_sd"), w("pred_sd"))},
        {"predict cluster", fmt::format("predict --fit {} --props {} --out-dir {}", w("fit_cl"), w("sim/props.csv"),
                                        w("pred_cl"))},
        {"diag time", fmt::format("diag --fit {} --field time --out {}", w("fit_sd"), w("diag_time.csv"))},
        {"diag space", fmt::format("diag --fit {} --field space --out {}", w("fit_sd"), w("diag_space.csv"))},
        {"diag spacetime", fmt::format("diag --fit {} --field spacetime --out {}", w("fit_cl"), w("diag_st.csv"))},
        {"map", fmt::format("map --values {} --geo {} --years 10-14,15-19 --per1000 --out {}", w("pred_cl/estimates.csv"),
                            w("sim/map.geojson"), w("map.svg"))},
        {"hatch", fmt::format("hatch --values {} --geo {} --years 15-19 --out {}", w("pred_cl/estimates.csv"),
                              w("sim/map.geojson"), w("hatch.svg"))},
        {"ridge", fmt::format("ridge --draws {} --years 10-14,15-19 --out {}", w("pred_cl/draws.csv"), w("ridge.svg"))},
        {"tcp", fmt::format("tcp --draws {} --years 15-19 --intervals 4 --out {} --summary {}", w("pred_cl/draws.csv"),
                            w("tcp.csv"), w("tcp.json"))},
    };
    for (const auto &[name, args] : steps) {
        const int status = run(cli + " " + args, log);
        if (status != 0) {
            return {false, fmt::format("step '{}' exited with {} (see {})", name, status, log.string())};
        }
    }
    std::string why;
    const std::vector<std::string> smoothed{"region", "years", "strata", "median", "lower", "upper",
                                            "logit.mean", "logit.var", "is.projection"};
    const std::vector<std::string> direct{"region", "years", "mean", "lower", "upper", "logit.est", "var.est", "survey",
                                          "logit.prec"};
    const std::vector<std::string> diag{"field", "component", "group", "label", "median", "lower", "upper", "mean"};
    const std::vector<std::string> long_draws{"region", "years", "strata", "draw", "value"};
    const bool ok =
        has_columns(work / "sim/births_S1.csv",
                    {"cluster", "household", "stratum", "region", "weight", "birth", "obs_end", "death_age"}, why) &&
        has_columns(work / "sim/truth.csv", {"region", "years", "u5mr"}, why) &&
        has_columns(work / "sim/props.csv", {"region", "year", "frame", "q_urban"}, why) &&
        has_columns(work / "sim/target.csv", {"years", "mean"}, why) &&
        has_columns(work / "person_months.csv",
                    {"cluster", "household", "strata", "region", "years", "age", "weight", "died"}, why) &&
        has_columns(work / "counts.csv", {"cluster", "region", "strata", "years", "age", "Y", "total", "survey"}, why) &&
        has_columns(work / "direct.csv", direct, why) && has_columns(work / "aggregated.csv", direct, why) &&
        has_columns(work / "adjusted.csv", direct, why) &&
        probabilities_in_range(work / "direct.csv", {"mean", "lower", "upper"}, why) &&
        has_columns(work / "ratios.csv", {"years", "survey", "ratio"}, why) &&
        has_columns(work / "fit_sd/estimates.csv", smoothed, why) &&
        has_columns(work / "pred_sd/estimates.csv", smoothed, why) &&
        has_columns(work / "pred_cl/estimates.csv", smoothed, why) &&
        probabilities_in_range(work / "pred_cl/estimates.csv", {"median", "lower", "upper"}, why) &&
        has_columns(work / "pred_sd/draws.csv", long_draws, why) &&
        has_columns(work / "pred_cl/draws.csv", long_draws, why) &&
        has_columns(work / "diag_time.csv", diag, why) && has_columns(work / "diag_space.csv", diag, why) &&
        has_columns(work / "diag_st.csv", diag, why) &&
        has_columns(work / "tcp.csv", {"region", "years", "interval", "tcp", "mass.1", "mass.4"}, why) &&
        probabilities_in_range(work / "tcp.csv", {"tcp", "mass.1", "mass.2", "mass.3", "mass.4"}, why) &&
        has_columns(work / "fit_cl/draws.csv", {"rho"}, why) && valid_json(work / "fit_cl/layout.json", why) &&
        valid_json(work / "fit_cl/diagnostics.json", why) && valid_json(work / "fit_sd/diagnostics.json", why) &&
        valid_json(work / "tcp.json", why) && valid_svg(work / "map.svg", why) && valid_svg(work / "hatch.svg", why) &&
        valid_svg(work / "ridge.svg", why);
    if (!ok) {
        return {false, why};
    }
    const auto summary = read_json(work / "tcp.json");
    return {true, fmt::format("{} steps exit 0, artifacts match their schemas; ATCP {:.3f}", steps.size(),
                              summary.at("atcp").get<double>())};
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Acceptance checks"};
    std::string cli;
    std::string work = "acceptance_work";
    std::vector<std::string> only;
    app.add_option("--cli", cli, "Path to the sae_cli binary")->required()->check(CLI::ExistingFile);
    app.add_option("--work", work, "Scratch directory for the end-to-end run");
    app.add_option("--only", only, "Run only the named checks");
    CLI11_PARSE(app, argc, argv);

    struct Check {
        std::string name;
        double limit_seconds;
        std::function<Outcome()> run;
    };
    const std::vector<Check> checks{
        {"estimator-oracle", 10, estimator_oracle},
        {"unbiasedness", 120, unbiasedness},
        {"scaling-invariant", 5, scaling_invariant},
        {"pc-prior-contracts", 30, pc_priors},
        {"inference-oracle", 300, inference_oracle},
        {"shrinkage", 120, shrinkage},
        {"composite-identity", 60, composite_identity},
        {"constraint-suite", 600, constraint_suite},
        {"benchmarking-closure", 180, benchmarking_closure},
        {"tcp-contract", 10, tcp_contract},
        {"end-to-end-cli", 900, [&] { return end_to_end(cli, work); }},
    };
    int failures = 0;
    for (const auto &c : checks) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception &e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.limit_seconds;
        const bool pass = o.pass && in_time;
        failures += pass ? 0 : 1;
        std::cout << fmt::format("{} {}: {} [{:.1f} s, limit {:.0f} s{}]", pass ? "PASS" : "FAIL", c.name, o.detail,
                                 secs, c.limit_seconds, in_time ? "" : ", over time")
                  << std::endl;
    }
    std::cout << fmt::format("{} check(s) failed", failures) << std::endl;
    return failures == 0 ? 0 : 1;
}
