#include "sae/smoothing.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <tuple>

#include <fmt/format.h>

#include "sae/csv.hpp"
#include "sae/stats.hpp"

namespace sae {

namespace {

constexpr double intercept_variance = 31.6 * 31.6;
constexpr const char *default_frame = "frame";

using Lookup = std::function<std::optional<std::size_t>(const std::string &)>;
using Loading = std::map<std::size_t, double>;

Lookup model_lookup(const LatentModel &model) {
    return [&model](const std::string &name) -> std::optional<std::size_t> {
        if (!model.has_component(name)) {
            return std::nullopt;
        }
        return model.component_offset(name);
    };
}

Lookup draws_lookup(const PosteriorDraws &draws) {
    return [&draws](const std::string &name) -> std::optional<std::size_t> {
        if (!draws.has_component(name)) {
            return std::nullopt;
        }
        return draws.component(name).start;
    };
}

void add(Loading &l, const std::optional<std::size_t> &start, std::size_t local, double w) {
    if (start) {
        l[*start + local] += w;
    }
}

Eigen::VectorXd evaluate(const PosteriorDraws &draws, const Loading &l, double offset = 0.0) {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(draws.draws.rows(), offset);
    for (const auto &[col, w] : l) {
        out += w * draws.draws.col(static_cast<Eigen::Index>(col));
    }
    return out;
}

PredictorCell to_cell(const Loading &l, double offset) {
    PredictorCell c;
    c.offset = offset;
    for (const auto &[i, w] : l) {
        c.loading.emplace_back(i, w);
    }
    return c;
}

int walk_order(TemporalModel m) { return m == TemporalModel::rw1 ? 1 : 2; }

std::string model_tag(TemporalModel m) {
    switch (m) {
    case TemporalModel::rw1:
        return "RW1";
    case TemporalModel::rw2:
        return "RW2";
    case TemporalModel::ar1:
        return "AR1";
    case TemporalModel::none:
        break;
    }
    return "none";
}

std::size_t add_hyper(LatentModel &model, std::string name, HyperScale scale, std::function<double(double)> prior,
                      double initial) {
    model.hypers.push_back(Hyperparameter{std::move(name), scale, std::move(prior), initial, false});
    return model.hypers.size() - 1;
}

std::size_t add_sigma(LatentModel &model, const std::string &name, const PCSigmaPrior &prior) {
    return add_hyper(model, name, HyperScale::positive, [prior](double s) { return prior.log_density(s); }, 0.5);
}

std::size_t add_omega(LatentModel &model, const std::string &name, const LatentModelSpec &spec, std::size_t T) {
    auto prior = std::make_shared<PCOmegaPrior>(std::max<std::size_t>(T, 2), spec.pc_cor_u, spec.pc_cor_alpha);
    return add_hyper(model, name, HyperScale::symmetric, [prior](double w) { return prior->log_density(w); }, 0.7);
}

LatentComponent fixed_effects(std::string name, std::vector<std::string> labels) {
    LatentComponent c;
    c.name = std::move(name);
    const auto n = static_cast<Eigen::Index>(labels.size());
    c.labels = std::move(labels);
    c.structure = Eigen::MatrixXd::Identity(n, n);
    c.fixed_variance = intercept_variance;
    return c;
}

/// Temporal main effect on a time-major layout with G parallel groups.
LatentComponent temporal_component(std::string name, std::size_t T, std::size_t G, TemporalModel model,
                                   std::size_t sigma, std::optional<std::size_t> omega,
                                   std::vector<std::string> labels) {
    LatentComponent c;
    c.name = std::move(name);
    c.labels = std::move(labels);
    c.sigma = sigma;
    const Eigen::MatrixXd Ig = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(G), static_cast<Eigen::Index>(G));
    if (model == TemporalModel::ar1) {
        c.ar1_omega = omega;
        c.ar1_length = T;
        if (G > 1) {
            c.ar1_right = Ig;
        }
        return c;
    }
    const auto rw = rw_precision(T, walk_order(model), true);
    c.structure = kronecker(rw.Q, Ig);
    c.constraints = kronecker(rw.null_space.transpose(), Ig);
    return c;
}

/// Spatial main effects, interaction and random slopes shared by both
/// families. Components are appended to the model.
void add_space_terms(LatentModel &model, ModelLayout &layout, const RegionGraph *graph, std::size_t T,
                     std::vector<std::string> &warnings) {
    const auto &spec = layout.spec;
    if (!graph || spec.spatial == SpatialModel::none) {
        return;
    }
    const std::size_t n = graph->size();
    SpatialModel spatial = spec.spatial;
    if (spatial == SpatialModel::bym2 && n < 2) {
        warnings.push_back("a single area cannot carry a structured spatial effect; using iid");
        spatial = SpatialModel::iid;
    }
    StructureMatrix structure = iid_structure(n);
    const std::size_t sigma = add_sigma(model, "sigma.space", spec.pc_sigma);
    LatentComponent unstruct;
    unstruct.name = "space.unstruct";
    unstruct.labels = graph->names();
    unstruct.structure = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    unstruct.sigma = sigma;
    if (spatial == SpatialModel::bym2) {
        structure = icar_precision(*graph, true, &warnings);
        auto phi_prior = std::make_shared<PCPhiPrior>(structure, spec.pc_phi_u, spec.pc_phi_alpha);
        const std::size_t phi =
            add_hyper(model, "phi", HyperScale::unit, [phi_prior](double p) { return phi_prior->log_density(p); }, 0.5);
        unstruct.mixing = phi;
        unstruct.mixing_role = MixingRole::unstructured;
        model.components.push_back(unstruct);
        LatentComponent s;
        s.name = "space.struct";
        s.labels = graph->names();
        s.structure = structure.Q;
        s.constraints = constraints_from_null_space(structure).A;
        s.sigma = sigma;
        s.mixing = phi;
        s.mixing_role = MixingRole::structured;
        model.components.push_back(s);
    } else {
        model.components.push_back(unstruct);
    }

    if (spec.type_st) {
        const auto type = *spec.type_st;
        const TemporalModel tm = spec.interaction_time_model();
        if (tm == TemporalModel::none && (type == InteractionType::II || type == InteractionType::IV)) {
            throw std::invalid_argument("interaction types II and IV need a temporal model");
        }
        const std::size_t sigma_st = add_sigma(model, "sigma.space.time", spec.pc_sigma);
        std::vector<std::string> labels;
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < n; ++i) {
                labels.push_back(fmt::format("{}:{}", graph->names()[i], layout.time_labels[t]));
            }
        }
        LatentComponent c;
        c.name = "space.time";
        c.labels = std::move(labels);
        c.sigma = sigma_st;
        const bool temporal_used = type == InteractionType::II || type == InteractionType::IV;
        if (temporal_used && tm == TemporalModel::ar1) {
            const auto is = interaction_structure(type, ar1_precision(T, 0.5), structure);
            c.constraints = is.constraints.A;
            c.ar1_omega = add_omega(model, "omega.space.time", spec, T);
            c.ar1_length = T;
            c.ar1_right = type == InteractionType::II
                              ? Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))
                              : structure.Q;
        } else {
            const StructureMatrix temporal =
                temporal_used ? rw_precision(T, walk_order(tm), true) : iid_structure(T);
            const auto is = interaction_structure(type, temporal, structure);
            c.structure = is.structure.Q;
            c.constraints = is.constraints.A;
        }
        model.components.push_back(c);
    }
    if (spec.random_slopes) {
        LatentComponent s;
        s.name = "space.slope";
        s.labels = graph->names();
        s.structure = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        const double sd = spec.slope_prior.sd();
        s.fixed_variance = sd * sd;
        if (n > 1) {
            s.constraints = Eigen::MatrixXd::Ones(1, static_cast<Eigen::Index>(n));
        }
        model.components.push_back(s);
    }
}

/// Region and time terms common to both predictors.
void add_area_time_loading(Loading &l, const ModelLayout &layout, const Lookup &lookup, std::size_t i, std::size_t t,
                           double w, bool include_unstruct) {
    const double tau = layout.scaled_time(t);
    const std::size_t n = layout.regions.size();
    if (include_unstruct) {
        add(l, lookup("time.unstruct"), t, w);
    }
    if (!layout.national) {
        add(l, lookup("space.unstruct"), i, w);
        add(l, lookup("space.struct"), i, w);
        add(l, lookup("space.time"), t * n + i, w);
        add(l, lookup("space.slope"), i, w * tau);
    }
}

Loading smooth_direct_loading(const ModelLayout &layout, const Lookup &lookup, std::size_t i, std::size_t t,
                              bool include_unstruct) {
    Loading l;
    add(l, lookup("intercept"), 0, 1.0);
    add(l, lookup("time.struct"), t, 1.0);
    add(l, lookup("time.slope"), 0, layout.scaled_time(t));
    add_area_time_loading(l, layout, lookup, i, t, 1.0, include_unstruct);
    return l;
}

std::size_t strata_width(const ModelLayout &layout) {
    return layout.spec.time_invariant_strata ? 1 : layout.strata.size();
}

Loading cluster_loading(const ModelLayout &layout, const Lookup &lookup, std::size_t i, std::size_t t,
                        std::size_t band, std::size_t s, std::size_t f, bool include_unstruct) {
    const auto schema = layout.schema();
    const std::size_t F = layout.frames.size();
    const std::size_t S = strata_width(layout);
    const std::size_t sk = layout.spec.time_invariant_strata ? 0 : s;
    const std::size_t astar = schema.trend_group_of_band(band);
    const std::size_t G = schema.trend_groups() * S * F;
    const std::size_t g = (astar * S + sk) * F + f;
    Loading l;
    add(l, lookup("intercept"), (band * S + sk) * F + f, 1.0);
    if (layout.spec.time_invariant_strata && s == 1) {
        add(l, lookup("strata.offset"), astar * F + f, 1.0);
    }
    add(l, lookup("time.struct"), t * G + g, 1.0);
    add(l, lookup("time.slope"), g, layout.scaled_time(t));
    add_area_time_loading(l, layout, lookup, i, t, 1.0, include_unstruct);
    return l;
}

void check_time_model(TemporalModel m, std::size_t T) {
    if ((m == TemporalModel::rw1 && T < 2) || (m == TemporalModel::rw2 && T < 3)) {
        throw std::invalid_argument(fmt::format("{} needs more time points than {}", model_tag(m), T));
    }
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

double bias_offset(const std::vector<AdjustmentRatio> &bias, const std::string &period, const std::string &survey) {
    const AdjustmentRatio *generic = nullptr;
    for (const auto &b : bias) {
        if (b.period != period) {
            continue;
        }
        if (b.survey && *b.survey == survey) {
            return std::log(b.ratio);
        }
        if (!b.survey && !generic) {
            generic = &b;
        }
    }
    return generic ? std::log(generic->ratio) : 0.0;
}

SmoothedEstimate summarize_logit(const Eigen::VectorXd &eta, double level) {
    std::vector<double> v(eta.data(), eta.data() + eta.size());
    std::sort(v.begin(), v.end());
    const double a = 0.5 * (1.0 - level);
    SmoothedEstimate e;
    e.median = expit(quantile_sorted(v, 0.5));
    e.lower = expit(quantile_sorted(v, a));
    e.upper = expit(quantile_sorted(v, 1.0 - a));
    e.logit_mean = mean(v);
    e.logit_var = variance(v);
    return e;
}

SmoothedEstimate summarize_probability(const Eigen::VectorXd &p, double level) {
    Eigen::VectorXd eta(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        eta(k) = logit(std::clamp(p(k), 1e-15, 1.0 - 1e-15));
    }
    return summarize_logit(eta, level);
}

} // namespace

// ---------------------------------------------------------------------------
// Spec

TemporalModel parse_temporal_model(const std::string &name) {
    const auto n = lower(name);
    if (n == "rw1") {
        return TemporalModel::rw1;
    }
    if (n == "rw2") {
        return TemporalModel::rw2;
    }
    if (n == "ar1") {
        return TemporalModel::ar1;
    }
    if (n == "none") {
        return TemporalModel::none;
    }
    throw std::invalid_argument(fmt::format("unknown temporal model '{}' (use rw1, rw2, ar1 or none)", name));
}

std::string temporal_model_name(TemporalModel m) {
    switch (m) {
    case TemporalModel::rw1:
        return "rw1";
    case TemporalModel::rw2:
        return "rw2";
    case TemporalModel::ar1:
        return "ar1";
    case TemporalModel::none:
        break;
    }
    return "none";
}

void LatentModelSpec::validate() const {
    if (yearly && m < 2) {
        throw std::invalid_argument("yearly mode needs a period length m of at least 2");
    }
    if (!yearly && m != 1) {
        throw std::invalid_argument("period length m only applies in yearly mode");
    }
    if (random_slopes) {
        const auto tm = interaction_time_model();
        if (tm != TemporalModel::rw1 && tm != TemporalModel::ar1) {
            throw std::invalid_argument("random slopes need an rw1 or ar1 interaction temporal model");
        }
        (void)slope_prior.sd();
    }
    (void)pc_sigma.rate();
    (void)overdispersion.rate();
    for (const auto &b : bias) {
        if (!(b.ratio > 0.0)) {
            throw std::invalid_argument("bias ratios must be positive");
        }
    }
}

LatentModelSpec LatentModelSpec::from_json(const nlohmann::json &j) {
    LatentModelSpec s;
    if (!j.is_object()) {
        throw std::invalid_argument("model spec must be a JSON object");
    }
    static const std::set<std::string> known = {
        "time.model", "st.time.model", "type.st", "linear.trend", "time.unstruct", "include.time.unstruct",
        "spatial", "st.slope", "pc.st.slope.u", "pc.st.slope.alpha", "is.yearly", "m", "year_range",
        "stratified", "strata.time.invariant", "survey.effect", "frames", "bias.adj", "pc.u", "pc.alpha",
        "pc.u.phi", "pc.alpha.phi", "pc.u.cor", "pc.alpha.cor", "overdisp.u", "overdisp.alpha"};
    for (const auto &[key, value] : j.items()) {
        if (!known.contains(key)) {
            throw std::invalid_argument(fmt::format("unknown model spec key '{}'", key));
        }
    }
    auto get_model = [&](const char *key) { return parse_temporal_model(j.at(key).get<std::string>()); };
    if (j.contains("time.model")) {
        s.time_model = get_model("time.model");
    }
    if (j.contains("st.time.model") && !j.at("st.time.model").is_null()) {
        s.st_time_model = get_model("st.time.model");
    }
    if (j.contains("type.st")) {
        const auto &v = j.at("type.st");
        if (v.is_null() || (v.is_number_integer() && v.get<int>() == 0)) {
            s.type_st.reset();
        } else {
            s.type_st = parse_interaction_type(v.get<int>());
        }
    }
    s.linear_trend = j.value("linear.trend", s.linear_trend);
    s.time_unstruct = j.value("time.unstruct", s.time_unstruct);
    if (j.contains("include.time.unstruct") && !j.at("include.time.unstruct").is_null()) {
        s.predict_time_unstruct = j.at("include.time.unstruct").get<bool>();
    }
    if (j.contains("spatial")) {
        const auto v = lower(j.at("spatial").get<std::string>());
        if (v == "bym2") {
            s.spatial = SpatialModel::bym2;
        } else if (v == "iid") {
            s.spatial = SpatialModel::iid;
        } else if (v == "none") {
            s.spatial = SpatialModel::none;
        } else {
            throw std::invalid_argument(fmt::format("unknown spatial model '{}'", v));
        }
    }
    s.random_slopes = j.value("st.slope", s.random_slopes);
    s.slope_prior.U = j.value("pc.st.slope.u", s.slope_prior.U);
    s.slope_prior.alpha = j.value("pc.st.slope.alpha", s.slope_prior.alpha);
    s.yearly = j.value("is.yearly", s.yearly);
    s.m = j.value("m", s.m);
    if (j.contains("year_range")) {
        s.first_year = j.at("year_range").at(0).get<int>();
    }
    s.stratified = j.value("stratified", s.stratified);
    s.time_invariant_strata = j.value("strata.time.invariant", s.time_invariant_strata);
    s.survey_effect = j.value("survey.effect", s.survey_effect);
    if (j.contains("frames")) {
        s.survey_frame = j.at("frames").get<std::map<std::string, std::string>>();
    }
    if (j.contains("bias.adj")) {
        for (const auto &b : j.at("bias.adj")) {
            AdjustmentRatio r;
            r.period = b.at("years").get<std::string>();
            if (b.contains("survey") && !b.at("survey").is_null()) {
                r.survey = b.at("survey").get<std::string>();
            }
            r.ratio = b.at("ratio").get<double>();
            s.bias.push_back(r);
        }
    }
    s.pc_sigma.U = j.value("pc.u", s.pc_sigma.U);
    s.pc_sigma.alpha = j.value("pc.alpha", s.pc_sigma.alpha);
    s.pc_phi_u = j.value("pc.u.phi", s.pc_phi_u);
    s.pc_phi_alpha = j.value("pc.alpha.phi", s.pc_phi_alpha);
    s.pc_cor_u = j.value("pc.u.cor", s.pc_cor_u);
    s.pc_cor_alpha = j.value("pc.alpha.cor", s.pc_cor_alpha);
    s.overdispersion.U = j.value("overdisp.u", s.overdispersion.U);
    s.overdispersion.alpha = j.value("overdisp.alpha", s.overdispersion.alpha);
    s.validate();
    return s;
}

nlohmann::json LatentModelSpec::to_json() const {
    nlohmann::json j;
    j["time.model"] = temporal_model_name(time_model);
    j["st.time.model"] = st_time_model ? nlohmann::json(temporal_model_name(*st_time_model)) : nlohmann::json(nullptr);
    j["type.st"] = type_st ? static_cast<int>(*type_st) : 0;
    j["linear.trend"] = linear_trend;
    j["time.unstruct"] = time_unstruct;
    j["include.time.unstruct"] = predict_time_unstruct ? nlohmann::json(*predict_time_unstruct) : nlohmann::json(nullptr);
    j["spatial"] = spatial == SpatialModel::bym2 ? "bym2" : spatial == SpatialModel::iid ? "iid" : "none";
    j["st.slope"] = random_slopes;
    j["pc.st.slope.u"] = slope_prior.U;
    j["pc.st.slope.alpha"] = slope_prior.alpha;
    j["is.yearly"] = yearly;
    j["m"] = m;
    j["year_range"] = {first_year, first_year};
    j["stratified"] = stratified;
    j["strata.time.invariant"] = time_invariant_strata;
    j["survey.effect"] = survey_effect;
    j["frames"] = survey_frame;
    nlohmann::json bias_rows = nlohmann::json::array();
    for (const auto &b : bias) {
        bias_rows.push_back({{"years", b.period},
                             {"survey", b.survey ? nlohmann::json(*b.survey) : nlohmann::json(nullptr)},
                             {"ratio", b.ratio}});
    }
    j["bias.adj"] = bias_rows;
    j["pc.u"] = pc_sigma.U;
    j["pc.alpha"] = pc_sigma.alpha;
    j["pc.u.phi"] = pc_phi_u;
    j["pc.alpha.phi"] = pc_phi_alpha;
    j["pc.u.cor"] = pc_cor_u;
    j["pc.alpha.cor"] = pc_cor_alpha;
    j["overdisp.u"] = overdispersion.U;
    j["overdisp.alpha"] = overdispersion.alpha;
    return j;
}

// ---------------------------------------------------------------------------
// Layout

AgeBandSchema ModelLayout::schema() const { return AgeBandSchema(month_cuts, trend_cuts); }

std::size_t ModelLayout::region_index(const std::string &name) const {
    auto it = std::find(regions.begin(), regions.end(), name);
    if (it == regions.end()) {
        throw std::invalid_argument(fmt::format("region '{}' is not part of the model", name));
    }
    return static_cast<std::size_t>(it - regions.begin());
}

std::size_t ModelLayout::time_index(const std::string &label) const {
    auto it = std::find(time_labels.begin(), time_labels.end(), label);
    if (it == time_labels.end()) {
        throw std::invalid_argument(fmt::format("time '{}' is not part of the model", label));
    }
    return static_cast<std::size_t>(it - time_labels.begin());
}

double ModelLayout::scaled_time(std::size_t t) const {
    if (time_labels.size() < 2) {
        return 0.0;
    }
    return static_cast<double>(t) / static_cast<double>(time_labels.size() - 1) - 0.5;
}

bool ModelLayout::include_time_unstruct() const {
    return spec.predict_time_unstruct.value_or(family == ModelFamily::smooth_direct);
}

nlohmann::json ModelLayout::to_json() const {
    nlohmann::json j;
    j["family"] = family == ModelFamily::smooth_direct ? "smooth-direct" : "cluster";
    j["spec"] = spec.to_json();
    j["spec"]["year_range"] = {spec.first_year, spec.first_year};
    j["regions"] = regions;
    j["national"] = national;
    j["periods"] = period_labels;
    j["times"] = time_labels;
    j["time_observed"] = time_observed;
    j["strata"] = strata;
    j["frames"] = frames;
    j["month_cuts"] = month_cuts;
    j["trend_cuts"] = trend_cuts;
    return j;
}

ModelLayout ModelLayout::from_json(const nlohmann::json &j) {
    ModelLayout l;
    const auto fam = j.at("family").get<std::string>();
    if (fam == "smooth-direct") {
        l.family = ModelFamily::smooth_direct;
    } else if (fam == "cluster") {
        l.family = ModelFamily::cluster;
    } else {
        throw std::invalid_argument(fmt::format("unknown model family '{}'", fam));
    }
    l.spec = LatentModelSpec::from_json(j.at("spec"));
    l.regions = j.at("regions").get<std::vector<std::string>>();
    l.national = j.at("national").get<bool>();
    l.period_labels = j.at("periods").get<std::vector<std::string>>();
    l.time_labels = j.at("times").get<std::vector<std::string>>();
    l.time_observed = j.at("time_observed").get<std::vector<bool>>();
    l.strata = j.at("strata").get<std::vector<std::string>>();
    l.frames = j.at("frames").get<std::vector<std::string>>();
    l.month_cuts = j.at("month_cuts").get<std::vector<int>>();
    l.trend_cuts = j.at("trend_cuts").get<std::vector<int>>();
    return l;
}

// ---------------------------------------------------------------------------
// Smoothed direct

BuiltModel build_smooth_direct(const std::vector<DirectEstimate> &direct, const RegionGraph *graph,
                               const std::vector<std::string> &period_labels, const LatentModelSpec &spec) {
    spec.validate();
    if (period_labels.empty()) {
        throw std::invalid_argument("smoothed direct model needs at least one period label");
    }
    BuiltModel out;
    auto &layout = out.layout;
    layout.family = ModelFamily::smooth_direct;
    layout.spec = spec;
    layout.national = graph == nullptr;
    layout.regions = graph ? graph->names() : std::vector<std::string>{national_label};
    layout.period_labels = period_labels;
    layout.strata = {"all"};
    layout.frames = {default_frame};
    layout.month_cuts = {1};
    const std::size_t P = period_labels.size();
    const std::size_t m = spec.yearly ? static_cast<std::size_t>(spec.m) : 1;
    if (spec.yearly) {
        for (std::size_t y = 0; y < P * m; ++y) {
            layout.time_labels.push_back(std::to_string(spec.first_year + static_cast<int>(y)));
        }
    } else {
        layout.time_labels = period_labels;
    }
    const std::size_t T = layout.time_labels.size();
    layout.time_observed.assign(T, false);

    // Observations
    struct Obs {
        std::size_t region, period;
        double y, var;
    };
    std::vector<Obs> obs;
    for (const auto &d : direct) {
        const bool is_national = d.region == national_label;
        if (is_national != layout.national || !d.stats) {
            continue;
        }
        auto pit = std::find(period_labels.begin(), period_labels.end(), d.period);
        if (pit == period_labels.end()) {
            throw std::invalid_argument(fmt::format("direct estimate period '{}' is not among the period labels", d.period));
        }
        std::size_t region = 0;
        if (graph) {
            if (!graph->contains(d.region)) {
                throw std::invalid_argument(fmt::format("region '{}' is missing from the adjacency graph", d.region));
            }
            region = graph->index(d.region);
        }
        if (!(d.stats->var_est > 0.0) || !std::isfinite(d.stats->logit_est)) {
            throw std::invalid_argument(
                fmt::format("direct estimate for {} {} needs a finite logit and positive variance", d.region, d.period));
        }
        obs.push_back({region, static_cast<std::size_t>(pit - period_labels.begin()), d.stats->logit_est, d.stats->var_est});
    }
    if (obs.empty()) {
        throw std::invalid_argument("no usable direct estimates for the smoothed direct model");
    }

    LatentModel &model = out.model;
    model.likelihood = Likelihood::gaussian;
    model.components.push_back(fixed_effects("intercept", {"(Intercept)"}));
    if (spec.time_model != TemporalModel::none) {
        check_time_model(spec.time_model, T);
        const std::size_t sigma = add_sigma(model, "sigma.time", spec.pc_sigma);
        std::optional<std::size_t> omega;
        if (spec.time_model == TemporalModel::ar1) {
            omega = add_omega(model, "omega.time", spec, T);
        }
        model.components.push_back(
            temporal_component("time.struct", T, 1, spec.time_model, sigma, omega, layout.time_labels));
        if (spec.linear_trend && spec.time_model != TemporalModel::rw1 && T > 1) {
            model.components.push_back(fixed_effects("time.slope", {"slope"}));
        }
    }
    if (spec.time_unstruct) {
        LatentComponent c;
        c.name = "time.unstruct";
        c.labels = layout.time_labels;
        c.structure = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T));
        c.sigma = add_sigma(model, "sigma.time.iid", spec.pc_sigma);
        model.components.push_back(c);
    }
    add_space_terms(model, layout, graph, T, out.warnings);

    const auto lookup = model_lookup(model);
    for (const auto &o : obs) {
        Loading l;
        for (std::size_t k = 0; k < m; ++k) {
            const std::size_t t = o.period * m + k;
            layout.time_observed[t] = true;
            for (const auto &[i, w] : smooth_direct_loading(layout, lookup, o.region, t, true)) {
                l[i] += w / static_cast<double>(m);
            }
        }
        const std::size_t cell = model.add_cell(to_cell(l, 0.0));
        model.gaussian.push_back(GaussianObservation{cell, o.y, o.var});
    }
    model.validate();
    return out;
}

Eigen::VectorXd smooth_direct_predictor(const PosteriorDraws &draws, const ModelLayout &layout, std::size_t region,
                                        std::size_t time) {
    return evaluate(draws, smooth_direct_loading(layout, draws_lookup(draws), region, time, layout.include_time_unstruct()));
}

std::vector<SmoothedEstimate> smoothed_direct_estimates(const PosteriorDraws &draws, const ModelLayout &layout,
                                                        double level) {
    if (layout.family != ModelFamily::smooth_direct) {
        throw std::invalid_argument("smoothed direct summaries need a smoothed direct fit");
    }
    std::vector<SmoothedEstimate> out;
    const std::size_t m = layout.spec.yearly ? static_cast<std::size_t>(layout.spec.m) : 1;
    for (std::size_t i = 0; i < layout.regions.size(); ++i) {
        std::vector<Eigen::VectorXd> per_time;
        for (std::size_t t = 0; t < layout.time_labels.size(); ++t) {
            per_time.push_back(smooth_direct_predictor(draws, layout, i, t));
            auto e = summarize_logit(per_time.back(), level);
            e.region = layout.regions[i];
            e.period = layout.time_labels[t];
            e.is_projection = !layout.time_observed[t];
            out.push_back(e);
        }
        if (m > 1) {
            for (std::size_t p = 0; p < layout.period_labels.size(); ++p) {
                Eigen::VectorXd avg = Eigen::VectorXd::Zero(draws.draws.rows());
                bool observed = false;
                for (std::size_t k = 0; k < m; ++k) {
                    avg += per_time[p * m + k] / static_cast<double>(m);
                    observed = observed || layout.time_observed[p * m + k];
                }
                auto e = summarize_logit(avg, level);
                e.region = layout.regions[i];
                e.period = layout.period_labels[p];
                e.is_projection = !observed;
                out.push_back(e);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cluster model

std::optional<std::string> stratum_kind(const std::string &label) {
    const auto l = lower(label);
    auto ends_with = [&](const std::string &suffix) {
        return l.size() >= suffix.size() && l.compare(l.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with("urban")) {
        return std::string("urban");
    }
    if (ends_with("rural")) {
        return std::string("rural");
    }
    return std::nullopt;
}

BuiltModel build_smooth_cluster(const std::vector<ClusterCounts> &counts, const RegionGraph *graph,
                                const std::vector<std::string> &period_labels, const LatentModelSpec &spec,
                                const AgeBandSchema &schema) {
    spec.validate();
    if (spec.yearly) {
        throw std::invalid_argument("the cluster model works on the count periods directly; yearly mode is not available");
    }
    if (counts.empty()) {
        throw std::invalid_argument("no count rows for the cluster model");
    }
    BuiltModel out;
    auto &layout = out.layout;
    layout.family = ModelFamily::cluster;
    layout.spec = spec;
    layout.national = graph == nullptr;
    layout.regions = graph ? graph->names() : std::vector<std::string>{national_label};
    layout.period_labels = period_labels;
    layout.time_labels = period_labels;
    layout.month_cuts = schema.month_cuts();
    layout.trend_cuts = schema.trend_cuts();
    const std::size_t T = period_labels.size();
    layout.time_observed.assign(T, false);

    // Strata
    bool any_stratum = false;
    for (const auto &c : counts) {
        if (!csv::is_missing(c.stratum)) {
            any_stratum = true;
        }
    }
    const bool stratified = spec.stratified && any_stratum;
    layout.strata = stratified ? std::vector<std::string>{"urban", "rural"} : std::vector<std::string>{"all"};
    if (!stratified && spec.time_invariant_strata) {
        layout.spec.time_invariant_strata = false;
    }

    // Surveys and frames
    std::vector<std::string> surveys;
    for (const auto &c : counts) {
        if (std::find(surveys.begin(), surveys.end(), c.survey) == surveys.end()) {
            surveys.push_back(c.survey);
        }
    }
    auto frame_of = [&](const std::string &survey) {
        auto it = spec.survey_frame.find(survey);
        return it == spec.survey_frame.end() ? std::string(default_frame) : it->second;
    };
    for (const auto &s : surveys) {
        const auto f = frame_of(s);
        if (std::find(layout.frames.begin(), layout.frames.end(), f) == layout.frames.end()) {
            layout.frames.push_back(f);
        }
    }
    auto frame_index = [&](const std::string &survey) {
        return static_cast<std::size_t>(std::find(layout.frames.begin(), layout.frames.end(), frame_of(survey)) -
                                        layout.frames.begin());
    };

    const std::size_t F = layout.frames.size();
    const std::size_t S = strata_width(layout);
    const std::size_t A = schema.trend_groups();
    const std::size_t B = schema.bands();
    auto join = [](std::vector<std::string> parts) {
        std::string s;
        for (const auto &p : parts) {
            if (p.empty()) {
                continue;
            }
            s += (s.empty() ? "" : ":") + p;
        }
        return s;
    };
    auto stratum_part = [&](std::size_t s) { return S > 1 ? layout.strata[s] : std::string(); };
    auto frame_part = [&](std::size_t f) { return F > 1 ? layout.frames[f] : std::string(); };

    LatentModel &model = out.model;
    model.likelihood = Likelihood::betabinomial;
    {
        std::vector<std::string> labels;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t s = 0; s < S; ++s) {
                for (std::size_t f = 0; f < F; ++f) {
                    labels.push_back(join({schema.band_label(b), stratum_part(s), frame_part(f)}));
                }
            }
        }
        model.components.push_back(fixed_effects("intercept", labels));
    }
    if (layout.spec.time_invariant_strata) {
        std::vector<std::string> labels;
        for (std::size_t a = 0; a < A; ++a) {
            for (std::size_t f = 0; f < F; ++f) {
                labels.push_back(join({schema.trend_label(a), frame_part(f)}));
            }
        }
        model.components.push_back(fixed_effects("strata.offset", labels));
    }
    std::vector<std::string> groups;
    for (std::size_t a = 0; a < A; ++a) {
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t f = 0; f < F; ++f) {
                groups.push_back(join({schema.trend_label(a), stratum_part(s), frame_part(f)}));
            }
        }
    }
    const std::size_t G = groups.size();
    if (spec.time_model != TemporalModel::none) {
        check_time_model(spec.time_model, T);
        const std::size_t sigma = add_sigma(model, "sigma.time", spec.pc_sigma);
        std::optional<std::size_t> omega;
        if (spec.time_model == TemporalModel::ar1) {
            omega = add_omega(model, "omega.time", spec, T);
        }
        std::vector<std::string> labels;
        for (std::size_t t = 0; t < T; ++t) {
            for (const auto &g : groups) {
                labels.push_back(fmt::format("{}:{}", g, period_labels[t]));
            }
        }
        model.components.push_back(temporal_component("time.struct", T, G, spec.time_model, sigma, omega, labels));
        if (spec.linear_trend && spec.time_model != TemporalModel::rw1 && T > 1) {
            model.components.push_back(fixed_effects("time.slope", groups));
        }
    }
    if (spec.time_unstruct) {
        LatentComponent c;
        c.name = "time.unstruct";
        c.labels = layout.time_labels;
        c.structure = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T));
        c.sigma = add_sigma(model, "sigma.time.iid", spec.pc_sigma);
        model.components.push_back(c);
    }
    add_space_terms(model, layout, graph, T, out.warnings);
    if (spec.survey_effect) {
        LatentComponent c = fixed_effects("survey.effect", surveys);
        Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(surveys.size()));
        std::vector<int> per_frame(F, 0);
        for (std::size_t k = 0; k < surveys.size(); ++k) {
            const auto f = frame_index(surveys[k]);
            C(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k)) = 1.0;
            per_frame[f] += 1;
        }
        for (std::size_t f = 0; f < F; ++f) {
            if (per_frame[f] == 1) {
                out.warnings.push_back(fmt::format(
                    "frame '{}' has a single survey; its survey effect is fixed at zero", layout.frames[f]));
            }
        }
        c.constraints = C;
        model.components.push_back(c);
    }
    const std::size_t rho = add_hyper(
        model, "rho", HyperScale::unit, [prior = spec.overdispersion](double r) { return prior.log_density(r); }, 0.02);
    model.overdispersion = rho;

    const auto lookup = model_lookup(model);
    const auto survey_start = lookup("survey.effect");
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t>, std::size_t> cell_of;
    for (const auto &row : counts) {
        if (row.exposure <= 0) {
            throw std::invalid_argument(fmt::format("count row for cluster {} has no exposure", row.cluster));
        }
        if (row.period >= T) {
            throw std::invalid_argument(fmt::format("count row period index {} exceeds the period labels", row.period));
        }
        if (row.band >= B) {
            throw std::invalid_argument(fmt::format("count row band index {} exceeds the age schema", row.band));
        }
        std::size_t region = 0;
        if (graph) {
            if (!graph->contains(row.region)) {
                throw std::invalid_argument(fmt::format("region '{}' is missing from the adjacency graph", row.region));
            }
            region = graph->index(row.region);
        }
        std::size_t s = 0;
        if (stratified) {
            const auto kind = stratum_kind(row.stratum);
            if (!kind) {
                throw std::invalid_argument(
                    fmt::format("stratum '{}' is neither urban nor rural; clear the strata for an unstratified fit", row.stratum));
            }
            s = *kind == "urban" ? 0 : 1;
        }
        const std::size_t k = static_cast<std::size_t>(std::find(surveys.begin(), surveys.end(), row.survey) - surveys.begin());
        const auto key = std::make_tuple(region, row.period, row.band, s, k);
        auto it = cell_of.find(key);
        if (it == cell_of.end()) {
            Loading l = cluster_loading(layout, lookup, region, row.period, row.band, s, frame_index(row.survey), true);
            add(l, survey_start, k, 1.0);
            const double offset = bias_offset(spec.bias, period_labels[row.period], row.survey);
            it = cell_of.emplace(key, model.add_cell(to_cell(l, offset))).first;
        }
        layout.time_observed[row.period] = true;
        model.counts.push_back(CountObservation{it->second, row.deaths, row.exposure});
    }
    model.validate();
    return out;
}

Eigen::VectorXd cluster_predictor(const PosteriorDraws &draws, const ModelLayout &layout, std::size_t region,
                                  std::size_t time, std::size_t band, std::size_t stratum, std::size_t frame) {
    return evaluate(draws, cluster_loading(layout, draws_lookup(draws), region, time, band, stratum, frame,
                                           layout.include_time_unstruct()));
}

std::size_t StratifiedDraws::cell(std::size_t region, std::size_t time, std::size_t stratum, std::size_t frame) const {
    return ((region * times.size() + time) * strata.size() + stratum) * frames.size() + frame;
}

StratifiedDraws predict_u5mr(const PosteriorDraws &draws, const ModelLayout &layout) {
    if (layout.family != ModelFamily::cluster) {
        throw std::invalid_argument("U5MR prediction needs a cluster model fit");
    }
    if (!draws.has_component("intercept")) {
        throw std::invalid_argument("draws carry no intercepts");
    }
    const auto schema = layout.schema();
    const auto z = schema.band_lengths();
    StratifiedDraws out;
    out.regions = layout.regions;
    out.times = layout.time_labels;
    out.strata = layout.strata;
    out.frames = layout.frames;
    out.time_observed = layout.time_observed;
    const auto n_cells = out.regions.size() * out.times.size() * out.strata.size() * out.frames.size();
    out.values.resize(draws.draws.rows(), static_cast<Eigen::Index>(n_cells));
    const auto expected = schema.bands() * strata_width(layout) * layout.frames.size();
    if (draws.component("intercept").size != expected) {
        throw std::invalid_argument("draws do not match the model layout (intercept count differs)");
    }
    for (std::size_t i = 0; i < out.regions.size(); ++i) {
        for (std::size_t t = 0; t < out.times.size(); ++t) {
            for (std::size_t s = 0; s < out.strata.size(); ++s) {
                for (std::size_t f = 0; f < out.frames.size(); ++f) {
                    Eigen::VectorXd log_survival = Eigen::VectorXd::Zero(draws.draws.rows());
                    for (std::size_t b = 0; b < schema.bands(); ++b) {
                        const Eigen::VectorXd eta = cluster_predictor(draws, layout, i, t, b, s, f);
                        for (Eigen::Index d = 0; d < eta.size(); ++d) {
                            // log(1 - expit(eta)) = -log(1 + exp(eta))
                            const double e = eta(d);
                            const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
                            log_survival(d) -= static_cast<double>(z[b]) * softplus;
                        }
                    }
                    out.values.col(static_cast<Eigen::Index>(out.cell(i, t, s, f))) =
                        log_survival.unaryExpr([](double v) { return -std::expm1(v); });
                }
            }
        }
    }
    return out;
}

std::size_t OverallDraws::cell(std::size_t region, std::size_t time, std::size_t frame) const {
    return (region * times.size() + time) * frames.size() + frame;
}

std::optional<OverallDraws> aggregate_strata(const StratifiedDraws &stratified,
                                             const std::vector<StrataProportions> &props) {
    OverallDraws out;
    out.regions = stratified.regions;
    out.times = stratified.times;
    out.frames = stratified.frames;
    out.time_observed = stratified.time_observed;
    const auto n = out.regions.size() * out.times.size() * out.frames.size();
    out.values.resize(stratified.values.rows(), static_cast<Eigen::Index>(n));
    if (stratified.strata.size() == 1) {
        for (std::size_t i = 0; i < out.regions.size(); ++i) {
            for (std::size_t t = 0; t < out.times.size(); ++t) {
                for (std::size_t f = 0; f < out.frames.size(); ++f) {
                    out.values.col(static_cast<Eigen::Index>(out.cell(i, t, f))) =
                        stratified.values.col(static_cast<Eigen::Index>(stratified.cell(i, t, 0, f)));
                }
            }
        }
        return out;
    }
    if (props.empty()) {
        return std::nullopt;
    }
    auto urban = std::find(stratified.strata.begin(), stratified.strata.end(), "urban");
    auto rural = std::find(stratified.strata.begin(), stratified.strata.end(), "rural");
    if (urban == stratified.strata.end() || rural == stratified.strata.end()) {
        throw std::invalid_argument("strata proportions need urban and rural strata");
    }
    const auto su = static_cast<std::size_t>(urban - stratified.strata.begin());
    const auto sr = static_cast<std::size_t>(rural - stratified.strata.begin());
    for (const auto &p : props) {
        if (!(p.q >= 0.0 && p.q <= 1.0)) {
            throw std::invalid_argument(fmt::format("urban proportion {} for {} {} lies outside [0, 1]", p.q, p.region, p.year));
        }
    }
    for (std::size_t i = 0; i < out.regions.size(); ++i) {
        for (std::size_t t = 0; t < out.times.size(); ++t) {
            for (std::size_t f = 0; f < out.frames.size(); ++f) {
                const StrataProportions *match = nullptr;
                for (const auto &p : props) {
                    if (p.region == out.regions[i] && p.year == out.times[t] &&
                        (p.frame.empty() || p.frame == out.frames[f])) {
                        if (!match || (!p.frame.empty() && match->frame.empty())) {
                            match = &p;
                        }
                    }
                }
                if (!match) {
                    throw std::invalid_argument(
                        fmt::format("no urban proportion for region {} in {}", out.regions[i], out.times[t]));
                }
                const double q = match->q;
                out.values.col(static_cast<Eigen::Index>(out.cell(i, t, f))) =
                    q * stratified.values.col(static_cast<Eigen::Index>(stratified.cell(i, t, su, f))) +
                    (1.0 - q) * stratified.values.col(static_cast<Eigen::Index>(stratified.cell(i, t, sr, f)));
            }
        }
    }
    return out;
}

std::vector<double> frame_weights(const std::vector<double> &logit_variances) {
    if (logit_variances.empty()) {
        throw std::invalid_argument("frame combination needs at least one frame");
    }
    std::vector<double> w;
    double total = 0.0;
    for (double v : logit_variances) {
        if (!(v > 0.0)) {
            throw std::invalid_argument("frame combination needs positive variances");
        }
        w.push_back(1.0 / v);
        total += 1.0 / v;
    }
    for (auto &x : w) {
        x /= total;
    }
    return w;
}

Eigen::MatrixXd combine_frames(const OverallDraws &overall) {
    const auto R = overall.regions.size();
    const auto T = overall.times.size();
    const auto F = overall.frames.size();
    if (F == 0) {
        throw std::invalid_argument("frame combination needs at least one frame");
    }
    Eigen::MatrixXd out(overall.values.rows(), static_cast<Eigen::Index>(R * T));
    for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t t = 0; t < T; ++t) {
            const auto col = static_cast<Eigen::Index>(i * T + t);
            if (F == 1) {
                out.col(col) = overall.values.col(static_cast<Eigen::Index>(overall.cell(i, t, 0)));
                continue;
            }
            std::vector<Eigen::VectorXd> logits;
            std::vector<double> vars;
            for (std::size_t f = 0; f < F; ++f) {
                Eigen::VectorXd l = overall.values.col(static_cast<Eigen::Index>(overall.cell(i, t, f)))
                                        .unaryExpr([](double p) { return logit(std::clamp(p, 1e-15, 1.0 - 1e-15)); });
                std::vector<double> v(l.data(), l.data() + l.size());
                vars.push_back(variance(v));
                logits.push_back(std::move(l));
            }
            const auto w = frame_weights(vars);
            Eigen::VectorXd combined = Eigen::VectorXd::Zero(overall.values.rows());
            for (std::size_t f = 0; f < F; ++f) {
                combined += w[f] * logits[f];
            }
            out.col(col) = combined.unaryExpr([](double v) { return expit(v); });
        }
    }
    return out;
}

std::vector<SmoothedEstimate> summarize_stratified(const StratifiedDraws &draws, double level) {
    std::vector<SmoothedEstimate> out;
    for (std::size_t i = 0; i < draws.regions.size(); ++i) {
        for (std::size_t t = 0; t < draws.times.size(); ++t) {
            for (std::size_t s = 0; s < draws.strata.size(); ++s) {
                for (std::size_t f = 0; f < draws.frames.size(); ++f) {
                    auto e = summarize_probability(draws.values.col(static_cast<Eigen::Index>(draws.cell(i, t, s, f))), level);
                    e.region = draws.regions[i];
                    e.period = draws.times[t];
                    e.stratum = draws.frames.size() > 1 ? draws.strata[s] + ":" + draws.frames[f] : draws.strata[s];
                    e.is_projection = !draws.time_observed[t];
                    out.push_back(e);
                }
            }
        }
    }
    return out;
}

std::vector<SmoothedEstimate> summarize_overall(const OverallDraws &overall, double level) {
    const Eigen::MatrixXd combined = combine_frames(overall);
    std::vector<SmoothedEstimate> out;
    const auto T = overall.times.size();
    for (std::size_t i = 0; i < overall.regions.size(); ++i) {
        for (std::size_t t = 0; t < T; ++t) {
            auto e = summarize_probability(combined.col(static_cast<Eigen::Index>(i * T + t)), level);
            e.region = overall.regions[i];
            e.period = overall.times[t];
            e.is_projection = !overall.time_observed[t];
            out.push_back(e);
        }
    }
    return out;
}

BenchmarkResult benchmark_to_series(const std::vector<SmoothedEstimate> &estimates,
                                    const std::vector<std::pair<std::string, double>> &target) {
    BenchmarkResult out;
    for (const auto &e : estimates) {
        if (e.region != national_label || e.stratum) {
            continue;
        }
        auto it = std::find_if(target.begin(), target.end(), [&](const auto &p) { return p.first == e.period; });
        if (it == target.end()) {
            out.warnings.push_back(fmt::format("no target value for {}; row omitted", e.period));
            continue;
        }
        if (!(it->second > 0.0)) {
            throw std::invalid_argument(fmt::format("target value for {} must be positive", e.period));
        }
        out.ratios.push_back(AdjustmentRatio{e.period, std::nullopt, e.median / it->second});
    }
    if (out.ratios.empty()) {
        throw std::invalid_argument("benchmarking needs national estimates that overlap the target years");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

std::vector<DiagnosticRow> extract_diagnostics(const PosteriorDraws &draws, const ModelLayout &layout,
                                               const std::string &field, double level) {
    std::vector<std::string> available;
    if (draws.has_component("time.struct") || draws.has_component("time.unstruct")) {
        available.push_back("time");
    }
    if (draws.has_component("space.unstruct")) {
        available.push_back("space");
    }
    if (draws.has_component("space.time") || draws.has_component("space.slope")) {
        available.push_back("spacetime");
    }
    if (std::find(available.begin(), available.end(), field) == available.end()) {
        std::string list;
        for (const auto &a : available) {
            list += (list.empty() ? "" : ", ") + a;
        }
        throw std::invalid_argument(fmt::format("field '{}' is not available; choose one of: {}", field, list));
    }
    const double a = 0.5 * (1.0 - level);
    std::vector<DiagnosticRow> out;
    auto push = [&](const std::string &component, const std::string &group, const std::string &label,
                    const Eigen::VectorXd &v) {
        std::vector<double> s(v.data(), v.data() + v.size());
        std::sort(s.begin(), s.end());
        out.push_back(DiagnosticRow{field, component, group, label, quantile_sorted(s, 0.5), quantile_sorted(s, a),
                                    quantile_sorted(s, 1.0 - a), mean(s)});
    };
    auto column = [&](const std::string &comp, std::size_t k) {
        return Eigen::VectorXd(draws.draws.col(static_cast<Eigen::Index>(draws.component(comp).start + k)));
    };
    const std::size_t T = layout.time_labels.size();
    if (field == "time") {
        if (draws.has_component("time.struct")) {
            const auto tag = model_tag(layout.spec.time_model);
            const auto &comp = draws.component("time.struct");
            const std::size_t G = comp.size / T;
            std::vector<std::string> group_names(G);
            if (layout.family == ModelFamily::cluster) {
                for (std::size_t g = 0; g < G; ++g) {
                    const auto &lab = comp.labels[g];
                    group_names[g] = lab.substr(0, lab.rfind(':'));
                }
            }
            for (std::size_t g = 0; g < G; ++g) {
                for (std::size_t t = 0; t < T; ++t) {
                    Eigen::VectorXd v = column("time.struct", t * G + g);
                    if (draws.has_component("time.slope")) {
                        v += layout.scaled_time(t) * column("time.slope", g);
                    }
                    push(tag, group_names[g], layout.time_labels[t], v);
                }
            }
        }
        if (draws.has_component("time.unstruct")) {
            for (std::size_t t = 0; t < T; ++t) {
                push("IID", "", layout.time_labels[t], column("time.unstruct", t));
            }
        }
    } else if (field == "space") {
        for (std::size_t i = 0; i < layout.regions.size(); ++i) {
            Eigen::VectorXd e = column("space.unstruct", i);
            Eigen::VectorXd total = e;
            if (draws.has_component("space.struct")) {
                const Eigen::VectorXd s = column("space.struct", i);
                total += s;
                push("Structured", "", layout.regions[i], s);
                push("Unstructured", "", layout.regions[i], e);
            }
            push("Total", "", layout.regions[i], total);
        }
    } else {
        const std::size_t n = layout.regions.size();
        if (draws.has_component("space.time")) {
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t i = 0; i < n; ++i) {
                    push("Interaction", layout.regions[i], layout.time_labels[t], column("space.time", t * n + i));
                }
            }
        }
        if (draws.has_component("space.slope")) {
            for (std::size_t i = 0; i < n; ++i) {
                push("Slope", layout.regions[i], "", column("space.slope", i));
            }
        }
    }
    return out;
}

} // namespace sae
