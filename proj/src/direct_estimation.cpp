#include "sae/direct_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

#include "sae/stats.hpp"

namespace sae {

DirectStats stats_from_logit(double logit_est, double var_est, double level) {
    const double half = interval_z(level) * std::sqrt(var_est);
    DirectStats s;
    s.logit_est = logit_est;
    s.var_est = var_est;
    s.mean = expit(logit_est);
    s.lower = expit(logit_est - half);
    s.upper = expit(logit_est + half);
    return s;
}

HTResult ht_estimate(std::span<const double> y, std::span<const double> w) {
    if (y.empty() || y.size() != w.size()) {
        throw std::invalid_argument("ht_estimate needs equally sized, non-empty outcome and weight lists");
    }
    double num = 0.0;
    double den = 0.0;
    bool all_equal = true;
    for (std::size_t j = 0; j < y.size(); ++j) {
        if (!(w[j] > 0.0)) {
            throw std::invalid_argument("design weights must be positive");
        }
        num += w[j] * y[j];
        den += w[j];
        all_equal = all_equal && y[j] == y[0];
    }
    return HTResult{num / den, all_equal};
}

std::optional<double> logit_delta_variance(double p, double var_p) {
    if (!(p > 0.0 && p < 1.0)) {
        return std::nullopt;
    }
    const double d = p * (1.0 - p);
    return var_p / (d * d);
}

namespace {

// Lets the estimators run over records or over pointers into a larger table.
const PersonMonthRecord &record(const PersonMonthRecord &pm) { return pm; }
const PersonMonthRecord &record(const PersonMonthRecord *pm) { return *pm; }

template <class Rows> double linearized_impl(const Rows &rows, double p_hat) {
    // z_c = sum_{j in c} w_j (y_j - p_hat), grouped by stratum.
    std::map<std::string, std::map<std::string, double>> scores;
    double total_weight = 0.0;
    for (const auto &entry : rows) {
        const auto &pm = record(entry);
        scores[pm.stratum][pm.cluster] += pm.weight * ((pm.died ? 1.0 : 0.0) - p_hat);
        total_weight += pm.weight;
    }
    double v = 0.0;
    for (const auto &[stratum, clusters] : scores) {
        const auto n_h = static_cast<double>(clusters.size());
        if (clusters.size() < 2) {
            continue;
        }
        double zbar = 0.0;
        for (const auto &[id, z] : clusters) {
            zbar += z;
        }
        zbar /= n_h;
        double ss = 0.0;
        for (const auto &[id, z] : clusters) {
            ss += (z - zbar) * (z - zbar);
        }
        v += n_h / (n_h - 1.0) * ss;
    }
    return v / (total_weight * total_weight);
}

template <class Rows>
std::optional<CompositeEstimate> composite_impl(const Rows &rows, const AgeBandSchema &schema,
                                                const JackknifeConfig &config) {
    const auto n_bands = schema.bands();
    std::unordered_map<std::string, std::size_t> cluster_index;
    std::vector<std::vector<double>> num;
    std::vector<std::vector<double>> den;
    std::vector<double> total_num(n_bands, 0.0);
    std::vector<double> total_den(n_bands, 0.0);
    long deaths = 0;
    // Rows usually arrive grouped by cluster, so the last lookup is reused.
    const std::string *last_cluster = nullptr;
    std::size_t slot = 0;
    for (const auto &entry : rows) {
        const auto &pm = record(entry);
        if (pm.band >= n_bands) {
            throw std::invalid_argument(fmt::format("age band index {} not in the schema", pm.band));
        }
        if (last_cluster == nullptr || *last_cluster != pm.cluster) {
            auto [it, inserted] = cluster_index.try_emplace(pm.cluster, num.size());
            if (inserted) {
                num.emplace_back(n_bands, 0.0);
                den.emplace_back(n_bands, 0.0);
            }
            slot = it->second;
            last_cluster = &pm.cluster;
        }
        const double wy = pm.died ? pm.weight : 0.0;
        num[slot][pm.band] += wy;
        den[slot][pm.band] += pm.weight;
        total_num[pm.band] += wy;
        total_den[pm.band] += pm.weight;
        deaths += pm.died ? 1 : 0;
    }
    if (deaths == 0) {
        return std::nullopt;
    }
    for (double d : total_den) {
        if (!(d > 0.0)) {
            return std::nullopt;
        }
    }
    const auto z = schema.band_lengths();
    CompositeEstimate out;
    out.clusters = num.size();
    out.band_hazard.resize(n_bands);
    for (std::size_t a = 0; a < n_bands; ++a) {
        out.band_hazard[a] = total_num[a] / total_den[a];
    }
    out.estimate = synthetic_cohort(out.band_hazard, z);
    if (out.clusters < 2 || !(out.estimate > 0.0 && out.estimate < 1.0)) {
        return std::nullopt;
    }

    if (config.method == VarianceMethod::linearization) {
        if (n_bands != 1) {
            throw std::invalid_argument("linearised variance applies to single-band indicators only");
        }
        out.var_prob = linearized_impl(rows, out.estimate);
        out.var_logit = *logit_delta_variance(out.estimate, out.var_prob);
        return out;
    }

    const auto C = static_cast<double>(out.clusters);
    std::vector<double> rep_prob(out.clusters);
    std::vector<double> rep_logit(out.clusters);
    bool logit_defined = true;
    std::vector<double> q(n_bands);
    for (std::size_t c = 0; c < out.clusters; ++c) {
        for (std::size_t a = 0; a < n_bands; ++a) {
            const double d = total_den[a] - den[c][a];
            q[a] = d > 0.0 ? std::max(0.0, total_num[a] - num[c][a]) / d : 0.0;
        }
        rep_prob[c] = synthetic_cohort(q, z);
        if (rep_prob[c] > 0.0 && rep_prob[c] < 1.0) {
            rep_logit[c] = logit(rep_prob[c]);
        } else {
            logit_defined = false;
        }
    }
    auto jk = [C](const std::vector<double> &reps) {
        double m = 0.0;
        for (double r : reps) {
            m += r;
        }
        m /= C;
        double ss = 0.0;
        for (double r : reps) {
            ss += (r - m) * (r - m);
        }
        return (C - 1.0) / C * ss;
    };
    out.var_prob = jk(rep_prob);
    if (logit_defined) {
        out.var_logit = jk(rep_logit);
    } else {
        // A replicate hit 0 deaths; fall back to the delta method.
        out.var_logit = *logit_delta_variance(out.estimate, out.var_prob);
    }
    return out;
}

template <class Rows>
std::optional<DirectStats> direct_impl(const Rows &rows, const AgeBandSchema &schema, const JackknifeConfig &config) {
    auto composite = composite_impl(rows, schema, config);
    // Without between-cluster variation the logit precision is undefined.
    if (!composite || !(composite->var_logit > 0.0)) {
        return std::nullopt;
    }
    auto stats = stats_from_logit(logit(composite->estimate), composite->var_logit, config.interval_level);
    stats.mean = composite->estimate;
    return stats;
}

} // namespace

double linearized_variance(std::span<const PersonMonthRecord> rows, double p_hat) {
    return linearized_impl(rows, p_hat);
}

std::optional<CompositeEstimate> estimate_composite(std::span<const PersonMonthRecord> rows,
                                                    const AgeBandSchema &schema, const JackknifeConfig &config) {
    return composite_impl(rows, schema, config);
}

std::optional<DirectStats> direct_u5mr(std::span<const PersonMonthRecord> rows, const AgeBandSchema &schema,
                                       const JackknifeConfig &config) {
    return direct_impl(rows, schema, config);
}

std::vector<DirectEstimate> direct_all(const std::vector<NamedSurvey> &surveys,
                                       const std::vector<std::string> &regions, const PeriodScheme &periods,
                                       const AgeBandSchema &schema, const JackknifeConfig &config) {
    std::unordered_map<std::string, std::size_t> region_index;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        region_index.emplace(regions[i], i);
    }
    std::vector<DirectEstimate> out;
    for (const auto &[name, rows] : surveys) {
        const auto n_periods = periods.size();
        std::vector<std::vector<const PersonMonthRecord *>> national(n_periods);
        std::vector<std::vector<const PersonMonthRecord *>> cells(regions.size() * n_periods);
        for (const auto &pm : rows) {
            auto it = region_index.find(pm.region);
            if (it == region_index.end()) {
                throw std::invalid_argument(fmt::format("survey {}: unknown region '{}'", name, pm.region));
            }
            if (pm.period >= n_periods) {
                throw std::invalid_argument(fmt::format("survey {}: period index {} out of range", name, pm.period));
            }
            national[pm.period].push_back(&pm);
            cells[it->second * n_periods + pm.period].push_back(&pm);
        }
        for (std::size_t t = 0; t < n_periods; ++t) {
            out.push_back({national_label, periods.label(t), name, direct_impl(national[t], schema, config)});
        }
        for (std::size_t i = 0; i < regions.size(); ++i) {
            for (std::size_t t = 0; t < n_periods; ++t) {
                out.push_back(
                    {regions[i], periods.label(t), name, direct_impl(cells[i * n_periods + t], schema, config)});
            }
        }
    }
    return out;
}

std::vector<DirectEstimate> aggregate_surveys(const std::vector<DirectEstimate> &direct, double level) {
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::pair<double, double>> sums; // (sum w*logit, sum w)
    for (const auto &row : direct) {
        auto key = std::make_pair(row.region, row.period);
        auto [it, inserted] = sums.try_emplace(key, 0.0, 0.0);
        if (inserted) {
            order.push_back(key);
        }
        if (row.stats && row.stats->var_est > 0.0) {
            const double w = 1.0 / row.stats->var_est;
            it->second.first += w * row.stats->logit_est;
            it->second.second += w;
        }
    }
    std::vector<DirectEstimate> out;
    out.reserve(order.size());
    for (const auto &key : order) {
        const auto &[num, prec] = sums.at(key);
        DirectEstimate e{key.first, key.second, std::nullopt, std::nullopt};
        if (prec > 0.0) {
            e.stats = stats_from_logit(num / prec, 1.0 / prec, level);
        }
        out.push_back(std::move(e));
    }
    return out;
}

AdjustResult adjust_ratio(const std::vector<DirectEstimate> &direct, const std::vector<AdjustmentRatio> &ratios,
                          RatioMode mode, double level) {
    constexpr double cap = 1.0 - 1e-9;
    const double zq = interval_z(level);
    AdjustResult result;
    result.estimates.reserve(direct.size());
    for (const auto &row : direct) {
        const AdjustmentRatio *match = nullptr;
        for (const auto &r : ratios) {
            if (r.period != row.period) {
                continue;
            }
            if (r.survey && row.survey != r.survey) {
                continue;
            }
            match = &r;
            if (r.survey) {
                break; // survey-specific ratios win over generic ones
            }
        }
        DirectEstimate out = row;
        if (!match) {
            result.warnings.push_back(fmt::format("no ratio for region {} period {}{}", row.region, row.period,
                                                  row.survey ? " survey " + *row.survey : std::string{}));
            result.estimates.push_back(std::move(out));
            continue;
        }
        if (!(match->ratio > 0.0)) {
            throw std::invalid_argument(fmt::format("ratio for period {} must be positive", match->period));
        }
        if (out.stats) {
            const double factor = mode == RatioMode::multiply ? match->ratio : 1.0 / match->ratio;
            auto &s = *out.stats;
            s.mean = std::min(s.mean * factor, cap);
            s.lower = std::min(s.lower * factor, cap);
            s.upper = std::min(s.upper * factor, cap);
            s.logit_est = logit(s.mean);
            const double width = (logit(s.upper) - logit(s.lower)) / (2.0 * zq);
            s.var_est = width * width;
        }
        result.estimates.push_back(std::move(out));
    }
    return result;
}

} // namespace sae
