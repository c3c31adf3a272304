#include "sae/reports.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "sae/stats.hpp"

namespace sae {

namespace {

constexpr double margin = 20.0;
constexpr double title_height = 28.0;
constexpr double facet_label_height = 18.0;
constexpr double legend_height = 46.0;

// Sequential yellow-orange-red ramp.
constexpr std::array<std::array<int, 3>, 5> ramp = {{
    {255, 255, 178},
    {254, 204, 92},
    {253, 141, 60},
    {240, 59, 32},
    {189, 0, 38},
}};

std::string escape(const std::string &s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

std::string color_at(double t) {
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    const double pos = t * static_cast<double>(ramp.size() - 1);
    const auto k = std::min(static_cast<std::size_t>(pos), ramp.size() - 2);
    const double f = pos - static_cast<double>(k);
    std::array<int, 3> rgb{};
    for (std::size_t c = 0; c < 3; ++c) {
        rgb[c] = static_cast<int>(std::lround(ramp[k][c] + f * (ramp[k + 1][c] - ramp[k][c])));
    }
    return fmt::format("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2]);
}

std::string number_label(double v) { return fmt::format("{:.3g}", v); }

/// Maps geographic coordinates into one facet panel (y flipped).
struct Projection {
    std::array<double, 4> bounds;
    double x0 = 0.0;
    double y0 = 0.0;
    double scale = 1.0;
    double height = 0.0;

    Projection(const GeoMap &geo, double x, double y, double width) : bounds(geo.bounds()), x0(x), y0(y) {
        const double gw = std::max(bounds[2] - bounds[0], 1e-12);
        const double gh = std::max(bounds[3] - bounds[1], 1e-12);
        scale = width / gw;
        height = gh * scale;
    }
    Point operator()(const Point &p) const {
        return {x0 + (p.first - bounds[0]) * scale, y0 + (bounds[3] - p.second) * scale};
    }
};

std::string feature_path(const GeoFeature &f, const Projection &proj) {
    std::string d;
    for (const auto &ring : f.rings) {
        for (std::size_t k = 0; k < ring.size(); ++k) {
            const auto [x, y] = proj(ring[k]);
            d += fmt::format("{}{:.2f},{:.2f}", k == 0 ? "M" : " L", x, y);
        }
        d += " Z ";
    }
    if (!d.empty()) {
        d.pop_back();
    }
    return d;
}

std::array<double, 4> feature_box(const GeoFeature &f, const Projection &proj) {
    std::array<double, 4> b{1e300, 1e300, -1e300, -1e300};
    for (const auto &ring : f.rings) {
        for (const auto &p : ring) {
            const auto [x, y] = proj(p);
            b[0] = std::min(b[0], x);
            b[1] = std::min(b[1], y);
            b[2] = std::max(b[2], x);
            b[3] = std::max(b[3], y);
        }
    }
    return b;
}

std::vector<std::string> ordered_facets(const std::vector<MapValue> &values) {
    std::vector<std::string> facets;
    for (const auto &v : values) {
        if (std::find(facets.begin(), facets.end(), v.facet) == facets.end()) {
            facets.push_back(v.facet);
        }
    }
    return facets;
}

void check_regions(const std::vector<MapValue> &values, const GeoMap &geo) {
    const auto names = geo.names();
    std::set<std::string> known(names.begin(), names.end());
    std::set<std::string> missing;
    for (const auto &v : values) {
        if (!known.contains(v.region)) {
            missing.insert(v.region);
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto &m : missing) {
            list += (list.empty() ? "" : ", ") + m;
        }
        throw std::invalid_argument(fmt::format("regions not found in the map: {}", list));
    }
}

std::string render_choropleth(const std::vector<MapValue> &values, const GeoMap &geo, const MapOptions &options,
                              bool hatch) {
    if (values.empty()) {
        throw std::invalid_argument("map needs at least one value");
    }
    if (geo.features().empty()) {
        throw std::invalid_argument("map geometry has no features");
    }
    check_regions(values, geo);
    if (hatch) {
        for (const auto &v : values) {
            if (v.upper < v.lower) {
                throw std::invalid_argument(fmt::format("interval for {} {} has upper below lower", v.region, v.facet));
            }
        }
    }
    const double factor = options.per1000 ? 1000.0 : 1.0;
    double lo = 1e300;
    double hi = -1e300;
    for (const auto &v : values) {
        lo = std::min(lo, v.value * factor);
        hi = std::max(hi, v.value * factor);
    }
    const double span = hi > lo ? hi - lo : 1.0;

    const auto facets = ordered_facets(values);
    const double W = options.panel_width;
    const Projection probe(geo, 0.0, 0.0, W);
    const double panel_h = probe.height;
    const double width = margin * 2 + static_cast<double>(facets.size()) * (W + margin) - margin;
    const double height = margin + title_height + facet_label_height + panel_h + margin + legend_height;

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n",
        width, height, width, height);
    svg += fmt::format("<rect x=\"0\" y=\"0\" width=\"{:.0f}\" height=\"{:.0f}\" fill=\"#ffffff\"/>\n", width, height);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n", margin,
                       margin + 14.0, escape(options.title));

    std::size_t clip_id = 0;
    for (std::size_t f = 0; f < facets.size(); ++f) {
        const double px = margin + static_cast<double>(f) * (W + margin);
        const double py = margin + title_height + facet_label_height;
        svg += fmt::format("<g class=\"facet\" data-facet=\"{}\">\n", escape(facets[f]));
        svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n", px,
                           py - 5.0, escape(facets[f]));
        const Projection proj(geo, px, py, W);
        for (const auto &feature : geo.features()) {
            const auto it = std::find_if(values.begin(), values.end(), [&](const MapValue &v) {
                return v.facet == facets[f] && v.region == feature.name;
            });
            const auto d = feature_path(feature, proj);
            const std::string fill = it == values.end() ? "#dddddd" : color_at((it->value * factor - lo) / span);
            svg += fmt::format("<path d=\"{}\" fill=\"{}\" fill-rule=\"evenodd\" stroke=\"#444444\" "
                               "stroke-width=\"0.8\"><title>{}</title></path>\n",
                               d, fill, escape(feature.name));
            if (!hatch || it == values.end()) {
                continue;
            }
            const auto n = hatch_line_count(it->upper - it->lower, options.lines_per_unit);
            if (n == 0) {
                continue;
            }
            const auto id = fmt::format("clip{}", clip_id++);
            svg += fmt::format("<clipPath id=\"{}\"><path d=\"{}\" clip-rule=\"evenodd\"/></clipPath>\n", id, d);
            const auto box = feature_box(feature, proj);
            const double bw = box[2] - box[0];
            const double bh = box[3] - box[1];
            svg += fmt::format("<g class=\"hatch\" data-lines=\"{}\" clip-path=\"url(#{})\" stroke=\"#000000\" "
                               "stroke-width=\"0.6\">\n",
                               n, id);
            for (std::size_t k = 0; k < n; ++k) {
                const double s = (static_cast<double>(k) + 0.5) / static_cast<double>(n) * (bw + bh);
                svg += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", box[0] + s,
                                   box[1], box[0] + s - bh, box[1] + bh);
            }
            svg += "</g>\n";
        }
        svg += "</g>\n";
    }

    // Legend: five swatches spanning the shared scale.
    const double ly = margin + title_height + facet_label_height + panel_h + margin;
    const double sw = 40.0;
    svg += "<g class=\"legend\">\n";
    for (int k = 0; k < 5; ++k) {
        const double t = (k + 0.5) / 5.0;
        svg += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"12\" fill=\"{}\"/>\n",
                           margin + k * sw, ly, sw, color_at(t));
    }
    for (int k = 0; k <= 5; ++k) {
        svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"10\" "
                           "text-anchor=\"middle\">{}</text>\n",
                           margin + k * sw, ly + 26.0, number_label(lo + span * k / 5.0));
    }
    if (options.per1000) {
        svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"10\">per 1000</text>\n",
                           margin + 5 * sw + 12.0, ly + 10.0);
    }
    svg += "</g>\n</svg>\n";
    return svg;
}

} // namespace

// ---------------------------------------------------------------------------
// TCP

std::vector<double> tcp_thresholds(const std::vector<CellDraws> &draws, std::size_t K) {
    if (K < 2) {
        throw std::invalid_argument("TCP needs at least two intervals");
    }
    std::vector<double> pooled;
    for (const auto &c : draws) {
        pooled.insert(pooled.end(), c.values.begin(), c.values.end());
    }
    if (pooled.empty()) {
        throw std::invalid_argument("TCP needs posterior draws");
    }
    std::sort(pooled.begin(), pooled.end());
    std::vector<double> probs{0.01};
    for (std::size_t k = 1; k < K; ++k) {
        probs.push_back(static_cast<double>(k) / static_cast<double>(K));
    }
    probs.push_back(0.99);
    std::vector<double> out;
    for (double p : probs) {
        out.push_back(quantile_sorted(pooled, p));
    }
    return out;
}

TCPResult tcp_classify(const std::vector<CellDraws> &draws, const std::vector<double> &thresholds) {
    if (thresholds.size() < 3) {
        throw std::invalid_argument("TCP needs at least three thresholds");
    }
    for (std::size_t k = 1; k < thresholds.size(); ++k) {
        if (!(thresholds[k] > thresholds[k - 1])) {
            throw std::invalid_argument("TCP thresholds must be strictly increasing");
        }
    }
    if (draws.empty()) {
        throw std::invalid_argument("TCP needs posterior draws");
    }
    TCPResult out;
    out.thresholds = thresholds;
    const std::size_t K = thresholds.size() - 1;
    // Interior cut points; the outer intervals are open towards the ends.
    const std::vector<double> interior(thresholds.begin() + 1, thresholds.end() - 1);
    double total = 0.0;
    for (const auto &c : draws) {
        if (c.values.empty()) {
            throw std::invalid_argument(fmt::format("no draws for {} {}", c.region, c.year));
        }
        std::vector<std::size_t> counts(K, 0);
        for (double v : c.values) {
            const auto k = static_cast<std::size_t>(std::upper_bound(interior.begin(), interior.end(), v) - interior.begin());
            ++counts[k];
        }
        TCPCell cell;
        cell.region = c.region;
        cell.year = c.year;
        std::size_t best = 0;
        for (std::size_t k = 0; k < K; ++k) {
            cell.mass.push_back(static_cast<double>(counts[k]) / static_cast<double>(c.values.size()));
            if (counts[k] > counts[best]) {
                best = k;
            }
        }
        cell.interval = best;
        cell.tcp = cell.mass[best];
        total += cell.tcp;
        out.cells.push_back(std::move(cell));
    }
    out.atcp = total / static_cast<double>(out.cells.size());
    return out;
}

TCPResult tcp_classify(const std::vector<CellDraws> &draws, std::size_t K) {
    return tcp_classify(draws, tcp_thresholds(draws, K));
}

// ---------------------------------------------------------------------------
// Maps

std::size_t hatch_line_count(double width, double lines_per_unit) {
    if (!(width > 0.0)) {
        return 0;
    }
    // The small slack keeps 0.04 * 200 at 8 lines rather than 9.
    return static_cast<std::size_t>(std::ceil(width * lines_per_unit - 1e-9));
}

std::string render_map(const std::vector<MapValue> &values, const GeoMap &geo, const MapOptions &options) {
    return render_choropleth(values, geo, options, false);
}

std::string render_hatch(const std::vector<MapValue> &values, const GeoMap &geo, const MapOptions &options) {
    return render_choropleth(values, geo, options, true);
}

// ---------------------------------------------------------------------------
// Ridges

double silverman_bandwidth(const std::vector<double> &values) {
    if (values.size() < 2) {
        throw std::invalid_argument("a density needs at least two draws");
    }
    std::vector<double> s = values;
    std::sort(s.begin(), s.end());
    const double sd = std::sqrt(variance(s));
    const double iqr = (quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25)) / 1.34;
    const double spread = iqr > 0.0 ? std::min(sd, iqr) : sd;
    return 0.9 * spread * std::pow(static_cast<double>(s.size()), -0.2);
}

std::vector<double> kernel_density(const std::vector<double> &values, const std::vector<double> &grid,
                                   double bandwidth) {
    if (!(bandwidth > 0.0)) {
        throw std::invalid_argument("kernel bandwidth must be positive");
    }
    const double norm = 1.0 / (static_cast<double>(values.size()) * bandwidth * std::sqrt(2.0 * M_PI));
    std::vector<double> out(grid.size(), 0.0);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double s = 0.0;
        for (double v : values) {
            const double z = (grid[g] - v) / bandwidth;
            s += std::exp(-0.5 * z * z);
        }
        out[g] = s * norm;
    }
    return out;
}

std::string render_ridge(const std::vector<CellDraws> &draws, const RidgeOptions &options) {
    if (draws.empty()) {
        throw std::invalid_argument("ridge plot needs posterior draws");
    }
    if (options.grid_points < 2) {
        throw std::invalid_argument("ridge plot needs at least two grid points");
    }
    const double factor = options.per1000 ? 1000.0 : 1.0;
    std::vector<std::string> regions;
    std::vector<std::string> years;
    for (const auto &c : draws) {
        if (c.values.size() < 2) {
            throw std::invalid_argument(fmt::format("{} {} has fewer than two draws; its density is degenerate",
                                                    c.region, c.year));
        }
        if (std::find(regions.begin(), regions.end(), c.region) == regions.end()) {
            regions.push_back(c.region);
        }
        if (std::find(years.begin(), years.end(), c.year) == years.end()) {
            years.push_back(c.year);
        }
    }
    const std::string order_year = options.order_year.value_or(years.back());
    if (std::find(years.begin(), years.end(), order_year) == years.end()) {
        throw std::invalid_argument(fmt::format("ordering year '{}' has no draws", order_year));
    }
    std::map<std::string, double> median_of;
    for (const auto &c : draws) {
        if (c.year == order_year) {
            median_of[c.region] = quantile(c.values, 0.5);
        }
    }
    std::stable_sort(regions.begin(), regions.end(), [&](const std::string &a, const std::string &b) {
        const double ma = median_of.contains(a) ? median_of[a] : -1e300;
        const double mb = median_of.contains(b) ? median_of[b] : -1e300;
        return ma > mb;
    });

    // Per-cell bandwidths and a shared x range.
    std::vector<double> bw(draws.size());
    double lo = 1e300;
    double hi = -1e300;
    for (std::size_t k = 0; k < draws.size(); ++k) {
        std::vector<double> v = draws[k].values;
        for (auto &x : v) {
            x *= factor;
        }
        bw[k] = options.bandwidth ? *options.bandwidth * factor : silverman_bandwidth(v);
        if (!(bw[k] > 0.0)) {
            throw std::invalid_argument(fmt::format("{} {} has identical draws; give a bandwidth", draws[k].region,
                                                    draws[k].year));
        }
        const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
        lo = std::min(lo, *mn);
        hi = std::max(hi, *mx);
    }
    // Padding from the data span only, so the layout does not move with
    // the bandwidth.
    const double pad = hi > lo ? 0.1 * (hi - lo) : 0.1 * std::max(std::abs(hi), 1e-3);
    // Rates stay on the non-negative axis.
    lo = lo >= 0.0 ? std::max(0.0, lo - pad) : lo - pad;
    hi += pad;
    std::vector<double> grid(options.grid_points);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        grid[g] = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid.size() - 1);
    }
    std::vector<std::vector<double>> dens(draws.size());
    double peak = 0.0;
    for (std::size_t k = 0; k < draws.size(); ++k) {
        std::vector<double> v = draws[k].values;
        for (auto &x : v) {
            x *= factor;
        }
        dens[k] = kernel_density(v, grid, bw[k]);
        peak = std::max(peak, *std::max_element(dens[k].begin(), dens[k].end()));
    }

    const auto &panels = options.by_year ? years : regions;
    const auto &rows = options.by_year ? regions : years;
    const double label_w = 110.0;
    const double plot_w = 320.0;
    const double row_h = 26.0;
    const double ridge_h = 2.0 * row_h;
    const double panel_w = label_w + plot_w + margin;
    const double panel_h = ridge_h + static_cast<double>(rows.size()) * row_h + 24.0;
    const double width = margin + static_cast<double>(panels.size()) * panel_w;
    const double height = margin + title_height + facet_label_height + panel_h + margin;
    auto xpos = [&](double x, double x0) { return x0 + label_w + (x - lo) / (hi - lo) * plot_w; };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n",
        width, height, width, height);
    svg += fmt::format("<rect x=\"0\" y=\"0\" width=\"{:.0f}\" height=\"{:.0f}\" fill=\"#ffffff\"/>\n", width, height);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n", margin,
                       margin + 14.0, escape(options.title));
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const double x0 = margin + static_cast<double>(p) * panel_w;
        const double y0 = margin + title_height + facet_label_height;
        svg += fmt::format("<g class=\"panel\" data-panel=\"{}\">\n", escape(panels[p]));
        svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
                           x0 + label_w, y0 - 5.0, escape(panels[p]));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto &region = options.by_year ? rows[r] : panels[p];
            const auto &year = options.by_year ? panels[p] : rows[r];
            const auto it = std::find_if(draws.begin(), draws.end(),
                                         [&](const CellDraws &c) { return c.region == region && c.year == year; });
            const double base = y0 + ridge_h + static_cast<double>(r) * row_h;
            svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\" "
                               "text-anchor=\"end\">{}</text>\n",
                               x0 + label_w - 6.0, base, escape(rows[r]));
            if (it == draws.end()) {
                continue;
            }
            const auto &d = dens[static_cast<std::size_t>(it - draws.begin())];
            std::string path = fmt::format("M{:.2f},{:.2f}", xpos(grid.front(), x0), base);
            for (std::size_t g = 0; g < grid.size(); ++g) {
                path += fmt::format(" L{:.2f},{:.2f}", xpos(grid[g], x0), base - d[g] / peak * ridge_h);
            }
            path += fmt::format(" L{:.2f},{:.2f} Z", xpos(grid.back(), x0), base);
            svg += fmt::format("<path class=\"ridge\" data-row=\"{}\" d=\"{}\" fill=\"#fd8d3c\" fill-opacity=\"0.7\" "
                               "stroke=\"#444444\" stroke-width=\"0.8\"/>\n",
                               escape(rows[r]), path);
        }
        const double axis_y = y0 + ridge_h + static_cast<double>(rows.size()) * row_h;
        svg += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#444444\"/>\n",
                           x0 + label_w, axis_y, x0 + label_w + plot_w, axis_y);
        for (int k = 0; k <= 4; ++k) {
            const double v = lo + (hi - lo) * k / 4.0;
            svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"10\" "
                               "text-anchor=\"middle\">{}</text>\n",
                               xpos(v, x0), axis_y + 14.0, number_label(v));
        }
        svg += "</g>\n";
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace sae
