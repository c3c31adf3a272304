#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sae/geo.hpp"

namespace sae {

/// Posterior draws of one region x year value.
struct CellDraws {
    std::string region;
    std::string year;
    std::vector<double> values;
};

struct TCPCell {
    std::string region;
    std::string year;
    std::size_t interval = 0;
    double tcp = 0.0;
    /// Mass per interval; sums to one.
    std::vector<double> mass;
};

struct TCPResult {
    std::vector<double> thresholds;
    std::vector<TCPCell> cells;
    double atcp = 0.0;

    std::size_t intervals() const { return thresholds.size() - 1; }
};

/// Thresholds at the pooled [0.01, 1/K, ..., (K-1)/K, 0.99] quantiles.
std::vector<double> tcp_thresholds(const std::vector<CellDraws> &draws, std::size_t K);

/// Assigns every cell to the interval with the greatest posterior mass
/// (lowest index on ties). The outer intervals extend to the whole real
/// line so that every draw belongs somewhere.
TCPResult tcp_classify(const std::vector<CellDraws> &draws, const std::vector<double> &thresholds);
TCPResult tcp_classify(const std::vector<CellDraws> &draws, std::size_t K);

struct MapValue {
    std::string region;
    std::string facet;
    double value = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

struct MapOptions {
    std::string title;
    bool per1000 = false;
    double panel_width = 280.0;
    /// Hatch lines per unit of interval width (probability scale).
    double lines_per_unit = 200.0;
};

/// Faceted choropleth with one shared sequential scale.
std::string render_map(const std::vector<MapValue> &values, const GeoMap &geo, const MapOptions &options = {});

/// Choropleth with hatching whose line count grows with upper - lower.
std::string render_hatch(const std::vector<MapValue> &values, const GeoMap &geo, const MapOptions &options = {});

/// Hatch lines drawn for an interval of the given width.
std::size_t hatch_line_count(double width, double lines_per_unit);

struct RidgeOptions {
    std::string title;
    /// Year whose posterior medians order the regions (highest on top).
    /// Defaults to the last year present.
    std::optional<std::string> order_year;
    /// One panel per year with a ridge per region, or one panel per region
    /// with a ridge per year.
    bool by_year = true;
    /// Kernel bandwidth; Silverman's rule per cell when unset.
    std::optional<double> bandwidth;
    bool per1000 = false;
    std::size_t grid_points = 128;
};

std::string render_ridge(const std::vector<CellDraws> &draws, const RidgeOptions &options = {});

/// Gaussian kernel density on an evenly spaced grid.
std::vector<double> kernel_density(const std::vector<double> &values, const std::vector<double> &grid,
                                   double bandwidth);
double silverman_bandwidth(const std::vector<double> &values);

} // namespace sae
