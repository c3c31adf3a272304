#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sae {

using Point = std::pair<double, double>;
/// A closed ring; the first point may or may not be repeated at the end.
using Ring = std::vector<Point>;

struct GeoFeature {
    std::string name;
    /// Outer rings and holes of every polygon part, in file order.
    std::vector<Ring> rings;
};

/// Polygon features from a GeoJSON FeatureCollection. Polygon and
/// MultiPolygon geometries are supported.
class GeoMap {
  public:
    static GeoMap parse(const std::string &text, const std::string &name_property = "name");
    static GeoMap read(const std::filesystem::path &path, const std::string &name_property = "name");

    const std::vector<GeoFeature> &features() const { return features_; }
    std::vector<std::string> names() const;
    /// {min_x, min_y, max_x, max_y}
    std::array<double, 4> bounds() const;

  private:
    std::vector<GeoFeature> features_;
};

} // namespace sae
