#include "sae/geo.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

namespace sae {

namespace {

using nlohmann::json;

Ring parse_ring(const json &coords) {
    Ring ring;
    for (const auto &pt : coords) {
        if (!pt.is_array() || pt.size() < 2) {
            throw std::invalid_argument("GeoJSON position must have at least two coordinates");
        }
        ring.emplace_back(pt[0].get<double>(), pt[1].get<double>());
    }
    return ring;
}

void parse_polygon(const json &polygon, std::vector<Ring> &out) {
    for (const auto &ring : polygon) {
        out.push_back(parse_ring(ring));
    }
}

} // namespace

GeoMap GeoMap::parse(const std::string &text, const std::string &name_property) {
    const auto doc = json::parse(text);
    if (doc.value("type", "") != "FeatureCollection" || !doc.contains("features")) {
        throw std::invalid_argument("GeoJSON must be a FeatureCollection");
    }
    GeoMap map;
    std::set<std::string> seen;
    for (const auto &feature : doc["features"]) {
        const auto &props = feature.at("properties");
        if (!props.contains(name_property)) {
            throw std::invalid_argument(fmt::format("GeoJSON feature lacks property '{}'", name_property));
        }
        GeoFeature f;
        f.name = props[name_property].is_string() ? props[name_property].get<std::string>()
                                                  : props[name_property].dump();
        if (!seen.insert(f.name).second) {
            throw std::invalid_argument(fmt::format("duplicate region name '{}' in GeoJSON", f.name));
        }
        const auto &geometry = feature.at("geometry");
        const auto type = geometry.at("type").get<std::string>();
        if (type == "Polygon") {
            parse_polygon(geometry.at("coordinates"), f.rings);
        } else if (type == "MultiPolygon") {
            for (const auto &polygon : geometry.at("coordinates")) {
                parse_polygon(polygon, f.rings);
            }
        } else {
            throw std::invalid_argument(fmt::format("unsupported GeoJSON geometry '{}'", type));
        }
        map.features_.push_back(std::move(f));
    }
    return map;
}

GeoMap GeoMap::read(const std::filesystem::path &path, const std::string &name_property) {
    std::ifstream in{path};
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), name_property);
}

std::vector<std::string> GeoMap::names() const {
    std::vector<std::string> out;
    for (const auto &f : features_) {
        out.push_back(f.name);
    }
    return out;
}

std::array<double, 4> GeoMap::bounds() const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::array<double, 4> b{inf, inf, -inf, -inf};
    for (const auto &f : features_) {
        for (const auto &ring : f.rings) {
            for (const auto &[x, y] : ring) {
                b[0] = std::min(b[0], x);
                b[1] = std::min(b[1], y);
                b[2] = std::max(b[2], x);
                b[3] = std::max(b[3], y);
            }
        }
    }
    return b;
}

} // namespace sae
