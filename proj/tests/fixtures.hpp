#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/gmrf.hpp"

namespace fixtures {

/// Four regions in alphabetical order: central borders everyone, eastern
/// and western do not touch.
inline sae::RegionGraph four_regions() {
    Eigen::MatrixXi a(4, 4);
    a << 0, 1, 1, 1, //
        1, 0, 1, 0,  //
        1, 1, 0, 1,  //
        1, 0, 1, 0;
    return sae::RegionGraph({"central", "eastern", "northern", "western"}, a);
}

inline sae::RegionGraph path_graph(std::size_t n) {
    Eigen::MatrixXi a = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i + 1 < n; ++i) {
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i + 1)) = 1;
        a(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(i)) = 1;
    }
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) {
        names.push_back("r" + std::to_string(i));
    }
    return sae::RegionGraph(names, a);
}

} // namespace fixtures
