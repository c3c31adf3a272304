#include "sae/gmrf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "sae/csv.hpp"

namespace sae {

RegionGraph::RegionGraph(std::vector<std::string> names, Eigen::MatrixXi adjacency)
    : names_{std::move(names)}, adjacency_{std::move(adjacency)} {
    const auto n = static_cast<Eigen::Index>(names_.size());
    if (adjacency_.rows() != n || adjacency_.cols() != n) {
        throw std::invalid_argument("adjacency matrix must be square with one row per region");
    }
    std::set<std::string> unique(names_.begin(), names_.end());
    if (unique.size() != names_.size()) {
        throw std::invalid_argument("region names must be unique");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (adjacency_(i, i) != 0) {
            throw std::invalid_argument(fmt::format("region {} is adjacent to itself", names_[i]));
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            if (adjacency_(i, j) != 0 && adjacency_(i, j) != 1) {
                throw std::invalid_argument("adjacency entries must be 0 or 1");
            }
            if (adjacency_(i, j) != adjacency_(j, i)) {
                throw std::invalid_argument(
                    fmt::format("adjacency is not symmetric between {} and {}", names_[i], names_[j]));
            }
        }
    }
    components_.assign(names_.size(), names_.size());
    for (std::size_t start = 0; start < names_.size(); ++start) {
        if (components_[start] != names_.size()) {
            continue;
        }
        std::vector<std::size_t> stack{start};
        components_[start] = component_count_;
        while (!stack.empty()) {
            auto i = stack.back();
            stack.pop_back();
            for (std::size_t j = 0; j < names_.size(); ++j) {
                if (adjacency_(i, j) && components_[j] == names_.size()) {
                    components_[j] = component_count_;
                    stack.push_back(j);
                }
            }
        }
        ++component_count_;
    }
}

RegionGraph RegionGraph::from_csv(std::istream &in) {
    const auto table = csv::Table::parse(in);
    std::vector<std::string> names(table.header().begin() + 1, table.header().end());
    const auto n = names.size();
    if (table.rows() != n) {
        throw std::invalid_argument("adjacency CSV must be square");
    }
    Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    std::vector<bool> seen(n, false);
    for (std::size_t r = 0; r < n; ++r) {
        const auto &row_name = table.cell(r, 0);
        auto it = std::find(names.begin(), names.end(), row_name);
        if (it == names.end()) {
            throw std::invalid_argument(fmt::format("adjacency row '{}' has no matching column", row_name));
        }
        const auto i = static_cast<std::size_t>(it - names.begin());
        if (seen[i]) {
            throw std::invalid_argument(fmt::format("duplicate adjacency row '{}'", row_name));
        }
        seen[i] = true;
        for (std::size_t j = 0; j < n; ++j) {
            adj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<int>(table.integer(r, names[j]));
        }
    }
    return RegionGraph{std::move(names), std::move(adj)};
}

RegionGraph RegionGraph::from_csv(const std::filesystem::path &path) {
    std::ifstream in{path};
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    }
    return from_csv(in);
}

RegionGraph RegionGraph::from_geo(const GeoMap &map) {
    const auto &features = map.features();
    const auto n = features.size();
    std::vector<std::set<Point>> vertices(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto &ring : features[i].rings) {
            vertices[i].insert(ring.begin(), ring.end());
        }
    }
    Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            std::size_t shared = 0;
            for (const auto &p : vertices[i]) {
                if (vertices[j].count(p) && ++shared >= 2) {
                    break;
                }
            }
            if (shared >= 2) {
                adj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1;
                adj(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 1;
            }
        }
    }
    return RegionGraph{map.names(), std::move(adj)};
}

void RegionGraph::write_csv(std::ostream &out) const {
    std::vector<std::string> header{""};
    header.insert(header.end(), names_.begin(), names_.end());
    csv::Table table{header};
    for (std::size_t i = 0; i < size(); ++i) {
        std::vector<std::string> row{names_[i]};
        for (std::size_t j = 0; j < size(); ++j) {
            row.push_back(std::to_string(adjacency_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
        }
        table.add_row(std::move(row));
    }
    table.write(out);
}

std::size_t RegionGraph::index(const std::string &name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) {
        throw std::invalid_argument(fmt::format("region '{}' is not in the graph", name));
    }
    return static_cast<std::size_t>(it - names_.begin());
}

bool RegionGraph::contains(const std::string &name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

// ---------------------------------------------------------------------------

ConstraintSet constraints_from_null_space(const StructureMatrix &s) {
    return ConstraintSet{s.null_space.transpose()};
}

Eigen::VectorXd constrained_marginal_variances(const Eigen::MatrixXd &Q, std::size_t rank_deficiency) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q);
    if (eig.info() != Eigen::Success) {
        throw std::runtime_error("eigendecomposition failed");
    }
    const auto n = Q.rows();
    const auto kept = n - static_cast<Eigen::Index>(rank_deficiency);
    // Eigenvalues ascend; the first rank_deficiency are the null space.
    const auto V = eig.eigenvectors().rightCols(kept);
    const auto lambda = eig.eigenvalues().tail(kept);
    if (kept > 0 && !(lambda.minCoeff() > 1e-10 * lambda.maxCoeff())) {
        throw std::invalid_argument("structure has more null directions than declared");
    }
    Eigen::VectorXd var = Eigen::VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < kept; ++k) {
        var += V.col(k).cwiseAbs2() / lambda(k);
    }
    return var;
}

double geometric_mean(const Eigen::VectorXd &v) { return std::exp(v.array().log().mean()); }

StructureMatrix scale_structure(StructureMatrix s) {
    const double gm = geometric_mean(constrained_marginal_variances(s.Q, s.rank_deficiency));
    s.Q *= gm;
    s.scale_factor *= gm;
    s.scaled = true;
    return s;
}

StructureMatrix icar_precision(const RegionGraph &graph, bool scale, std::vector<std::string> *warnings) {
    const auto n = static_cast<Eigen::Index>(graph.size());
    if (n < 2) {
        throw std::invalid_argument("ICAR needs at least two regions");
    }
    const Eigen::MatrixXd A = graph.adjacency().cast<double>();
    Eigen::MatrixXd Q = -A;
    Q.diagonal() = A.rowwise().sum();

    StructureMatrix s;
    s.Q = Eigen::MatrixXd::Zero(n, n);
    std::vector<Eigen::VectorXd> null_vectors;
    for (std::size_t c = 0; c < graph.component_count(); ++c) {
        std::vector<Eigen::Index> members;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (graph.components()[static_cast<std::size_t>(i)] == c) {
                members.push_back(i);
            }
        }
        const auto m = static_cast<Eigen::Index>(members.size());
        if (m == 1) {
            s.Q(members[0], members[0]) = 1.0;
            if (warnings) {
                warnings->push_back(fmt::format("region {} has no neighbours; treated as independent",
                                                graph.names()[static_cast<std::size_t>(members[0])]));
            }
            continue;
        }
        Eigen::MatrixXd block(m, m);
        for (Eigen::Index a = 0; a < m; ++a) {
            for (Eigen::Index b = 0; b < m; ++b) {
                block(a, b) = Q(members[a], members[b]);
            }
        }
        double factor = 1.0;
        if (scale) {
            factor = geometric_mean(constrained_marginal_variances(block, 1));
        }
        Eigen::VectorXd indicator = Eigen::VectorXd::Zero(n);
        for (Eigen::Index a = 0; a < m; ++a) {
            indicator(members[a]) = 1.0;
            for (Eigen::Index b = 0; b < m; ++b) {
                s.Q(members[a], members[b]) = factor * block(a, b);
            }
        }
        null_vectors.push_back(indicator);
        if (graph.connected()) {
            s.scale_factor = factor;
        }
    }
    s.rank_deficiency = null_vectors.size();
    s.null_space.resize(n, static_cast<Eigen::Index>(null_vectors.size()));
    for (std::size_t k = 0; k < null_vectors.size(); ++k) {
        s.null_space.col(static_cast<Eigen::Index>(k)) = null_vectors[k];
    }
    s.scaled = scale;
    return s;
}

StructureMatrix rw_precision(std::size_t T, int order, bool scale) {
    if (order != 1 && order != 2) {
        throw std::invalid_argument("random walk order must be 1 or 2");
    }
    if (T < static_cast<std::size_t>(order) + 1) {
        throw std::invalid_argument(fmt::format("RW{} needs at least {} time points", order, order + 1));
    }
    const auto n = static_cast<Eigen::Index>(T);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n - order, n);
    for (Eigen::Index k = 0; k < n - order; ++k) {
        if (order == 1) {
            D(k, k) = -1.0;
            D(k, k + 1) = 1.0;
        } else {
            D(k, k) = 1.0;
            D(k, k + 1) = -2.0;
            D(k, k + 2) = 1.0;
        }
    }
    StructureMatrix s;
    s.Q = D.transpose() * D;
    s.rank_deficiency = static_cast<std::size_t>(order);
    s.null_space.resize(n, order);
    s.null_space.col(0).setOnes();
    if (order == 2) {
        const double centre = 0.5 * static_cast<double>(n - 1);
        for (Eigen::Index t = 0; t < n; ++t) {
            s.null_space(t, 1) = static_cast<double>(t) - centre;
        }
    }
    return scale ? scale_structure(std::move(s)) : s;
}

StructureMatrix ar1_precision(std::size_t T, double omega) {
    if (!(std::abs(omega) < 1.0)) {
        throw std::invalid_argument("AR1 correlation must satisfy |omega| < 1");
    }
    if (T < 1) {
        throw std::invalid_argument("AR1 needs at least one time point");
    }
    const auto n = static_cast<Eigen::Index>(T);
    StructureMatrix s;
    s.Q = Eigen::MatrixXd::Zero(n, n);
    const double c = 1.0 / (1.0 - omega * omega);
    for (Eigen::Index t = 0; t < n; ++t) {
        const bool interior = t > 0 && t < n - 1;
        s.Q(t, t) = c * (interior ? 1.0 + omega * omega : 1.0);
        if (t + 1 < n) {
            s.Q(t, t + 1) = -c * omega;
            s.Q(t + 1, t) = -c * omega;
        }
    }
    if (n == 1) {
        s.Q(0, 0) = 1.0;
    }
    s.null_space.resize(n, 0);
    s.scaled = true;
    return s;
}

StructureMatrix iid_structure(std::size_t n) {
    StructureMatrix s;
    s.Q = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    s.null_space.resize(static_cast<Eigen::Index>(n), 0);
    s.scaled = true;
    return s;
}

InteractionType parse_interaction_type(int code) {
    if (code < 1 || code > 4) {
        throw std::invalid_argument(fmt::format("interaction type must be 1-4, got {}", code));
    }
    return static_cast<InteractionType>(code);
}

Eigen::MatrixXd kronecker(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

Eigen::MatrixXd independent_rows(const Eigen::MatrixXd &rows, double tol) {
    std::vector<Eigen::VectorXd> basis;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        Eigen::VectorXd v = rows.row(r).transpose();
        const double norm = v.norm();
        if (norm == 0.0) {
            continue;
        }
        for (const auto &b : basis) {
            v -= b.dot(v) * b;
        }
        if (v.norm() > tol * norm) {
            basis.push_back(v.normalized());
            keep.push_back(r);
        }
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(keep.size()), rows.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.row(static_cast<Eigen::Index>(k)) = rows.row(keep[k]);
    }
    return out;
}

InteractionStructure interaction_structure(InteractionType type, const StructureMatrix &temporal,
                                           const StructureMatrix &spatial) {
    const auto T = temporal.Q.rows();
    const auto n = spatial.Q.rows();
    if (T == 0 || n == 0 || temporal.Q.cols() != T || spatial.Q.cols() != n) {
        throw std::invalid_argument("interaction needs square, non-empty temporal and spatial structures");
    }
    const Eigen::MatrixXd It = Eigen::MatrixXd::Identity(T, T);
    const Eigen::MatrixXd Is = Eigen::MatrixXd::Identity(n, n);

    InteractionStructure out;
    std::vector<Eigen::MatrixXd> blocks;
    switch (type) {
    case InteractionType::I:
        out.structure.Q = kronecker(It, Is);
        break;
    case InteractionType::II:
        out.structure.Q = kronecker(temporal.Q, Is);
        blocks.push_back(kronecker(temporal.null_space.transpose(), Is));
        break;
    case InteractionType::III:
        out.structure.Q = kronecker(It, spatial.Q);
        blocks.push_back(kronecker(It, spatial.null_space.transpose()));
        break;
    case InteractionType::IV:
        out.structure.Q = kronecker(temporal.Q, spatial.Q);
        // Within-area sums over time first, then within-time sums over areas.
        blocks.push_back(kronecker(temporal.null_space.transpose(), Is));
        blocks.push_back(kronecker(It, spatial.null_space.transpose()));
        break;
    }
    Eigen::Index total = 0;
    for (const auto &b : blocks) {
        total += b.rows();
    }
    Eigen::MatrixXd stacked(total, T * n);
    Eigen::Index at = 0;
    for (const auto &b : blocks) {
        stacked.middleRows(at, b.rows()) = b;
        at += b.rows();
    }
    out.constraints.A = independent_rows(stacked);
    out.structure.rank_deficiency = static_cast<std::size_t>(out.constraints.A.rows());
    out.structure.null_space = out.constraints.A.transpose();
    const bool t_used = type == InteractionType::II || type == InteractionType::IV;
    const bool s_used = type == InteractionType::III || type == InteractionType::IV;
    out.structure.scaled = (!t_used || temporal.scaled) && (!s_used || spatial.scaled);
    out.structure.scale_factor = (t_used ? temporal.scale_factor : 1.0) * (s_used ? spatial.scale_factor : 1.0);
    return out;
}

Eigen::VectorXd bym2_effect(double sigma, double phi, const Eigen::VectorXd &e_star, const Eigen::VectorXd &s_star) {
    if (!(phi >= 0.0 && phi <= 1.0)) {
        throw std::invalid_argument("BYM2 mixing parameter must lie in [0, 1]");
    }
    if (!(sigma >= 0.0)) {
        throw std::invalid_argument("BYM2 standard deviation must be non-negative");
    }
    if (e_star.size() != s_star.size()) {
        throw std::invalid_argument("BYM2 components differ in length");
    }
    return sigma * (std::sqrt(1.0 - phi) * e_star + std::sqrt(phi) * s_star);
}

void write_matrix_csv(std::ostream &out, const Eigen::MatrixXd &m, const std::vector<std::string> &labels) {
    const bool named = labels.size() == static_cast<std::size_t>(m.rows()) && m.rows() == m.cols();
    std::vector<std::string> header;
    if (named) {
        header.push_back("");
        header.insert(header.end(), labels.begin(), labels.end());
    } else {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            header.push_back(fmt::format("V{}", j + 1));
        }
    }
    csv::Table table{header};
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<std::string> row;
        if (named) {
            row.push_back(labels[static_cast<std::size_t>(i)]);
        }
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            row.push_back(csv::format_number(m(i, j)));
        }
        table.add_row(std::move(row));
    }
    table.write(out);
}

} // namespace sae
