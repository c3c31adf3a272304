#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/geo.hpp"

namespace sae {

/// Named areas with a symmetric 0/1 adjacency matrix and zero diagonal.
class RegionGraph {
  public:
    RegionGraph(std::vector<std::string> names, Eigen::MatrixXi adjacency);

    /// Square CSV whose header row and first column both carry the names.
    static RegionGraph from_csv(std::istream &in);
    static RegionGraph from_csv(const std::filesystem::path &path);
    /// Two features are neighbours iff they share at least two vertices
    /// (exact coordinate match).
    static RegionGraph from_geo(const GeoMap &map);

    void write_csv(std::ostream &out) const;

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string> &names() const { return names_; }
    const Eigen::MatrixXi &adjacency() const { return adjacency_; }
    std::size_t index(const std::string &name) const;
    bool contains(const std::string &name) const;

    /// Connected-component id of each node, numbered in order of first node.
    const std::vector<std::size_t> &components() const { return components_; }
    std::size_t component_count() const { return component_count_; }
    bool connected() const { return component_count_ == 1; }

  private:
    std::vector<std::string> names_;
    Eigen::MatrixXi adjacency_;
    std::vector<std::size_t> components_;
    std::size_t component_count_ = 0;
};

/// Symmetric positive semi-definite structure (precision up to a scalar).
struct StructureMatrix {
    Eigen::MatrixXd Q;
    std::size_t rank_deficiency = 0;
    /// Columns span the null space of Q.
    Eigen::MatrixXd null_space;
    bool scaled = false;
    /// Multiplier applied to the raw structure when scaling.
    double scale_factor = 1.0;

    std::size_t size() const { return static_cast<std::size_t>(Q.rows()); }
};

/// Linear constraints A x = 0, one per row.
struct ConstraintSet {
    Eigen::MatrixXd A;

    std::size_t size() const { return static_cast<std::size_t>(A.rows()); }
    bool empty() const { return A.rows() == 0; }
};

/// Sum-to-zero rows spanning the null space, one per basis vector.
ConstraintSet constraints_from_null_space(const StructureMatrix &s);

/// Marginal variances of the generalised inverse of Q with the null-space
/// directions removed (eigendecomposition).
Eigen::VectorXd constrained_marginal_variances(const Eigen::MatrixXd &Q, std::size_t rank_deficiency);

double geometric_mean(const Eigen::VectorXd &v);

/// Rescales Q so that the geometric mean of the constrained marginal
/// variances is one. Idempotent and invariant to positive rescaling of Q.
StructureMatrix scale_structure(StructureMatrix s);

/// Intrinsic CAR structure D - A, scaled per connected component. Isolated
/// nodes get an independent unit-variance entry; a warning is appended.
StructureMatrix icar_precision(const RegionGraph &graph, bool scale = true,
                               std::vector<std::string> *warnings = nullptr);

/// Random walk of order 1 or 2 on T equally spaced points.
StructureMatrix rw_precision(std::size_t T, int order, bool scale = true);

/// Stationary AR1 precision with unit marginal variance.
StructureMatrix ar1_precision(std::size_t T, double omega);

StructureMatrix iid_structure(std::size_t n);

enum class InteractionType { I = 1, II = 2, III = 3, IV = 4 };

InteractionType parse_interaction_type(int code);

struct InteractionStructure {
    StructureMatrix structure;
    ConstraintSet constraints;
};

/// Knorr-Held interaction on a time-major layout (index t * n + i).
/// Linearly dependent constraint rows are dropped, keeping earlier rows.
InteractionStructure interaction_structure(InteractionType type, const StructureMatrix &temporal,
                                           const StructureMatrix &spatial);

Eigen::MatrixXd kronecker(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b);

/// Keeps rows that are linearly independent of the rows before them.
Eigen::MatrixXd independent_rows(const Eigen::MatrixXd &rows, double tol = 1e-9);

/// sigma * (sqrt(1 - phi) e* + sqrt(phi) S*)
Eigen::VectorXd bym2_effect(double sigma, double phi, const Eigen::VectorXd &e_star, const Eigen::VectorXd &s_star);

/// Dense CSV dump with optional row/column labels.
void write_matrix_csv(std::ostream &out, const Eigen::MatrixXd &m, const std::vector<std::string> &labels = {});

} // namespace sae
