#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "smectic/forms.hpp"
#include "smectic/mesh.hpp"
#include "smectic/mms.hpp"
#include "smectic/quadrature.hpp"
#include "smectic/space.hpp"

namespace smectic {

/// L2 and full H1 norms of (discrete field - exact field), integrated with
/// the over-integration error rule (degree+3 Gauss points per direction).
inline std::pair<double, double> error_l2_h1(const Mesh& mesh, const DofMap& map,
                                             const Eigen::VectorXd& coeffs, const ScalarField& exact) {
    if (coeffs.size() != map.n_global) {
        throw std::invalid_argument("error_l2_h1: coefficient vector size mismatch");
    }
    const QuadratureRule2D rule = cell_rule(map.degree, CellRuleKind::error);
    const CellBasisData basis = CellBasisData::build(map.degree, rule, mesh.h);

    double l2_sq = 0.0;
    double h1_semi_sq = 0.0;
    Eigen::VectorXd local(map.dofs_per_cell);
    for (const Cell& cell : mesh.cells) {
        const std::span<const int> globals = map.cell_globals(cell.index);
        for (int i = 0; i < map.dofs_per_cell; ++i) local[i] = coeffs[globals[i]];
        for (int q = 0; q < basis.n_points; ++q) {
            const PointState s = eval_point(basis, local, q);
            const double x = cell.origin[0] + mesh.h * basis.ref_points[q][0];
            const double y = cell.origin[1] + mesh.h * basis.ref_points[q][1];
            const double ev = s.v - exact.value(x, y);
            const Eigen::Vector2d eg = Eigen::Vector2d(s.dx, s.dy) - exact.gradient(x, y);
            l2_sq += basis.wdx[q] * ev * ev;
            h1_semi_sq += basis.wdx[q] * eg.squaredNorm();
        }
    }
    const double l2 = std::sqrt(l2_sq);
    return {l2, std::sqrt(l2_sq + h1_semi_sq)};
}

/// Mesh-dependent H2-like norm of the error: broken H2 seminorm over cells
/// plus h_e^-3-weighted L2 norms of the gradient jumps over interior facets.
/// The exact field is C1, so the jump of the error is the jump of the
/// discrete field.
inline double error_triple_norm(const Mesh& mesh, const DofMap& map, const Eigen::VectorXd& coeffs,
                                const ScalarField& exact) {
    if (coeffs.size() != map.n_global) {
        throw std::invalid_argument("error_triple_norm: coefficient vector size mismatch");
    }
    const QuadratureRule2D rule = cell_rule(map.degree, CellRuleKind::error);
    const CellBasisData basis = CellBasisData::build(map.degree, rule, mesh.h);

    double broken_h2_sq = 0.0;
    Eigen::VectorXd local(map.dofs_per_cell);
    for (const Cell& cell : mesh.cells) {
        const std::span<const int> globals = map.cell_globals(cell.index);
        for (int i = 0; i < map.dofs_per_cell; ++i) local[i] = coeffs[globals[i]];
        for (int q = 0; q < basis.n_points; ++q) {
            const PointState s = eval_point(basis, local, q);
            const double x = cell.origin[0] + mesh.h * basis.ref_points[q][0];
            const double y = cell.origin[1] + mesh.h * basis.ref_points[q][1];
            const Eigen::Matrix2d eh = (Eigen::Matrix2d() << s.dxx, s.dxy, s.dxy, s.dyy).finished() -
                                       exact.hessian(x, y);
            broken_h2_sq += basis.wdx[q] * eh.squaredNorm();
        }
    }

    double jump_sq = 0.0;
    const QuadratureRule1D frule = facet_rule(map.degree);
    const FacetSideTraces v_minus = facet_side_traces(map.degree, frule, mesh.h, true, true);
    const FacetSideTraces v_plus = facet_side_traces(map.degree, frule, mesh.h, true, false);
    const FacetSideTraces h_minus = facet_side_traces(map.degree, frule, mesh.h, false, true);
    const FacetSideTraces h_plus = facet_side_traces(map.degree, frule, mesh.h, false, false);
    const int nb = map.dofs_per_cell;
    for (const FacetInfo& facet : mesh.interior_facets) {
        const bool vertical = facet.normal[0] != 0.0;
        const FacetSideTraces& minus = vertical ? v_minus : h_minus;
        const FacetSideTraces& plus = vertical ? v_plus : h_plus;
        const std::span<const int> gm = map.cell_globals(facet.cell_minus);
        const std::span<const int> gp = map.cell_globals(facet.cell_plus);
        const double he3 = facet.h_e * facet.h_e * facet.h_e;
        for (int k = 0; k < minus.n_points; ++k) {
            double jump = 0.0;
            for (int i = 0; i < nb; ++i) {
                jump += coeffs[gm[i]] * minus.jump[static_cast<std::size_t>(k) * nb + i];
                jump += coeffs[gp[i]] * plus.jump[static_cast<std::size_t>(k) * nb + i];
            }
            jump_sq += frule.weights[k] * facet.h_e * jump * jump / he3;
        }
    }
    return std::sqrt(broken_h2_sq + jump_sq);
}

/// Convergence orders between consecutive refinement levels whose mesh size
/// halves: order_i = log2(errors[i] / errors[i+1]), positive when the errors
/// shrink.
inline std::vector<double> convergence_orders(const std::vector<double>& errors) {
    for (const double e : errors) {
        if (!(e > 0.0)) throw std::invalid_argument("convergence_orders: errors must be positive");
    }
    std::vector<double> orders;
    for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
        orders.push_back(std::log2(errors[i] / errors[i + 1]));
    }
    return orders;
}

/// Error norms and Newton iteration count of one refinement level. Fields of
/// a problem kind that does not solve them are stored as NaN.
struct LevelRecord {
    int n_per_side = 0;
    double eu_l2 = 0, eu_h1 = 0, eu_triple = 0;
    double eq_l2 = 0, eq_h1 = 0;
    int newton_iters = 0;
};

/// Convergence orders between a pair of consecutive levels.
struct RateRecord {
    double eu_l2 = 0, eu_h1 = 0, eu_triple = 0;
    double eq_l2 = 0, eq_h1 = 0;
};

struct ErrorReport {
    std::string case_name;
    int deg_u = 0; ///< 0 when the density field is not solved
    int deg_q = 0; ///< 0 when the Q field is not solved
    std::vector<LevelRecord> levels;
    std::vector<RateRecord> rates; ///< rates[i] relates levels[i] and levels[i+1]
};

} // namespace smectic
