#pragma once

#include <array>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "smectic/basis.hpp"
#include "smectic/mesh.hpp"

namespace smectic {

/// Global numbering of the tensor-product Lagrange nodes of one scalar field.
/// Node (ix, iy) of the global (degree*n+1)^2 grid gets index iy*width + ix,
/// so shared cell edges map to identical global indices and the field is C0.
struct DofMap {
    int degree = 0;
    int n_per_side = 0;
    int n_global = 0;
    int dofs_per_cell = 0;
    std::vector<int> cell_dofs; ///< flattened, stride dofs_per_cell
    std::vector<int> boundary_dofs; ///< sorted global indices on the domain boundary
    std::vector<std::array<double, 2>> dof_coords;
    std::vector<char> on_boundary;

    std::span<const int> cell_globals(int cell) const {
        return {cell_dofs.data() + static_cast<std::size_t>(cell) * dofs_per_cell,
                static_cast<std::size_t>(dofs_per_cell)};
    }
};

inline DofMap build_dofmap(const Mesh& mesh, int degree) {
    if (degree < 1) {
        throw std::invalid_argument("build_dofmap: degree must be >= 1");
    }
    DofMap map;
    map.degree = degree;
    map.n_per_side = mesh.n_per_side;
    const int width = degree * mesh.n_per_side + 1;
    map.n_global = width * width;
    map.dofs_per_cell = (degree + 1) * (degree + 1);

    map.dof_coords.resize(map.n_global);
    map.on_boundary.assign(map.n_global, 0);
    const double node_h = 1.0 / static_cast<double>(degree * mesh.n_per_side);
    for (int iy = 0; iy < width; ++iy) {
        for (int ix = 0; ix < width; ++ix) {
            const int g = iy * width + ix;
            map.dof_coords[g] = {ix * node_h, iy * node_h};
            if (ix == 0 || iy == 0 || ix == width - 1 || iy == width - 1) {
                map.on_boundary[g] = 1;
                map.boundary_dofs.push_back(g);
            }
        }
    }

    map.cell_dofs.resize(static_cast<std::size_t>(mesh.cells.size()) * map.dofs_per_cell);
    for (const Cell& cell : mesh.cells) {
        const int cx = cell.index % mesh.n_per_side;
        const int cy = cell.index / mesh.n_per_side;
        int local = 0;
        for (int b = 0; b <= degree; ++b) {
            for (int a = 0; a <= degree; ++a, ++local) {
                const int ix = cx * degree + a;
                const int iy = cy * degree + b;
                map.cell_dofs[static_cast<std::size_t>(cell.index) * map.dofs_per_cell + local] =
                    iy * width + ix;
            }
        }
    }
    return map;
}

/// Nodal interpolant: coefficient i is f evaluated at the i-th DOF coordinate.
inline Eigen::VectorXd interpolate(const DofMap& map, const std::function<double(double, double)>& f) {
    Eigen::VectorXd coeffs(map.n_global);
    for (int g = 0; g < map.n_global; ++g) {
        coeffs[g] = f(map.dof_coords[g][0], map.dof_coords[g][1]);
    }
    return coeffs;
}

struct FeEval {
    double value = 0.0;
    Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hessian = Eigen::Matrix2d::Zero();
};

/// Value, gradient and Hessian of the piecewise polynomial at a reference
/// point of one cell, with the pullback scalings of the uniform mesh applied.
inline FeEval eval_fe(const DofMap& map, const Mesh& mesh, const Eigen::VectorXd& coeffs, int cell,
                      std::array<double, 2> ref_point) {
    if (coeffs.size() != map.n_global) {
        throw std::invalid_argument("eval_fe: coefficient vector size does not match the dof map");
    }
    if (cell < 0 || cell >= static_cast<int>(mesh.cells.size())) {
        throw std::invalid_argument("eval_fe: cell index out of range");
    }
    const std::array<std::array<double, 2>, 1> pts{ref_point};
    const BasisTabulation tab = tabulate(map.degree, std::span<const std::array<double, 2>>(pts));
    const PullbackScalings scale = pullback_scalings(mesh.h);

    FeEval out;
    const std::span<const int> globals = map.cell_globals(cell);
    for (int i = 0; i < map.dofs_per_cell; ++i) {
        const double c = coeffs[globals[i]];
        out.value += c * tab.value(0, i);
        out.gradient += c * scale.grad * tab.gradient(0, i);
        out.hessian += c * scale.hess * tab.hessian(0, i);
    }
    return out;
}

/// Coefficient vectors of the three scalar fields. Fields not used by the
/// current problem kind stay empty. The Q-tensor is reconstructed from its
/// two stored components as [[Q11, Q12], [Q12, -Q11]], so symmetry and
/// tracelessness hold by construction.
struct SystemState {
    Eigen::VectorXd u;
    Eigen::VectorXd q11;
    Eigen::VectorXd q12;
};

} // namespace smectic
