#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace smectic {

/// One axis-aligned square cell of the structured mesh: lower-left corner
/// coordinates plus its row-major index.
struct Cell {
    std::array<double, 2> origin{0.0, 0.0};
    int index = -1;
};

/// A mesh facet (edge). `normal` is the unit normal pointing out of
/// `cell_minus`; for interior facets `cell_plus` is the neighbour on the other
/// side, for boundary facets it is -1. `endpoints[0]` is chosen so that the
/// facet parameter t in [0,1] increases with the matching reference coordinate
/// of the adjacent cells.
struct FacetInfo {
    int facet_id = -1;
    int cell_minus = -1;
    int cell_plus = -1;
    std::array<double, 2> normal{0.0, 0.0};
    double h_e = 0.0;
    std::array<std::array<double, 2>, 2> endpoints{};

    bool is_boundary() const { return cell_plus < 0; }

    std::array<double, 2> point_at(double t) const {
        return {endpoints[0][0] + t * (endpoints[1][0] - endpoints[0][0]),
                endpoints[0][1] + t * (endpoints[1][1] - endpoints[0][1])};
    }
};

/// Uniform n x n quadrilateral mesh of the unit square with explicit interior
/// and boundary facet lists. Immutable after construction.
struct Mesh {
    int n_per_side = 0;
    double h = 0.0;
    std::vector<Cell> cells;
    std::vector<FacetInfo> interior_facets;
    std::vector<FacetInfo> boundary_facets;

    int cell_index(int cx, int cy) const { return cy * n_per_side + cx; }
};

/// Builds the uniform mesh of (0,1)^2 with n cells per side. Cells are
/// enumerated row-major; facet normals point from the lower-indexed cell into
/// the higher-indexed one, so jump signs are reproducible.
inline Mesh unit_square_mesh(int n) {
    if (n < 1) {
        throw std::invalid_argument("unit_square_mesh: n must be >= 1, got " + std::to_string(n));
    }
    Mesh mesh;
    mesh.n_per_side = n;
    mesh.h = 1.0 / static_cast<double>(n);
    const double h = mesh.h;

    mesh.cells.reserve(static_cast<std::size_t>(n) * n);
    for (int cy = 0; cy < n; ++cy) {
        for (int cx = 0; cx < n; ++cx) {
            mesh.cells.push_back(Cell{{cx * h, cy * h}, mesh.cell_index(cx, cy)});
        }
    }

    int next_id = 0;
    mesh.interior_facets.reserve(static_cast<std::size_t>(2 * n) * (n - 1));
    for (int cy = 0; cy < n; ++cy) {
        for (int cx = 0; cx < n; ++cx) {
            // Vertical facet shared with the right neighbour.
            if (cx + 1 < n) {
                FacetInfo f;
                f.facet_id = next_id++;
                f.cell_minus = mesh.cell_index(cx, cy);
                f.cell_plus = mesh.cell_index(cx + 1, cy);
                f.normal = {1.0, 0.0};
                f.h_e = h;
                f.endpoints = {{{(cx + 1) * h, cy * h}, {(cx + 1) * h, (cy + 1) * h}}};
                mesh.interior_facets.push_back(f);
            }
            // Horizontal facet shared with the top neighbour.
            if (cy + 1 < n) {
                FacetInfo f;
                f.facet_id = next_id++;
                f.cell_minus = mesh.cell_index(cx, cy);
                f.cell_plus = mesh.cell_index(cx, cy + 1);
                f.normal = {0.0, 1.0};
                f.h_e = h;
                f.endpoints = {{{cx * h, (cy + 1) * h}, {(cx + 1) * h, (cy + 1) * h}}};
                mesh.interior_facets.push_back(f);
            }
        }
    }

    mesh.boundary_facets.reserve(static_cast<std::size_t>(4) * n);
    for (int cy = 0; cy < n; ++cy) {
        for (int cx = 0; cx < n; ++cx) {
            const int c = mesh.cell_index(cx, cy);
            const double x0 = cx * h;
            const double y0 = cy * h;
            if (cx == 0) {
                FacetInfo f;
                f.facet_id = next_id++;
                f.cell_minus = c;
                f.normal = {-1.0, 0.0};
                f.h_e = h;
                f.endpoints = {{{x0, y0}, {x0, y0 + h}}};
                mesh.boundary_facets.push_back(f);
            }
            if (cx == n - 1) {
                FacetInfo f;
                f.facet_id = next_id++;
                f.cell_minus = c;
                f.normal = {1.0, 0.0};
                f.h_e = h;
                f.endpoints = {{{x0 + h, y0}, {x0 + h, y0 + h}}};
                mesh.boundary_facets.push_back(f);
            }
            if (cy == 0) {
                FacetInfo f;
                f.facet_id = next_id++;
                f.cell_minus = c;
                f.normal = {0.0, -1.0};
                f.h_e = h;
                f.endpoints = {{{x0, y0}, {x0 + h, y0}}};
                mesh.boundary_facets.push_back(f);
            }
            if (cy == n - 1) {
                FacetInfo f;
                f.facet_id = next_id++;
                f.cell_minus = c;
                f.normal = {0.0, 1.0};
                f.h_e = h;
                f.endpoints = {{{x0, y0 + h}, {x0 + h, y0 + h}}};
                mesh.boundary_facets.push_back(f);
            }
        }
    }

    return mesh;
}

} // namespace smectic
