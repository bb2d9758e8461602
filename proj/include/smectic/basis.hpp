#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace smectic {

/// Value, first and second derivative of the k-th 1D Lagrange polynomial on
/// the equispaced nodes {0, 1/deg, ..., 1}, evaluated at t. Uses the product
/// expansions of the derivatives, which stay well conditioned for deg <= 9.
inline std::array<double, 3> lagrange_1d(int degree, int k, double t) {
    const int n = degree + 1;
    const double spacing = 1.0 / static_cast<double>(degree);
    auto node = [spacing](int j) { return j * spacing; };

    double value = 1.0;
    for (int j = 0; j < n; ++j) {
        if (j == k) continue;
        value *= (t - node(j)) / (node(k) - node(j));
    }

    double d1 = 0.0;
    for (int m = 0; m < n; ++m) {
        if (m == k) continue;
        double term = 1.0 / (node(k) - node(m));
        for (int j = 0; j < n; ++j) {
            if (j == k || j == m) continue;
            term *= (t - node(j)) / (node(k) - node(j));
        }
        d1 += term;
    }

    double d2 = 0.0;
    for (int m = 0; m < n; ++m) {
        if (m == k) continue;
        for (int r = 0; r < n; ++r) {
            if (r == k || r == m) continue;
            double term = 1.0 / ((node(k) - node(m)) * (node(k) - node(r)));
            for (int j = 0; j < n; ++j) {
                if (j == k || j == m || j == r) continue;
                term *= (t - node(j)) / (node(k) - node(j));
            }
            d2 += term;
        }
    }

    return {value, d1, d2};
}

/// The (degree+1)^2 tensor-product Lagrange nodes on [0,1]^2 in lexicographic
/// order (x runs fastest).
inline std::vector<std::array<double, 2>> reference_nodes(int degree) {
    if (degree < 1) {
        throw std::invalid_argument("reference_nodes: degree must be >= 1, got " + std::to_string(degree));
    }
    const double spacing = 1.0 / static_cast<double>(degree);
    std::vector<std::array<double, 2>> nodes;
    nodes.reserve(static_cast<std::size_t>(degree + 1) * (degree + 1));
    for (int b = 0; b <= degree; ++b) {
        for (int a = 0; a <= degree; ++a) {
            nodes.push_back({a * spacing, b * spacing});
        }
    }
    return nodes;
}

/// Values, gradients and Hessians of all tensor-product basis functions at a
/// set of reference points. Storage is flattened as [point * n_basis + i];
/// the Hessian is kept as its three distinct entries (it is symmetric).
struct BasisTabulation {
    int degree = 0;
    int n_basis = 0;
    std::vector<std::array<double, 2>> points;
    std::vector<double> values;
    std::vector<double> grad_x, grad_y;
    std::vector<double> hess_xx, hess_xy, hess_yy;

    double value(int p, int i) const { return values[static_cast<std::size_t>(p) * n_basis + i]; }
    Eigen::Vector2d gradient(int p, int i) const {
        const std::size_t idx = static_cast<std::size_t>(p) * n_basis + i;
        return {grad_x[idx], grad_y[idx]};
    }
    Eigen::Matrix2d hessian(int p, int i) const {
        const std::size_t idx = static_cast<std::size_t>(p) * n_basis + i;
        Eigen::Matrix2d H;
        H << hess_xx[idx], hess_xy[idx], hess_xy[idx], hess_yy[idx];
        return H;
    }
};

inline BasisTabulation tabulate(int degree, std::span<const std::array<double, 2>> points) {
    if (degree < 1) {
        throw std::invalid_argument("tabulate: degree must be >= 1, got " + std::to_string(degree));
    }
    BasisTabulation tab;
    tab.degree = degree;
    tab.n_basis = (degree + 1) * (degree + 1);
    tab.points.assign(points.begin(), points.end());

    const std::size_t total = points.size() * static_cast<std::size_t>(tab.n_basis);
    tab.values.resize(total);
    tab.grad_x.resize(total);
    tab.grad_y.resize(total);
    tab.hess_xx.resize(total);
    tab.hess_xy.resize(total);
    tab.hess_yy.resize(total);

    std::vector<std::array<double, 3>> lx(degree + 1), ly(degree + 1);
    for (std::size_t p = 0; p < points.size(); ++p) {
        for (int k = 0; k <= degree; ++k) {
            lx[k] = lagrange_1d(degree, k, points[p][0]);
            ly[k] = lagrange_1d(degree, k, points[p][1]);
        }
        for (int b = 0; b <= degree; ++b) {
            for (int a = 0; a <= degree; ++a) {
                const std::size_t idx = p * tab.n_basis + (static_cast<std::size_t>(b) * (degree + 1) + a);
                tab.values[idx] = lx[a][0] * ly[b][0];
                tab.grad_x[idx] = lx[a][1] * ly[b][0];
                tab.grad_y[idx] = lx[a][0] * ly[b][1];
                tab.hess_xx[idx] = lx[a][2] * ly[b][0];
                tab.hess_xy[idx] = lx[a][1] * ly[b][1];
                tab.hess_yy[idx] = lx[a][0] * ly[b][2];
            }
        }
    }
    return tab;
}

inline BasisTabulation tabulate(int degree, const std::vector<std::array<double, 2>>& points) {
    return tabulate(degree, std::span<const std::array<double, 2>>(points));
}

/// Derivative scalings of the affine map from the reference cell [0,1]^2 to a
/// physical cell of edge length h: physical gradient = grad_scale * reference
/// gradient, physical Hessian = hess_scale * reference Hessian.
struct PullbackScalings {
    double grad = 1.0;
    double hess = 1.0;
};

inline PullbackScalings pullback_scalings(double mesh_h) {
    if (!(mesh_h > 0.0)) {
        throw std::invalid_argument("pullback_scalings: mesh_h must be > 0");
    }
    return {1.0 / mesh_h, 1.0 / (mesh_h * mesh_h)};
}

} // namespace smectic
