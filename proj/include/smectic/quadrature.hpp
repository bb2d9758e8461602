#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace smectic {

struct QuadratureRule1D {
    std::vector<double> points;
    std::vector<double> weights;
};

struct QuadratureRule2D {
    std::vector<std::array<double, 2>> points;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [0,1]; exact for polynomials of degree
/// <= 2n-1. Nodes are found by Newton iteration on P_n with Chebyshev-like
/// starting guesses, which converges to machine precision in a few steps.
inline QuadratureRule1D gauss_1d(int n) {
    if (n < 1 || n > 20) {
        throw std::invalid_argument("gauss_1d: n must be in [1,20], got " + std::to_string(n));
    }
    QuadratureRule1D rule;
    rule.points.resize(n);
    rule.weights.resize(n);

    for (int i = 0; i < n; ++i) {
        // Root of P_n on [-1,1].
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            // Evaluate P_n and P_n' by the three-term recurrence.
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            const double pn = (n == 1) ? x : p1;
            const double pnm1 = (n == 1) ? 1.0 : p0;
            dp = n * (x * pn - pnm1) / (x * x - 1.0);
            const double dx = pn / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        // Map from [-1,1] to [0,1]: weight 2/((1-x^2) P_n'^2) halves.
        rule.points[i] = 0.5 * (1.0 + x);
        rule.weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    // Sort ascending (the root guesses come out descending).
    for (int i = 0; i < n / 2; ++i) {
        std::swap(rule.points[i], rule.points[n - 1 - i]);
        std::swap(rule.weights[i], rule.weights[n - 1 - i]);
    }
    return rule;
}

enum class CellRuleKind {
    residual, ///< 2*degree+1 points per direction: the quartic bulk term is integrated exactly
    error     ///< degree+3 points per direction: over-integration for error norms
};

/// Tensor-product Gauss rule on the reference cell [0,1]^2.
inline QuadratureRule2D cell_rule(int degree, CellRuleKind kind) {
    if (degree < 1) {
        throw std::invalid_argument("cell_rule: degree must be >= 1, got " + std::to_string(degree));
    }
    const int n = (kind == CellRuleKind::residual) ? 2 * degree + 1 : degree + 3;
    const QuadratureRule1D line = gauss_1d(n);
    QuadratureRule2D rule;
    rule.points.reserve(static_cast<std::size_t>(n) * n);
    rule.weights.reserve(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            rule.points.push_back({line.points[i], line.points[j]});
            rule.weights.push_back(line.weights[i] * line.weights[j]);
        }
    }
    return rule;
}

/// Gauss rule along the reference edge parameter t in [0,1].
inline QuadratureRule1D facet_rule(int degree) {
    if (degree < 1) {
        throw std::invalid_argument("facet_rule: degree must be >= 1, got " + std::to_string(degree));
    }
    return gauss_1d(degree + 2);
}

} // namespace smectic
