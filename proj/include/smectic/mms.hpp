#pragma once

#include <array>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "smectic/model.hpp"
#include "smectic/space.hpp"

namespace smectic {

/// A scalar field with closed-form derivatives, as consumed by the error
/// norms and the manufactured-solution machinery.
struct ScalarField {
    std::function<double(double, double)> value;
    std::function<Eigen::Vector2d(double, double)> gradient;
    std::function<Eigen::Matrix2d(double, double)> hessian;
};

namespace detail {

// 1D factor of the density field: phi(t) = (t^2 - t)^3 and derivatives up to
// fourth order. Each boundary endpoint is a triple root, so phi, phi' and
// phi'' vanish at t = 0 and t = 1.
struct Phi {
    double v, d1, d2, d3, d4;
};

inline Phi phi_derivs(double t) {
    const double p = t * t - t;
    const double dp = 2.0 * t - 1.0;
    Phi out;
    out.v = p * p * p;
    out.d1 = 3.0 * p * p * dp;
    out.d2 = 6.0 * p * dp * dp + 6.0 * p * p;
    out.d3 = 6.0 * dp * dp * dp + 36.0 * p * dp;
    out.d4 = 72.0 * dp * dp + 72.0 * p;
    return out;
}

} // namespace detail

/// All closed-form derivatives of the manufactured fields at one point:
/// density u up to fourth order, Q components up to second order.
struct ExactDerivs {
    double u, ux, uy, uxx, uxy, uyy;
    double uxxx, uxxy, uxyy, uyyy;
    double uxxxx, uxxyy, uyyyy;
    double q11, q11x, q11y, q11xx, q11xy, q11yy;
    double q12, q12x, q12y, q12xx, q12xy, q12yy;

    double biharmonic_u() const { return uxxxx + 2.0 * uxxyy + uyyyy; }
};

inline ExactDerivs exact_derivs(double x, double y) {
    ExactDerivs d{};

    const detail::Phi fx = detail::phi_derivs(x);
    const detail::Phi fy = detail::phi_derivs(y);
    const double amp = 10.0;
    d.u = amp * fx.v * fy.v;
    d.ux = amp * fx.d1 * fy.v;
    d.uy = amp * fx.v * fy.d1;
    d.uxx = amp * fx.d2 * fy.v;
    d.uxy = amp * fx.d1 * fy.d1;
    d.uyy = amp * fx.v * fy.d2;
    d.uxxx = amp * fx.d3 * fy.v;
    d.uxxy = amp * fx.d2 * fy.d1;
    d.uxyy = amp * fx.d1 * fy.d2;
    d.uyyy = amp * fx.v * fy.d3;
    d.uxxxx = amp * fx.d4 * fy.v;
    d.uxxyy = amp * fx.d2 * fy.d2;
    d.uyyyy = amp * fx.v * fy.d4;

    // Q11 = cos(theta)/2, Q12 = sin(theta)/2 with theta = pi(2x-1)(2y-1)/4,
    // so Q11^2 + Q12^2 = 1/4 pointwise.
    const double theta = M_PI * (2.0 * x - 1.0) * (2.0 * y - 1.0) / 4.0;
    const double tx = M_PI * (2.0 * y - 1.0) / 2.0;
    const double ty = M_PI * (2.0 * x - 1.0) / 2.0;
    const double txy = M_PI;
    const double c = std::cos(theta);
    const double s = std::sin(theta);

    d.q11 = 0.5 * c;
    d.q11x = -0.5 * s * tx;
    d.q11y = -0.5 * s * ty;
    d.q11xx = -0.5 * c * tx * tx;
    d.q11yy = -0.5 * c * ty * ty;
    d.q11xy = -0.5 * (c * tx * ty + s * txy);

    d.q12 = 0.5 * s;
    d.q12x = 0.5 * c * tx;
    d.q12y = 0.5 * c * ty;
    d.q12xx = -0.5 * s * tx * tx;
    d.q12yy = -0.5 * s * ty * ty;
    d.q12xy = 0.5 * (-s * tx * ty + c * txy);

    return d;
}

/// Exact values, gradients and the density Hessian at one point.
struct ExactFields {
    double u;
    Eigen::Vector2d grad_u;
    Eigen::Matrix2d hess_u;
    double q11;
    Eigen::Vector2d grad_q11;
    double q12;
    Eigen::Vector2d grad_q12;
};

inline ExactFields exact_fields(double x, double y) {
    const ExactDerivs d = exact_derivs(x, y);
    ExactFields out;
    out.u = d.u;
    out.grad_u = {d.ux, d.uy};
    out.hess_u << d.uxx, d.uxy, d.uxy, d.uyy;
    out.q11 = d.q11;
    out.grad_q11 = {d.q11x, d.q11y};
    out.q12 = d.q12;
    out.grad_q12 = {d.q12x, d.q12y};
    return out;
}

/// Source terms (s1, s2, s3) obtained by substituting the exact fields into
/// the strong operators of the coupled system. All derivatives entering here
/// are closed-form; the finite-difference strong-operator oracle in the test
/// suite checks every coefficient.
inline std::array<double, 3> mms_sources(double x, double y, const ModelParams& p) {
    const ExactDerivs d = exact_derivs(x, y);
    const double q2 = p.q * p.q;
    const double q4 = q2 * q2;
    const double norm2 = d.q11 * d.q11 + d.q12 * d.q12;

    const double lap_q11 = d.q11xx + d.q11yy;
    const double lap_q12 = d.q12xx + d.q12yy;

    const double s1 = 4.0 * p.B * q4 * d.u * d.u * d.q11 + 2.0 * p.B * q2 * d.u * (d.uxx - d.uyy) -
                      2.0 * p.K * lap_q11 - 4.0 * p.l * d.q11 + 16.0 * p.l * d.q11 * norm2;
    const double s2 = 4.0 * p.B * q4 * d.u * d.u * d.q12 + 4.0 * p.B * q2 * d.u * d.uxy -
                      2.0 * p.K * lap_q12 - 4.0 * p.l * d.q12 + 16.0 * p.l * d.q12 * norm2;

    // t1 = M : D^2 u and t2 = sum_ij d_i d_j (u M_ij) with M = Q + I/2.
    const double m11 = d.q11 + 0.5;
    const double m22 = 0.5 - d.q11;
    const double t1 = m11 * d.uxx + m22 * d.uyy + 2.0 * d.q12 * d.uxy;
    const double t2 = (d.uxx * m11 + 2.0 * d.ux * d.q11x + d.u * d.q11xx) +
                      (d.uyy * m22 - 2.0 * d.uy * d.q11y - d.u * d.q11yy) +
                      2.0 * (d.uxy * d.q12 + d.ux * d.q12y + d.uy * d.q12x + d.u * d.q12xy);

    const double s3 = p.a1 * d.u + p.a2 * d.u * d.u + p.a3 * d.u * d.u * d.u +
                      2.0 * p.B * d.biharmonic_u() + p.B * q4 * (4.0 * norm2 + 1.0) * d.u +
                      2.0 * p.B * q2 * (t1 + t2);

    return {s1, s2, s3};
}

/// Dirichlet traces of the exact fields. The density trace is identically
/// zero because every boundary factor of u appears cubed.
struct BoundaryValues {
    double u_b;
    double q11_b;
    double q12_b;
};

inline BoundaryValues dirichlet_data(double x, double y) {
    const ExactDerivs d = exact_derivs(x, y);
    return {d.u, d.q11, d.q12};
}

inline ScalarField exact_u_field() {
    return {[](double x, double y) { return exact_derivs(x, y).u; },
            [](double x, double y) {
                const ExactDerivs d = exact_derivs(x, y);
                return Eigen::Vector2d{d.ux, d.uy};
            },
            [](double x, double y) {
                const ExactDerivs d = exact_derivs(x, y);
                Eigen::Matrix2d h;
                h << d.uxx, d.uxy, d.uxy, d.uyy;
                return h;
            }};
}

inline ScalarField exact_q11_field() {
    return {[](double x, double y) { return exact_derivs(x, y).q11; },
            [](double x, double y) {
                const ExactDerivs d = exact_derivs(x, y);
                return Eigen::Vector2d{d.q11x, d.q11y};
            },
            [](double x, double y) {
                const ExactDerivs d = exact_derivs(x, y);
                Eigen::Matrix2d h;
                h << d.q11xx, d.q11xy, d.q11xy, d.q11yy;
                return h;
            }};
}

inline ScalarField exact_q12_field() {
    return {[](double x, double y) { return exact_derivs(x, y).q12; },
            [](double x, double y) {
                const ExactDerivs d = exact_derivs(x, y);
                return Eigen::Vector2d{d.q12x, d.q12y};
            },
            [](double x, double y) {
                const ExactDerivs d = exact_derivs(x, y);
                Eigen::Matrix2d h;
                h << d.q12xx, d.q12xy, d.q12xy, d.q12yy;
                return h;
            }};
}

/// Nodal interpolant of 0.5*(exact field) + 1e-9 for every field the problem
/// kind solves, with the exact Dirichlet trace written onto boundary DOFs.
inline SystemState initial_guess(const DofMap* u_map, const DofMap* q_map, ProblemKind kind) {
    SystemState state;
    const double shift = 1e-9;

    if (kind != ProblemKind::p2_qtensor) {
        if (u_map == nullptr) throw std::invalid_argument("initial_guess: u dof map required");
        state.u = interpolate(*u_map, [shift](double x, double y) {
            return 0.5 * exact_derivs(x, y).u + shift;
        });
        for (const int g : u_map->boundary_dofs) {
            const auto& c = u_map->dof_coords[g];
            state.u[g] = exact_derivs(c[0], c[1]).u;
        }
    }
    if (kind != ProblemKind::p1_density) {
        if (q_map == nullptr) throw std::invalid_argument("initial_guess: Q dof map required");
        state.q11 = interpolate(*q_map, [shift](double x, double y) {
            return 0.5 * exact_derivs(x, y).q11 + shift;
        });
        state.q12 = interpolate(*q_map, [shift](double x, double y) {
            return 0.5 * exact_derivs(x, y).q12 + shift;
        });
        for (const int g : q_map->boundary_dofs) {
            const auto& c = q_map->dof_coords[g];
            const ExactDerivs d = exact_derivs(c[0], c[1]);
            state.q11[g] = d.q11;
            state.q12[g] = d.q12;
        }
    }
    return state;
}

/// Bundle of exact fields and the pointwise source evaluator for one problem
/// kind. The decoupled kinds use the same fields with the q-dependent source
/// contributions switched off through the parameters.
struct ManufacturedCase {
    ProblemKind kind = ProblemKind::coupled;
    ScalarField u;
    ScalarField q11;
    ScalarField q12;
    std::function<std::array<double, 3>(double, double, const ModelParams&)> sources;
};

inline ManufacturedCase manufactured_case(ProblemKind kind) {
    ManufacturedCase c;
    c.kind = kind;
    c.u = exact_u_field();
    c.q11 = exact_q11_field();
    c.q12 = exact_q12_field();
    c.sources = [](double x, double y, const ModelParams& p) { return mms_sources(x, y, p); };
    return c;
}

} // namespace smectic
