#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "smectic/basis.hpp"
#include "smectic/mesh.hpp"
#include "smectic/model.hpp"
#include "smectic/quadrature.hpp"
#include "smectic/space.hpp"
#include "smectic/sparse.hpp"

namespace smectic {

/// Basis data at a fixed set of reference points with the pullback to a
/// physical cell of edge length h already applied. The mesh is uniform, so
/// one tabulation serves every cell.
struct CellBasisData {
    int n_basis = 0;
    int n_points = 0;
    double h = 1.0;
    std::vector<std::array<double, 2>> ref_points;
    std::vector<double> val, gx, gy, hxx, hxy, hyy; ///< [q * n_basis + i]
    std::vector<double> wdx; ///< quadrature weight times cell measure

    static CellBasisData build(int degree, const QuadratureRule2D& rule, double h) {
        CellBasisData d;
        const BasisTabulation tab = tabulate(degree, rule.points);
        const PullbackScalings scale = pullback_scalings(h);
        d.n_basis = tab.n_basis;
        d.n_points = static_cast<int>(rule.points.size());
        d.h = h;
        d.ref_points = rule.points;
        const std::size_t total = tab.values.size();
        d.val = tab.values;
        d.gx.resize(total);
        d.gy.resize(total);
        d.hxx.resize(total);
        d.hxy.resize(total);
        d.hyy.resize(total);
        for (std::size_t k = 0; k < total; ++k) {
            d.gx[k] = scale.grad * tab.grad_x[k];
            d.gy[k] = scale.grad * tab.grad_y[k];
            d.hxx[k] = scale.hess * tab.hess_xx[k];
            d.hxy[k] = scale.hess * tab.hess_xy[k];
            d.hyy[k] = scale.hess * tab.hess_yy[k];
        }
        d.wdx.resize(rule.weights.size());
        for (std::size_t k = 0; k < rule.weights.size(); ++k) {
            d.wdx[k] = rule.weights[k] * h * h;
        }
        return d;
    }
};

/// Value and derivatives of one scalar field at one quadrature point.
/// The residual path carries extended precision end to end: near Newton
/// convergence the residual is the tiny net of large cancelling terms, and
/// plain double accumulation leaves a noise floor that pollutes the finest
/// error-table entries.
struct PointStateLd {
    long double v = 0, dx = 0, dy = 0, dxx = 0, dxy = 0, dyy = 0;
};

inline PointStateLd eval_point_ld(const CellBasisData& b, const Eigen::VectorXd& local, int q) {
    PointStateLd s;
    const std::size_t off = static_cast<std::size_t>(q) * b.n_basis;
    for (int i = 0; i < b.n_basis; ++i) {
        const long double c = local[i];
        s.v += c * b.val[off + i];
        s.dx += c * b.gx[off + i];
        s.dy += c * b.gy[off + i];
        s.dxx += c * b.hxx[off + i];
        s.dxy += c * b.hxy[off + i];
        s.dyy += c * b.hyy[off + i];
    }
    return s;
}

struct PointState {
    double v = 0, dx = 0, dy = 0, dxx = 0, dxy = 0, dyy = 0;
};

inline PointState eval_point(const CellBasisData& b, const Eigen::VectorXd& local, int q) {
    const PointStateLd s = eval_point_ld(b, local, q);
    return {static_cast<double>(s.v),   static_cast<double>(s.dx),  static_cast<double>(s.dy),
            static_cast<double>(s.dxx), static_cast<double>(s.dxy), static_cast<double>(s.dyy)};
}

using VectorLd = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

/// Local residual/Jacobian/energy contributions of one cell or facet. The
/// index layout is [0,nu) density DOFs, [nu,nu+nq) Q11, [nu+nq,nu+2nq) Q12.
struct LocalSystem {
    int nu = 0;
    int nq = 0;
    VectorLd r;
    Eigen::MatrixXd J;
    long double energy = 0.0;

    void reset(int nu_, int nq_) {
        nu = nu_;
        nq = nq_;
        const int n = nu + 2 * nq;
        r.setZero(n);
        J.setZero(n, n);
        energy = 0.0;
    }
};

/// Cell terms of the fourth-order density equation: the Hessian product
/// 2B D^2u : D^2t plus the bulk a1 u t + a2 u^2 t + a3 u^3 t, with the exact
/// linearisation. Also accumulates the cell energy B|D^2u|^2 + f_s(u).
inline void cell_kernel_u(const ModelParams& p, const CellBasisData& ub, const Eigen::VectorXd& u_local,
                          LocalSystem& ls) {
    const int nb = ub.n_basis;
    const double twoB = 2.0 * p.B;
    for (int q = 0; q < ub.n_points; ++q) {
        const PointStateLd s = eval_point_ld(ub, u_local, q);
        const long double w = ub.wdx[q];
        const std::size_t off = static_cast<std::size_t>(q) * nb;
        const double* val = ub.val.data() + off;
        const double* hxx = ub.hxx.data() + off;
        const double* hxy = ub.hxy.data() + off;
        const double* hyy = ub.hyy.data() + off;

        const long double bulk = p.a1 * s.v + p.a2 * s.v * s.v + p.a3 * s.v * s.v * s.v;
        for (int i = 0; i < nb; ++i) {
            ls.r[i] += w * (twoB * (s.dxx * hxx[i] + 2.0L * s.dxy * hxy[i] + s.dyy * hyy[i]) + bulk * val[i]);
        }
        const double sv = static_cast<double>(s.v);
        const double dbulk = p.a1 + 2.0 * p.a2 * sv + 3.0 * p.a3 * sv * sv;
        const double wd = ub.wdx[q];
        for (int i = 0; i < nb; ++i) {
            for (int j = 0; j < nb; ++j) {
                ls.J(i, j) += wd * (twoB * (hxx[i] * hxx[j] + 2.0 * hxy[i] * hxy[j] + hyy[i] * hyy[j]) +
                                    dbulk * val[i] * val[j]);
            }
        }
        ls.energy += w * (p.B * (s.dxx * s.dxx + 2.0L * s.dxy * s.dxy + s.dyy * s.dyy) +
                          0.5L * p.a1 * s.v * s.v + p.a2 * s.v * s.v * s.v / 3.0L +
                          0.25L * p.a3 * s.v * s.v * s.v * s.v);
    }
}

/// Cell terms of the Q-tensor equation in component form: elastic part
/// 2K grad(Qc) . grad(Pc) per component plus the bulk
/// (16 l (Q11^2+Q12^2) - 4 l) Qc Pc, with the exact linearisation including
/// the 32 l Q11 Q12 cross coupling. Accumulates the nematic energy density.
inline void cell_kernel_Q(const ModelParams& p, const CellBasisData& qb, const Eigen::VectorXd& q11_local,
                          const Eigen::VectorXd& q12_local, LocalSystem& ls) {
    const int nb = qb.n_basis;
    const int o1 = ls.nu;
    const int o2 = ls.nu + nb;
    const double twoK = 2.0 * p.K;
    for (int q = 0; q < qb.n_points; ++q) {
        const PointStateLd a = eval_point_ld(qb, q11_local, q);
        const PointStateLd b = eval_point_ld(qb, q12_local, q);
        const long double w = qb.wdx[q];
        const std::size_t off = static_cast<std::size_t>(q) * nb;
        const double* val = qb.val.data() + off;
        const double* gx = qb.gx.data() + off;
        const double* gy = qb.gy.data() + off;

        const long double norm2 = a.v * a.v + b.v * b.v;
        const long double bulk = 16.0L * p.l * norm2 - 4.0L * p.l;
        for (int i = 0; i < nb; ++i) {
            ls.r[o1 + i] += w * (twoK * (a.dx * gx[i] + a.dy * gy[i]) + bulk * a.v * val[i]);
            ls.r[o2 + i] += w * (twoK * (b.dx * gx[i] + b.dy * gy[i]) + bulk * b.v * val[i]);
        }

        const double av = static_cast<double>(a.v);
        const double bv = static_cast<double>(b.v);
        const double d11 = 16.0 * p.l * (3.0 * av * av + bv * bv) - 4.0 * p.l;
        const double d22 = 16.0 * p.l * (av * av + 3.0 * bv * bv) - 4.0 * p.l;
        const double d12 = 32.0 * p.l * av * bv;
        const double wd = qb.wdx[q];
        for (int i = 0; i < nb; ++i) {
            for (int j = 0; j < nb; ++j) {
                const double stiff = twoK * (gx[i] * gx[j] + gy[i] * gy[j]);
                const double mass = val[i] * val[j];
                ls.J(o1 + i, o1 + j) += wd * (stiff + d11 * mass);
                ls.J(o2 + i, o2 + j) += wd * (stiff + d22 * mass);
                const double cross = wd * d12 * mass;
                ls.J(o1 + i, o2 + j) += cross;
                ls.J(o2 + j, o1 + i) += cross;
            }
        }
        const long double tau = 2.0L * norm2;
        ls.energy += w * (p.K * (a.dx * a.dx + a.dy * a.dy + b.dx * b.dx + b.dy * b.dy) +
                          p.l * (tau * tau - tau));
    }
}

/// First variation of the coupling energy B |D^2u + q^2 (Q + I/2) u|^2 minus
/// its pure-Hessian part (which cell_kernel_u owns), with all mixed second
/// derivatives. No-op when q = 0.
inline void cell_kernel_coupling(const ModelParams& p, const CellBasisData& ub, const CellBasisData& qb,
                                 const Eigen::VectorXd& u_local, const Eigen::VectorXd& q11_local,
                                 const Eigen::VectorXd& q12_local, LocalSystem& ls) {
    if (p.q == 0.0) return;
    if (ub.n_points != qb.n_points) {
        throw std::invalid_argument("cell_kernel_coupling: tabulations must share quadrature points");
    }
    const int nu = ub.n_basis;
    const int nq = qb.n_basis;
    const int o1 = ls.nu;
    const int o2 = ls.nu + nq;
    const double q2 = p.q * p.q;
    const double q4 = q2 * q2;
    const double B = p.B;

    std::vector<double> m_colon_hess(nu);
    for (int q = 0; q < ub.n_points; ++q) {
        const PointStateLd su = eval_point_ld(ub, u_local, q);
        const PointStateLd sa = eval_point_ld(qb, q11_local, q);
        const PointStateLd sb = eval_point_ld(qb, q12_local, q);
        const long double w = ub.wdx[q];
        const std::size_t uo = static_cast<std::size_t>(q) * nu;
        const double* uval = ub.val.data() + uo;
        const double* uhxx = ub.hxx.data() + uo;
        const double* uhxy = ub.hxy.data() + uo;
        const double* uhyy = ub.hyy.data() + uo;
        const std::size_t qo = static_cast<std::size_t>(q) * nq;
        const double* qval = qb.val.data() + qo;

        const long double m11 = sa.v + 0.5L;
        const long double m22 = 0.5L - sa.v;
        const long double m12 = sb.v;
        const long double norm2 = sa.v * sa.v + sb.v * sb.v;
        const long double t1 = m11 * su.dxx + m22 * su.dyy + 2.0L * m12 * su.dxy;
        const long double mass_coef = B * q4 * (4.0L * norm2 + 1.0L);

        for (int i = 0; i < nu; ++i) {
            const long double m_hess_i = m11 * uhxx[i] + m22 * uhyy[i] + 2.0L * m12 * uhxy[i];
            ls.r[i] += w * (2.0L * B * q2 * (t1 * uval[i] + su.v * m_hess_i) + mass_coef * su.v * uval[i]);
        }
        const long double r11_coef = 4.0L * B * q4 * su.v * su.v * sa.v + 2.0L * B * q2 * su.v * (su.dxx - su.dyy);
        const long double r12_coef = 4.0L * B * q4 * su.v * su.v * sb.v + 4.0L * B * q2 * su.v * su.dxy;
        for (int k = 0; k < nq; ++k) {
            ls.r[o1 + k] += w * r11_coef * qval[k];
            ls.r[o2 + k] += w * r12_coef * qval[k];
        }
        ls.energy += w * (2.0L * B * q2 * su.v * t1 + B * q4 * su.v * su.v * (2.0L * norm2 + 0.5L));

        // Jacobian blocks in plain double.
        const double uv = static_cast<double>(su.v);
        const double uxx = static_cast<double>(su.dxx);
        const double uxy = static_cast<double>(su.dxy);
        const double uyy = static_cast<double>(su.dyy);
        const double av = static_cast<double>(sa.v);
        const double bv = static_cast<double>(sb.v);
        const double wd = ub.wdx[q];
        const double mass_coef_d = B * q4 * (4.0 * (av * av + bv * bv) + 1.0);
        for (int i = 0; i < nu; ++i) {
            m_colon_hess[i] = (av + 0.5) * uhxx[i] + (0.5 - av) * uhyy[i] + 2.0 * bv * uhxy[i];
        }
        for (int i = 0; i < nu; ++i) {
            for (int j = 0; j < nu; ++j) {
                ls.J(i, j) += wd * (2.0 * B * q2 * (uval[j] * m_colon_hess[i] + uval[i] * m_colon_hess[j]) +
                                    mass_coef_d * uval[i] * uval[j]);
            }
        }
        const double hess_diff = uxx - uyy;
        for (int i = 0; i < nu; ++i) {
            for (int k = 0; k < nq; ++k) {
                const double du_q11 = wd * (2.0 * B * q2 * (hess_diff * uval[i] + uv * (uhxx[i] - uhyy[i])) +
                                            8.0 * B * q4 * av * uv * uval[i]) *
                                      qval[k];
                ls.J(i, o1 + k) += du_q11;
                ls.J(o1 + k, i) += du_q11;
                const double du_q12 = wd * (4.0 * B * q2 * (uxy * uval[i] + uv * uhxy[i]) +
                                            8.0 * B * q4 * bv * uv * uval[i]) *
                                      qval[k];
                ls.J(i, o2 + k) += du_q12;
                ls.J(o2 + k, i) += du_q12;
            }
        }
        const double qq = wd * 4.0 * B * q4 * uv * uv;
        for (int k = 0; k < nq; ++k) {
            for (int m = 0; m < nq; ++m) {
                const double entry = qq * qval[k] * qval[m];
                ls.J(o1 + k, o1 + m) += entry;
                ls.J(o2 + k, o2 + m) += entry;
            }
        }
    }
}

/// Traces of the cell basis on one side of an interior facet: the signed
/// normal derivative entering the gradient jump and the second normal
/// derivative entering the average.
struct FacetSideTraces {
    int n_basis = 0;
    int n_points = 0;
    std::vector<double> jump;    ///< contribution of this side to [[grad v]]
    std::vector<double> average; ///< nu^T D^2 v nu on this side (unsigned)
};

inline FacetSideTraces facet_side_traces(int degree, const QuadratureRule1D& rule, double h, bool vertical,
                                         bool minus_side) {
    const PullbackScalings scale = pullback_scalings(h);
    std::vector<std::array<double, 2>> pts(rule.points.size());
    for (std::size_t k = 0; k < rule.points.size(); ++k) {
        const double t = rule.points[k];
        if (vertical) {
            pts[k] = minus_side ? std::array<double, 2>{1.0, t} : std::array<double, 2>{0.0, t};
        } else {
            pts[k] = minus_side ? std::array<double, 2>{t, 1.0} : std::array<double, 2>{t, 0.0};
        }
    }
    const BasisTabulation tab = tabulate(degree, pts);
    FacetSideTraces tr;
    tr.n_basis = tab.n_basis;
    tr.n_points = static_cast<int>(pts.size());
    tr.jump.resize(tab.values.size());
    tr.average.resize(tab.values.size());
    const double sign = minus_side ? 1.0 : -1.0;
    for (std::size_t k = 0; k < tab.values.size(); ++k) {
        if (vertical) {
            tr.jump[k] = sign * scale.grad * tab.grad_x[k];
            tr.average[k] = scale.hess * tab.hess_xx[k];
        } else {
            tr.jump[k] = sign * scale.grad * tab.grad_y[k];
            tr.average[k] = scale.hess * tab.hess_yy[k];
        }
    }
    return tr;
}

/// Local facet matrix over the stacked minus/plus cell DOFs. Always carries
/// the gradient-jump penalty with scaling 2 B epsilon / h_e^3; the consistent
/// variant adds the two symmetrised average-times-jump terms with factor -2B.
/// Identical for every interior facet of the same orientation.
inline Eigen::MatrixXd facet_matrix_u(const ModelParams& p, int degree, double h, bool vertical) {
    const QuadratureRule1D rule = facet_rule(degree);
    const FacetSideTraces minus = facet_side_traces(degree, rule, h, vertical, true);
    const FacetSideTraces plus = facet_side_traces(degree, rule, h, vertical, false);
    const int nb = minus.n_basis;
    const int n = 2 * nb;

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    const double penalty = 2.0 * p.B * p.epsilon / (h * h * h);
    const bool consistent = (p.form_variant == FormVariant::consistent);
    std::vector<double> j(n), a(n);
    for (int k = 0; k < minus.n_points; ++k) {
        const double wds = rule.weights[k] * h;
        for (int i = 0; i < nb; ++i) {
            j[i] = minus.jump[static_cast<std::size_t>(k) * nb + i];
            j[nb + i] = plus.jump[static_cast<std::size_t>(k) * nb + i];
            a[i] = 0.5 * minus.average[static_cast<std::size_t>(k) * nb + i];
            a[nb + i] = 0.5 * plus.average[static_cast<std::size_t>(k) * nb + i];
        }
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) {
                double entry = penalty * j[r] * j[c];
                if (consistent) {
                    entry -= 2.0 * p.B * (a[c] * j[r] + a[r] * j[c]);
                }
                M(r, c) += wds * entry;
            }
        }
    }
    return M;
}

/// Natural-condition boundary load: 2B integral over the domain boundary of
/// (D^2 u_b grad t) . nu for every basis function t.
inline Eigen::VectorXd boundary_load_u(const Mesh& mesh, const DofMap& u_map, const ModelParams& p,
                                       const std::function<Eigen::Matrix2d(double, double)>& hess_ub) {
    Eigen::VectorXd load = Eigen::VectorXd::Zero(u_map.n_global);
    const QuadratureRule1D rule = facet_rule(u_map.degree);
    const PullbackScalings scale = pullback_scalings(mesh.h);

    // Side tabulations keyed by the outward normal of the boundary facet.
    auto side_points = [&rule](const std::array<double, 2>& normal) {
        std::vector<std::array<double, 2>> pts(rule.points.size());
        for (std::size_t k = 0; k < rule.points.size(); ++k) {
            const double t = rule.points[k];
            if (normal[0] < 0) pts[k] = {0.0, t};
            else if (normal[0] > 0) pts[k] = {1.0, t};
            else if (normal[1] < 0) pts[k] = {t, 0.0};
            else pts[k] = {t, 1.0};
        }
        return pts;
    };

    for (const FacetInfo& f : mesh.boundary_facets) {
        const BasisTabulation tab = tabulate(u_map.degree, side_points(f.normal));
        const Eigen::Vector2d nu(f.normal[0], f.normal[1]);
        const std::span<const int> globals = u_map.cell_globals(f.cell_minus);
        for (std::size_t k = 0; k < rule.points.size(); ++k) {
            const std::array<double, 2> x = f.point_at(rule.points[k]);
            const Eigen::Matrix2d H = hess_ub(x[0], x[1]);
            const double wds = rule.weights[k] * f.h_e;
            for (int i = 0; i < tab.n_basis; ++i) {
                const Eigen::Vector2d grad = scale.grad * tab.gradient(static_cast<int>(k), i);
                load[globals[i]] += 2.0 * p.B * wds * nu.dot(H * grad);
            }
        }
    }
    return load;
}

/// Reduced residual and Jacobian over the free (non-Dirichlet) DOFs plus the
/// discrete energy of the state.
struct AssembledSystem {
    Eigen::VectorXd residual;
    SparseMatrix jacobian;
    double energy = 0.0;
};

/// Assembles residual, Jacobian and energy for one problem kind on one mesh.
/// Dirichlet conditions are handled by elimination: boundary DOFs keep the
/// values stored in the state and the returned system ranges over free DOFs
/// only. Cells and facets are visited in a fixed order, so assembly is
/// bitwise reproducible.
class Assembler {
public:
    using SourceEval = std::function<std::array<double, 3>(double, double)>;
    using BoundaryHessian = std::function<Eigen::Matrix2d(double, double)>;

    Assembler(const Mesh& mesh, ProblemKind kind, const ModelParams& params, const DofMap* u_map,
              const DofMap* q_map, SourceEval sources = {}, BoundaryHessian boundary_hessian = {})
        : mesh_(&mesh),
          kind_(kind),
          params_(params),
          u_map_(u_map),
          q_map_(q_map),
          sources_(std::move(sources)),
          boundary_hessian_(std::move(boundary_hessian)) {
        params_.validate();
        if (has_u() && u_map_ == nullptr) throw std::invalid_argument("Assembler: u dof map required");
        if (has_q() && q_map_ == nullptr) throw std::invalid_argument("Assembler: Q dof map required");
        if (has_u() && u_map_->degree < 2) {
            throw std::invalid_argument("Assembler: the fourth-order density equation needs degree >= 2");
        }

        int rule_degree = 1;
        if (has_u()) rule_degree = std::max(rule_degree, u_map_->degree);
        if (has_q()) rule_degree = std::max(rule_degree, q_map_->degree);
        const QuadratureRule2D rule = cell_rule(rule_degree, CellRuleKind::residual);
        if (has_u()) ub_ = CellBasisData::build(u_map_->degree, rule, mesh.h);
        if (has_q()) qb_ = CellBasisData::build(q_map_->degree, rule, mesh.h);

        if (has_u()) {
            facet_matrix_vertical_ = facet_matrix_u(params_, u_map_->degree, mesh.h, true);
            facet_matrix_horizontal_ = facet_matrix_u(params_, u_map_->degree, mesh.h, false);
            if (boundary_hessian_) {
                boundary_load_ = boundary_load_u(mesh, *u_map_, params_, boundary_hessian_);
            }
        }

        if (has_u()) nfu_ = build_free_map(*u_map_, u_free_);
        if (has_q()) nfq_ = build_free_map(*q_map_, q_free_);
    }

    bool has_u() const { return kind_ != ProblemKind::p2_qtensor; }
    bool has_q() const { return kind_ != ProblemKind::p1_density; }
    int n_free() const { return nfu_ + 2 * nfq_; }
    const Mesh& mesh() const { return *mesh_; }
    const ModelParams& params() const { return params_; }
    ProblemKind kind() const { return kind_; }
    const DofMap* u_map() const { return u_map_; }
    const DofMap* q_map() const { return q_map_; }

    /// Local contributions of one interior facet: the bilinear facet matrix
    /// over the stacked [minus; plus] cell DOFs and its action on the current
    /// density coefficients. Penalty sums run over interior facets only.
    void facet_kernel_u(const FacetInfo& facet, const Eigen::VectorXd& u_coeffs, Eigen::MatrixXd& M,
                        Eigen::VectorXd& r) const {
        if (facet.is_boundary()) {
            throw std::invalid_argument("facet_kernel_u: facet " + std::to_string(facet.facet_id) +
                                        " is a boundary facet");
        }
        const bool vertical = facet.normal[0] != 0.0;
        M = vertical ? facet_matrix_vertical_ : facet_matrix_horizontal_;
        const int nb = u_map_->dofs_per_cell;
        Eigen::VectorXd locals(2 * nb);
        const std::span<const int> gm = u_map_->cell_globals(facet.cell_minus);
        const std::span<const int> gp = u_map_->cell_globals(facet.cell_plus);
        for (int i = 0; i < nb; ++i) {
            locals[i] = u_coeffs[gm[i]];
            locals[nb + i] = u_coeffs[gp[i]];
        }
        r = M * locals;
    }

    AssembledSystem assemble(const SystemState& state) const {
        check_shapes(state);

        AssembledSystem out;
        VectorLd residual = VectorLd::Zero(n_free());
        long double energy = 0.0;

        std::vector<Triplet> triplets;
        triplets.reserve(estimate_nnz());

        const int nu = has_u() ? u_map_->dofs_per_cell : 0;
        const int nq = has_q() ? q_map_->dofs_per_cell : 0;
        LocalSystem ls;
        Eigen::VectorXd u_local(nu), q11_local(nq), q12_local(nq);

        for (const Cell& cell : mesh_->cells) {
            ls.reset(nu, nq);
            if (has_u()) {
                gather(*u_map_, state.u, cell.index, u_local);
                cell_kernel_u(params_, ub_, u_local, ls);
            }
            if (has_q()) {
                gather(*q_map_, state.q11, cell.index, q11_local);
                gather(*q_map_, state.q12, cell.index, q12_local);
                cell_kernel_Q(params_, qb_, q11_local, q12_local, ls);
            }
            if (kind_ == ProblemKind::coupled) {
                cell_kernel_coupling(params_, ub_, qb_, u_local, q11_local, q12_local, ls);
            }
            if (sources_) {
                apply_sources(cell, u_local, q11_local, q12_local, ls);
            }
            energy += ls.energy;
            scatter(cell.index, ls, residual, triplets);
        }

        if (has_u()) {
            const int nbu = u_map_->dofs_per_cell;
            Eigen::VectorXd locals(2 * nbu);
            VectorLd r_facet(2 * nbu);
            for (const FacetInfo& facet : mesh_->interior_facets) {
                const bool vertical = facet.normal[0] != 0.0;
                const Eigen::MatrixXd& M = vertical ? facet_matrix_vertical_ : facet_matrix_horizontal_;
                const std::span<const int> gm = u_map_->cell_globals(facet.cell_minus);
                const std::span<const int> gp = u_map_->cell_globals(facet.cell_plus);
                for (int i = 0; i < nbu; ++i) {
                    locals[i] = state.u[gm[i]];
                    locals[nbu + i] = state.u[gp[i]];
                }
                for (int i = 0; i < 2 * nbu; ++i) {
                    long double acc = 0.0;
                    for (int j = 0; j < 2 * nbu; ++j) {
                        acc += static_cast<long double>(M(i, j)) * static_cast<long double>(locals[j]);
                    }
                    r_facet[i] = acc;
                    energy += 0.5L * static_cast<long double>(locals[i]) * acc;
                }

                auto free_of = [&](int k) {
                    const int g = k < nbu ? gm[k] : gp[k - nbu];
                    return u_free_[g];
                };
                for (int i = 0; i < 2 * nbu; ++i) {
                    const int fi = free_of(i);
                    if (fi < 0) continue;
                    residual[fi] += r_facet[i];
                    for (int j = 0; j < 2 * nbu; ++j) {
                        const int fj = free_of(j);
                        if (fj < 0) continue;
                        triplets.push_back({fi, fj, M(i, j)});
                    }
                }
            }

            if (boundary_load_.size() > 0) {
                long double load_energy = 0.0;
                for (int g = 0; g < u_map_->n_global; ++g) {
                    const int f = u_free_[g];
                    if (f >= 0) residual[f] -= static_cast<long double>(boundary_load_[g]);
                    load_energy += static_cast<long double>(boundary_load_[g]) * state.u[g];
                }
                energy -= load_energy;
            }
        }

        out.residual = residual.cast<double>();
        out.jacobian = SparseMatrix::from_triplets(n_free(), std::move(triplets));
        out.energy = static_cast<double>(energy);
        if (!out.residual.allFinite() || !std::isfinite(out.energy)) {
            throw std::runtime_error("Assembler::assemble: non-finite kernel output (bad state)");
        }
        return out;
    }

    /// Adds a free-DOF update (Newton step) onto the state, leaving Dirichlet
    /// DOFs untouched.
    void apply_update(SystemState& state, const Eigen::VectorXd& delta) const {
        if (delta.size() != n_free()) {
            throw std::invalid_argument("apply_update: step size does not match free DOF count");
        }
        if (has_u()) {
            for (int g = 0; g < u_map_->n_global; ++g) {
                if (u_free_[g] >= 0) state.u[g] += delta[u_free_[g]];
            }
        }
        if (has_q()) {
            for (int g = 0; g < q_map_->n_global; ++g) {
                if (q_free_[g] >= 0) {
                    state.q11[g] += delta[nfu_ + q_free_[g]];
                    state.q12[g] += delta[nfu_ + nfq_ + q_free_[g]];
                }
            }
        }
    }

private:
    static int build_free_map(const DofMap& map, std::vector<int>& full_to_free) {
        full_to_free.assign(map.n_global, -1);
        int next = 0;
        for (int g = 0; g < map.n_global; ++g) {
            if (!map.on_boundary[g]) full_to_free[g] = next++;
        }
        return next;
    }

    void check_shapes(const SystemState& state) const {
        if (has_u() && state.u.size() != u_map_->n_global) {
            throw std::invalid_argument("assemble: u coefficient vector has wrong size");
        }
        if (has_q() && (state.q11.size() != q_map_->n_global || state.q12.size() != q_map_->n_global)) {
            throw std::invalid_argument("assemble: Q coefficient vectors have wrong size");
        }
    }

    static void gather(const DofMap& map, const Eigen::VectorXd& coeffs, int cell, Eigen::VectorXd& local) {
        const std::span<const int> globals = map.cell_globals(cell);
        for (int i = 0; i < map.dofs_per_cell; ++i) local[i] = coeffs[globals[i]];
    }

    std::size_t estimate_nnz() const {
        const std::size_t n_cells = mesh_->cells.size();
        const std::size_t per_cell = static_cast<std::size_t>(ls_size()) * ls_size();
        std::size_t nnz = n_cells * per_cell;
        if (has_u()) {
            const std::size_t per_facet = 4u * u_map_->dofs_per_cell * u_map_->dofs_per_cell;
            nnz += mesh_->interior_facets.size() * per_facet;
        }
        return nnz;
    }

    int ls_size() const {
        return (has_u() ? u_map_->dofs_per_cell : 0) + (has_q() ? 2 * q_map_->dofs_per_cell : 0);
    }

    void apply_sources(const Cell& cell, const Eigen::VectorXd& u_local, const Eigen::VectorXd& q11_local,
                       const Eigen::VectorXd& q12_local, LocalSystem& ls) const {
        const CellBasisData& base = has_u() ? ub_ : qb_;
        for (int q = 0; q < base.n_points; ++q) {
            const double x = cell.origin[0] + mesh_->h * base.ref_points[q][0];
            const double y = cell.origin[1] + mesh_->h * base.ref_points[q][1];
            const std::array<double, 3> s = sources_(x, y);
            const long double w = base.wdx[q];
            if (has_u()) {
                const std::size_t off = static_cast<std::size_t>(q) * ub_.n_basis;
                long double u_val = 0.0;
                for (int i = 0; i < ub_.n_basis; ++i) {
                    ls.r[i] -= w * s[2] * ub_.val[off + i];
                    u_val += static_cast<long double>(u_local[i]) * ub_.val[off + i];
                }
                ls.energy -= w * s[2] * u_val;
            }
            if (has_q()) {
                const std::size_t off = static_cast<std::size_t>(q) * qb_.n_basis;
                long double v11 = 0.0, v12 = 0.0;
                for (int i = 0; i < qb_.n_basis; ++i) {
                    ls.r[ls.nu + i] -= w * s[0] * qb_.val[off + i];
                    ls.r[ls.nu + qb_.n_basis + i] -= w * s[1] * qb_.val[off + i];
                    v11 += static_cast<long double>(q11_local[i]) * qb_.val[off + i];
                    v12 += static_cast<long double>(q12_local[i]) * qb_.val[off + i];
                }
                ls.energy -= w * (s[0] * v11 + s[1] * v12);
            }
        }
    }

    void scatter(int cell, const LocalSystem& ls, VectorLd& residual, std::vector<Triplet>& triplets) const {
        const int n = ls.nu + 2 * ls.nq;
        // Map local index -> free index (or -1).
        std::array<int, 128> stack_map; // enough for deg 4 u + deg 4 Q pair
        int* free_idx = stack_map.data();
        std::vector<int> heap_map;
        if (n > static_cast<int>(stack_map.size())) {
            heap_map.resize(n);
            free_idx = heap_map.data();
        }
        if (has_u()) {
            const std::span<const int> g = u_map_->cell_globals(cell);
            for (int i = 0; i < ls.nu; ++i) free_idx[i] = u_free_[g[i]];
        }
        if (has_q()) {
            const std::span<const int> g = q_map_->cell_globals(cell);
            for (int i = 0; i < ls.nq; ++i) {
                const int f = q_free_[g[i]];
                free_idx[ls.nu + i] = f < 0 ? -1 : nfu_ + f;
                free_idx[ls.nu + ls.nq + i] = f < 0 ? -1 : nfu_ + nfq_ + f;
            }
        }
        for (int i = 0; i < n; ++i) {
            const int fi = free_idx[i];
            if (fi < 0) continue;
            residual[fi] += ls.r[i];
            for (int j = 0; j < n; ++j) {
                const int fj = free_idx[j];
                if (fj < 0) continue;
                triplets.push_back({fi, fj, ls.J(i, j)});
            }
        }
    }

    const Mesh* mesh_;
    ProblemKind kind_;
    ModelParams params_;
    const DofMap* u_map_;
    const DofMap* q_map_;
    SourceEval sources_;
    BoundaryHessian boundary_hessian_;

    CellBasisData ub_, qb_;
    Eigen::MatrixXd facet_matrix_vertical_, facet_matrix_horizontal_;
    Eigen::VectorXd boundary_load_;
    std::vector<int> u_free_, q_free_;
    int nfu_ = 0;
    int nfq_ = 0;
};

} // namespace smectic
