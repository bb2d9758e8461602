#pragma once

#include <stdexcept>

namespace smectic {

/// Discrete weak-form variant for the fourth-order density equation: the
/// consistent form carries the symmetrised average-times-jump facet terms,
/// the inconsistent one keeps only the over-penalised jump term.
enum class FormVariant { consistent, inconsistent };

/// Which nonlinear system to assemble and solve.
enum class ProblemKind {
    p1_density, ///< fourth-order equation for the density variation u alone
    p2_qtensor, ///< second-order equation for (Q11, Q12) alone
    coupled     ///< full system with wave number q > 0
};

/// Physical and numerical constants of the model.
struct ModelParams {
    double a1 = -10.0; ///< smectic bulk, quadratic well
    double a2 = 0.0;   ///< smectic bulk, cubic term
    double a3 = 10.0;  ///< smectic bulk, quartic term (> 0)
    double B = 1e-5;   ///< nematic-smectic coupling (> 0)
    double K = 0.3;    ///< nematic elastic constant (> 0)
    double l = 30.0;   ///< nematic bulk constant (> 0)
    double q = 0.0;    ///< wave number (>= 0)
    double epsilon = 1.0; ///< interior penalty parameter (> 0)
    FormVariant form_variant = FormVariant::consistent;

    void validate() const {
        if (!(a3 > 0.0)) throw std::invalid_argument("ModelParams: a3 must be > 0");
        if (!(B > 0.0)) throw std::invalid_argument("ModelParams: B must be > 0");
        if (!(K > 0.0)) throw std::invalid_argument("ModelParams: K must be > 0");
        if (!(l > 0.0)) throw std::invalid_argument("ModelParams: l must be > 0");
        if (!(q >= 0.0)) throw std::invalid_argument("ModelParams: q must be >= 0");
        if (!(epsilon > 0.0)) throw std::invalid_argument("ModelParams: epsilon must be > 0");
    }
};

} // namespace smectic
