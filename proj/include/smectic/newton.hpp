#pragma once

#include <limits>
#include <utility>
#include <vector>

#include "smectic/forms.hpp"
#include "smectic/sparse.hpp"

namespace smectic {

struct NewtonOptions {
    double tol_abs = 1e-13;
    double tol_rel = 1e-12;
    int max_iter = 30;
};

struct NewtonReport {
    int iterations = 0;
    std::vector<double> residual_history; ///< length iterations + 1
    bool converged = false;
    double final_energy = 0.0;
};

/// Flags divergence once the residual has grown over five consecutive
/// iterations; a single decreasing step resets the count.
class DivergenceMonitor {
public:
    bool push(double residual) {
        if (residual > last_) {
            ++consecutive_growth_;
        } else {
            consecutive_growth_ = 0;
        }
        last_ = residual;
        return consecutive_growth_ >= 5;
    }

private:
    int consecutive_growth_ = 0;
    double last_ = std::numeric_limits<double>::infinity();
};

/// Full-step Newton iteration on the assembled system. Stops when the
/// free-DOF residual 2-norm drops below max(tol_abs, tol_rel * initial
/// residual), at max_iter, or on detected divergence (reported as
/// non-convergence, not an error). Dirichlet DOFs never change.
inline std::pair<SystemState, NewtonReport> newton_solve(const Assembler& assembler, SystemState state,
                                                         const NewtonOptions& options = {}) {
    if (!(options.tol_abs > 0.0) || !(options.tol_rel > 0.0) || options.max_iter < 1) {
        throw std::invalid_argument("newton_solve: tolerances must be positive and max_iter >= 1");
    }

    NewtonReport report;
    AssembledSystem sys = assembler.assemble(state);
    double res_norm = sys.residual.norm();
    report.residual_history.push_back(res_norm);
    const double tol = std::max(options.tol_abs, options.tol_rel * res_norm);

    if (res_norm <= tol) {
        report.converged = true;
        report.final_energy = sys.energy;
        return {std::move(state), report};
    }

    DivergenceMonitor monitor;
    monitor.push(res_norm);
    for (int k = 1; k <= options.max_iter; ++k) {
        const Eigen::VectorXd step = factor_and_solve(sys.jacobian, -sys.residual);
        assembler.apply_update(state, step);

        sys = assembler.assemble(state);
        res_norm = sys.residual.norm();
        report.residual_history.push_back(res_norm);
        report.iterations = k;

        if (res_norm <= tol) {
            report.converged = true;
            break;
        }
        if (monitor.push(res_norm)) {
            break;
        }
    }
    report.final_energy = sys.energy;
    return {std::move(state), report};
}

} // namespace smectic
