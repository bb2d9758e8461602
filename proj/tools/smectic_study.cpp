// Convergence-study runner: solves the smectic density / Q-tensor systems on
// a sequence of uniform meshes against the built-in manufactured solution and
// emits the error table.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "smectic/study.hpp"

namespace {

constexpr int kExitNewtonFailure = 2;
constexpr int kExitInvalidConfig = 3;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Finite element convergence studies for the smectic-A liquid crystal model"};
    app.set_config("--config", "", "Config file with key=value lines; command-line flags override it");

    std::string case_str;
    app.add_option("--case", case_str, "Study case: decoupled_u | decoupled_q | coupled")
        ->required()
        ->check(CLI::IsMember({"decoupled_u", "decoupled_q", "coupled"}));

    smectic::StudyConfig config;
    app.add_option("--deg-u", config.deg_u, "Polynomial degree for the density field (>= 2)");
    app.add_option("--deg-q", config.deg_q, "Polynomial degree for the Q components (>= 1)");
    app.add_option("--n-list", config.n_list, "Mesh resolutions, each double the previous")
        ->delimiter(',')
        ->capture_default_str();

    double q = -1.0; // negative: pick the case default (30 coupled, 0 decoupled)
    app.add_option("--q", q, "Wave number (coupled case; decoupled cases always run at q=0)");
    app.add_option("--epsilon", config.params.epsilon, "Interior penalty parameter")
        ->capture_default_str();
    std::string form_str = "inconsistent";
    app.add_option("--form", form_str, "Facet form variant for the density equation")
        ->check(CLI::IsMember({"consistent", "inconsistent"}))
        ->capture_default_str();
    app.add_option("--a1", config.params.a1, "Smectic bulk constant a1")->capture_default_str();
    app.add_option("--a2", config.params.a2, "Smectic bulk constant a2")->capture_default_str();
    app.add_option("--a3", config.params.a3, "Smectic bulk constant a3 (> 0)")->capture_default_str();
    app.add_option("--B", config.params.B, "Coupling parameter B (> 0)")->capture_default_str();
    app.add_option("--K", config.params.K, "Nematic elastic constant K (> 0)")->capture_default_str();
    app.add_option("--l", config.params.l, "Nematic bulk constant l (> 0)")->capture_default_str();

    app.add_option("--tol-abs", config.newton.tol_abs, "Newton absolute tolerance")->capture_default_str();
    app.add_option("--tol-rel", config.newton.tol_rel, "Newton relative tolerance")->capture_default_str();
    app.add_option("--max-iter", config.newton.max_iter, "Newton iteration cap")->capture_default_str();

    app.add_option("--out", config.output_path,
                   "Output table path; a full-precision CSV sidecar <out>.full.csv is written next to it");
    std::string format_str = "csv";
    app.add_option("--format", format_str, "Table format")
        ->check(CLI::IsMember({"csv", "markdown"}))
        ->capture_default_str();
    app.add_flag("--parallel-levels", config.parallel_levels,
                 "Run refinement levels concurrently (results are identical to sequential runs)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalidConfig;
    }

    config.case_kind = case_str == "decoupled_u" ? smectic::CaseKind::decoupled_u
                       : case_str == "decoupled_q" ? smectic::CaseKind::decoupled_q
                                                   : smectic::CaseKind::coupled;
    config.format = format_str == "csv" ? smectic::TableFormat::csv : smectic::TableFormat::markdown;
    config.params.form_variant = form_str == "consistent" ? smectic::FormVariant::consistent
                                                          : smectic::FormVariant::inconsistent;
    if (q >= 0.0) {
        config.params.q = q;
        if (config.case_kind != smectic::CaseKind::coupled && q > 0.0) {
            std::cerr << "note: decoupled cases solve the q=0 problems; ignoring --q " << q << "\n";
        }
    } else {
        config.params.q = config.case_kind == smectic::CaseKind::coupled ? 30.0 : 0.0;
    }

    try {
        smectic::validate(config);
    } catch (const std::exception& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
        return kExitInvalidConfig;
    }

    try {
        const smectic::StudyOutcome outcome = smectic::run_study(config);
        std::cout << smectic::emit_table(outcome.report, config.format);
        if (!config.output_path.empty()) {
            const std::string sidecar = smectic::write_table_files(outcome.report, config);
            std::cerr << "wrote " << config.output_path << " and " << sidecar << "\n";
        }
        if (!outcome.all_converged) {
            std::cerr << "Newton did not converge at N=" << outcome.first_failed_n
                      << "; table truncated to the converged levels\n";
            return kExitNewtonFailure;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
