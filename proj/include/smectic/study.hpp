#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "smectic/mesh.hpp"
#include "smectic/mms.hpp"
#include "smectic/model.hpp"
#include "smectic/newton.hpp"
#include "smectic/norms.hpp"
#include "smectic/space.hpp"

namespace smectic {

enum class CaseKind { decoupled_u, decoupled_q, coupled };
enum class TableFormat { csv, markdown };

inline const char* case_name(CaseKind c) {
    switch (c) {
        case CaseKind::decoupled_u: return "decoupled_u";
        case CaseKind::decoupled_q: return "decoupled_q";
        case CaseKind::coupled: return "coupled";
    }
    return "?";
}

inline ProblemKind problem_kind(CaseKind c) {
    switch (c) {
        case CaseKind::decoupled_u: return ProblemKind::p1_density;
        case CaseKind::decoupled_q: return ProblemKind::p2_qtensor;
        default: return ProblemKind::coupled;
    }
}

struct StudyConfig {
    CaseKind case_kind = CaseKind::coupled;
    int deg_u = 3;
    int deg_q = 2;
    std::vector<int> n_list{6, 12, 24, 48};
    ModelParams params;
    NewtonOptions newton;
    std::string output_path; ///< empty: no files written
    TableFormat format = TableFormat::csv;
    bool parallel_levels = false;

    bool solves_u() const { return case_kind != CaseKind::decoupled_q; }
    bool solves_q() const { return case_kind != CaseKind::decoupled_u; }

    /// Parameters actually used by the solves: the decoupled problems are the
    /// q = 0 limits, so q is forced to zero there.
    ModelParams effective_params() const {
        ModelParams p = params;
        if (case_kind != CaseKind::coupled) p.q = 0.0;
        return p;
    }
};

inline void validate(const StudyConfig& config) {
    if (config.n_list.empty()) throw std::invalid_argument("config: n_list must not be empty");
    for (std::size_t i = 0; i < config.n_list.size(); ++i) {
        if (config.n_list[i] < 1) throw std::invalid_argument("config: mesh resolutions must be >= 1");
        if (i > 0 && config.n_list[i] != 2 * config.n_list[i - 1]) {
            throw std::invalid_argument("config: n_list entries must double (orders compare halved meshes)");
        }
    }
    if (config.solves_u() && config.deg_u < 2) {
        throw std::invalid_argument("config: deg_u must be >= 2 for the fourth-order density equation");
    }
    if (config.solves_q() && config.deg_q < 1) {
        throw std::invalid_argument("config: deg_q must be >= 1");
    }
    config.effective_params().validate();
    if (!(config.newton.tol_abs > 0.0) || !(config.newton.tol_rel > 0.0) || config.newton.max_iter < 1) {
        throw std::invalid_argument("config: Newton tolerances must be positive and max_iter >= 1");
    }
}

struct StudyOutcome {
    ErrorReport report;
    bool all_converged = true;
    int first_failed_n = -1;
};

namespace detail {

struct LevelResult {
    LevelRecord record;
    bool converged = false;
};

inline LevelResult run_level(const StudyConfig& config, int n) {
    const ModelParams params = config.effective_params();
    const ProblemKind kind = problem_kind(config.case_kind);
    const ManufacturedCase mms = manufactured_case(kind);

    const Mesh mesh = unit_square_mesh(n);
    DofMap u_map, q_map;
    if (config.solves_u()) u_map = build_dofmap(mesh, config.deg_u);
    if (config.solves_q()) q_map = build_dofmap(mesh, config.deg_q);

    Assembler::SourceEval sources = [&mms, params](double x, double y) {
        return mms.sources(x, y, params);
    };
    Assembler::BoundaryHessian boundary_hessian;
    if (config.solves_u()) {
        boundary_hessian = [&mms](double x, double y) { return mms.u.hessian(x, y); };
    }

    const Assembler assembler(mesh, kind, params, config.solves_u() ? &u_map : nullptr,
                              config.solves_q() ? &q_map : nullptr, sources, boundary_hessian);

    SystemState state = initial_guess(config.solves_u() ? &u_map : nullptr,
                                      config.solves_q() ? &q_map : nullptr, kind);
    auto [solution, newton_report] = newton_solve(assembler, std::move(state), config.newton);

    LevelResult result;
    result.converged = newton_report.converged;
    LevelRecord& rec = result.record;
    rec.n_per_side = n;
    rec.newton_iters = newton_report.iterations;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.eu_l2 = rec.eu_h1 = rec.eu_triple = nan;
    rec.eq_l2 = rec.eq_h1 = nan;
    if (!result.converged) return result;

    if (config.solves_u()) {
        const auto [l2, h1] = error_l2_h1(mesh, u_map, solution.u, mms.u);
        rec.eu_l2 = l2;
        rec.eu_h1 = h1;
        rec.eu_triple = error_triple_norm(mesh, u_map, solution.u, mms.u);
    }
    if (config.solves_q()) {
        const auto [l2_11, h1_11] = error_l2_h1(mesh, q_map, solution.q11, mms.q11);
        const auto [l2_12, h1_12] = error_l2_h1(mesh, q_map, solution.q12, mms.q12);
        rec.eq_l2 = std::sqrt(l2_11 * l2_11 + l2_12 * l2_12);
        rec.eq_h1 = std::sqrt(h1_11 * h1_11 + h1_12 * h1_12);
    }
    return result;
}

} // namespace detail

/// Runs the refinement sweep: per level build mesh and spaces, interpolate
/// the initial guess, Newton-solve and compute all error norms, then fill in
/// the convergence orders. Newton failure truncates the report at the failed
/// level.
inline StudyOutcome run_study(const StudyConfig& config) {
    validate(config);

    StudyOutcome outcome;
    ErrorReport& report = outcome.report;
    report.case_name = case_name(config.case_kind);
    report.deg_u = config.solves_u() ? config.deg_u : 0;
    report.deg_q = config.solves_q() ? config.deg_q : 0;

    std::vector<detail::LevelResult> results;
    if (config.parallel_levels) {
        std::vector<std::future<detail::LevelResult>> futures;
        futures.reserve(config.n_list.size());
        for (const int n : config.n_list) {
            futures.push_back(std::async(std::launch::async,
                                         [&config, n] { return detail::run_level(config, n); }));
        }
        for (auto& f : futures) results.push_back(f.get());
    } else {
        for (const int n : config.n_list) {
            results.push_back(detail::run_level(config, n));
            if (!results.back().converged) break;
        }
    }

    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!results[i].converged) {
            outcome.all_converged = false;
            outcome.first_failed_n = config.n_list[i];
            break;
        }
        report.levels.push_back(results[i].record);
    }

    auto rates_of = [&report](double LevelRecord::*field) {
        std::vector<double> errors;
        for (const LevelRecord& r : report.levels) errors.push_back(r.*field);
        return convergence_orders(errors);
    };
    if (report.levels.size() > 1) {
        report.rates.resize(report.levels.size() - 1);
        if (config.solves_u()) {
            const auto l2 = rates_of(&LevelRecord::eu_l2);
            const auto h1 = rates_of(&LevelRecord::eu_h1);
            const auto tr = rates_of(&LevelRecord::eu_triple);
            for (std::size_t i = 0; i < report.rates.size(); ++i) {
                report.rates[i].eu_l2 = l2[i];
                report.rates[i].eu_h1 = h1[i];
                report.rates[i].eu_triple = tr[i];
            }
        } else {
            for (RateRecord& r : report.rates) {
                r.eu_l2 = r.eu_h1 = r.eu_triple = std::numeric_limits<double>::quiet_NaN();
            }
        }
        if (config.solves_q()) {
            const auto l2 = rates_of(&LevelRecord::eq_l2);
            const auto h1 = rates_of(&LevelRecord::eq_h1);
            for (std::size_t i = 0; i < report.rates.size(); ++i) {
                report.rates[i].eq_l2 = l2[i];
                report.rates[i].eq_h1 = h1[i];
            }
        } else {
            for (RateRecord& r : report.rates) {
                r.eq_l2 = r.eq_h1 = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    return outcome;
}

namespace detail {

inline std::string format_double(double v, const char* fmt) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

/// One table row as strings, in the fixed column order.
inline std::vector<std::string> row_strings(const ErrorReport& report, std::size_t level,
                                            const char* err_fmt, const char* rate_fmt) {
    const LevelRecord& rec = report.levels[level];
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const RateRecord rate = level > 0 ? report.rates[level - 1]
                                      : RateRecord{nan, nan, nan, nan, nan};
    std::vector<std::string> cells;
    cells.push_back(report.case_name);
    cells.push_back(report.deg_u > 0 ? std::to_string(report.deg_u) : "");
    cells.push_back(report.deg_q > 0 ? std::to_string(report.deg_q) : "");
    cells.push_back(std::to_string(rec.n_per_side));
    cells.push_back(format_double(rec.eq_l2, err_fmt));
    cells.push_back(format_double(rate.eq_l2, rate_fmt));
    cells.push_back(format_double(rec.eq_h1, err_fmt));
    cells.push_back(format_double(rate.eq_h1, rate_fmt));
    cells.push_back(format_double(rec.eu_l2, err_fmt));
    cells.push_back(format_double(rate.eu_l2, rate_fmt));
    cells.push_back(format_double(rec.eu_h1, err_fmt));
    cells.push_back(format_double(rate.eu_h1, rate_fmt));
    cells.push_back(format_double(rec.eu_triple, err_fmt));
    cells.push_back(format_double(rate.eu_triple, rate_fmt));
    cells.push_back(std::to_string(rec.newton_iters));
    return cells;
}

inline const std::vector<std::string>& column_names() {
    static const std::vector<std::string> names{
        "case",  "deg_u",      "deg_q", "N",          "eq_l2",     "eq_l2_rate",
        "eq_h1", "eq_h1_rate", "eu_l2", "eu_l2_rate", "eu_h1",     "eu_h1_rate",
        "eu_triple", "eu_triple_rate", "newton_iters"};
    return names;
}

} // namespace detail

/// Renders the report as a text table. Errors carry 3 significant digits and
/// rates 2 decimals; rate cells are blank on the first level. `full_precision`
/// switches to round-trip-exact doubles for the sidecar file.
inline std::string emit_table(const ErrorReport& report, TableFormat format, bool full_precision = false) {
    const char* err_fmt = full_precision ? "%.17g" : "%.2e";
    const char* rate_fmt = full_precision ? "%.17g" : "%.2f";
    std::ostringstream out;
    const auto& names = detail::column_names();
    if (format == TableFormat::csv) {
        for (std::size_t c = 0; c < names.size(); ++c) {
            out << names[c] << (c + 1 < names.size() ? "," : "\n");
        }
        for (std::size_t level = 0; level < report.levels.size(); ++level) {
            const auto cells = detail::row_strings(report, level, err_fmt, rate_fmt);
            for (std::size_t c = 0; c < cells.size(); ++c) {
                out << cells[c] << (c + 1 < cells.size() ? "," : "\n");
            }
        }
    } else {
        out << "|";
        for (const auto& n : names) out << " " << n << " |";
        out << "\n|";
        for (std::size_t c = 0; c < names.size(); ++c) out << " --- |";
        out << "\n";
        for (std::size_t level = 0; level < report.levels.size(); ++level) {
            const auto cells = detail::row_strings(report, level, err_fmt, rate_fmt);
            out << "|";
            for (const auto& cell : cells) out << " " << cell << " |";
            out << "\n";
        }
    }
    return out.str();
}

/// Writes the formatted table to `config.output_path` and a full-precision
/// CSV sidecar next to it. Returns the sidecar path.
inline std::string write_table_files(const ErrorReport& report, const StudyConfig& config) {
    const std::string sidecar = config.output_path + ".full.csv";
    {
        std::ofstream out(config.output_path);
        if (!out) throw std::runtime_error("cannot open output file: " + config.output_path);
        out << emit_table(report, config.format, false);
        if (!out) throw std::runtime_error("write failed: " + config.output_path);
    }
    {
        std::ofstream out(sidecar);
        if (!out) throw std::runtime_error("cannot open output file: " + sidecar);
        out << emit_table(report, TableFormat::csv, true);
        if (!out) throw std::runtime_error("write failed: " + sidecar);
    }
    return sidecar;
}

/// Parses a full-precision CSV produced by write_table_files back into an
/// ErrorReport (exact round trip of every stored double).
inline ErrorReport parse_full_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open table file: " + path);

    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        return cells;
    };
    auto to_double = [](const std::string& s) {
        return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty table file: " + path);

    ErrorReport report;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != detail::column_names().size()) {
            throw std::runtime_error("malformed table row in " + path);
        }
        if (first) {
            report.case_name = cells[0];
            report.deg_u = cells[1].empty() ? 0 : std::stoi(cells[1]);
            report.deg_q = cells[2].empty() ? 0 : std::stoi(cells[2]);
            first = false;
        }
        LevelRecord rec;
        rec.n_per_side = std::stoi(cells[3]);
        rec.eq_l2 = to_double(cells[4]);
        rec.eq_h1 = to_double(cells[6]);
        rec.eu_l2 = to_double(cells[8]);
        rec.eu_h1 = to_double(cells[10]);
        rec.eu_triple = to_double(cells[12]);
        rec.newton_iters = std::stoi(cells[14]);
        report.levels.push_back(rec);
        if (report.levels.size() > 1) {
            RateRecord rate;
            rate.eq_l2 = to_double(cells[5]);
            rate.eq_h1 = to_double(cells[7]);
            rate.eu_l2 = to_double(cells[9]);
            rate.eu_h1 = to_double(cells[11]);
            rate.eu_triple = to_double(cells[13]);
            report.rates.push_back(rate);
        }
    }
    return report;
}

} // namespace smectic
