#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/UmfPackSupport>

namespace smectic {

struct Triplet {
    int row = 0;
    int col = 0;
    double value = 0.0;
};

/// Square sparse matrix in compressed row storage. Built from triplets with a
/// stable sort, so duplicate entries are accumulated in insertion order and
/// repeated assembly of the same system is bitwise reproducible.
class SparseMatrix {
public:
    SparseMatrix() = default;

    static SparseMatrix from_triplets(int n, std::vector<Triplet> triplets) {
        if (n < 0) throw std::invalid_argument("SparseMatrix: negative dimension");
        for (const Triplet& t : triplets) {
            if (t.row < 0 || t.row >= n || t.col < 0 || t.col >= n) {
                throw std::invalid_argument("SparseMatrix: triplet index out of range");
            }
        }
        std::stable_sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });

        SparseMatrix m;
        m.n_ = n;
        m.row_offsets_.assign(n + 1, 0);
        m.col_indices_.reserve(triplets.size());
        m.values_.reserve(triplets.size());
        std::size_t i = 0;
        for (int row = 0; row < n; ++row) {
            m.row_offsets_[row] = static_cast<int>(m.col_indices_.size());
            while (i < triplets.size() && triplets[i].row == row) {
                const int col = triplets[i].col;
                double value = triplets[i].value;
                ++i;
                while (i < triplets.size() && triplets[i].row == row && triplets[i].col == col) {
                    value += triplets[i].value;
                    ++i;
                }
                m.col_indices_.push_back(col);
                m.values_.push_back(value);
            }
        }
        m.row_offsets_[n] = static_cast<int>(m.col_indices_.size());
        return m;
    }

    int size() const { return n_; }
    int nnz() const { return static_cast<int>(values_.size()); }
    const std::vector<int>& row_offsets() const { return row_offsets_; }
    const std::vector<int>& col_indices() const { return col_indices_; }
    const std::vector<double>& values() const { return values_; }

    /// Entry (r, c), zero if not stored.
    double coeff(int r, int c) const {
        const auto begin = col_indices_.begin() + row_offsets_[r];
        const auto end = col_indices_.begin() + row_offsets_[r + 1];
        const auto it = std::lower_bound(begin, end, c);
        if (it == end || *it != c) return 0.0;
        return values_[static_cast<std::size_t>(it - col_indices_.begin())];
    }

    bool structurally_symmetric() const {
        for (int r = 0; r < n_; ++r) {
            for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
                const int c = col_indices_[k];
                const auto begin = col_indices_.begin() + row_offsets_[c];
                const auto end = col_indices_.begin() + row_offsets_[c + 1];
                if (!std::binary_search(begin, end, r)) return false;
            }
        }
        return true;
    }

    Eigen::VectorXd multiply(const Eigen::VectorXd& x) const {
        if (x.size() != n_) throw std::invalid_argument("SparseMatrix::multiply: dimension mismatch");
        Eigen::VectorXd y = Eigen::VectorXd::Zero(n_);
        for (int r = 0; r < n_; ++r) {
            double acc = 0.0;
            for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
                acc += values_[k] * x[col_indices_[k]];
            }
            y[r] = acc;
        }
        return y;
    }

    /// b - A x accumulated in extended precision. The equilibrated systems
    /// cancel heavily in A x, so a plain double residual floors near 1e-11
    /// of ||b||; the refinement loop needs a sharper one.
    Eigen::VectorXd residual_extended(const Eigen::VectorXd& x, const Eigen::VectorXd& b) const {
        Eigen::VectorXd r(n_);
        for (int row = 0; row < n_; ++row) {
            long double acc = static_cast<long double>(b[row]);
            for (int k = row_offsets_[row]; k < row_offsets_[row + 1]; ++k) {
                acc -= static_cast<long double>(values_[k]) * static_cast<long double>(x[col_indices_[k]]);
            }
            r[row] = static_cast<double>(acc);
        }
        return r;
    }

    Eigen::SparseMatrix<double> to_eigen() const {
        Eigen::SparseMatrix<double> out(n_, n_);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(values_.size());
        for (int r = 0; r < n_; ++r) {
            for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
                trip.emplace_back(r, col_indices_[k], values_[k]);
            }
        }
        out.setFromTriplets(trip.begin(), trip.end());
        return out;
    }

private:
    int n_ = 0;
    std::vector<int> row_offsets_{0};
    std::vector<int> col_indices_;
    std::vector<double> values_;
};

/// Sparse direct solve: multifrontal LU (UMFPACK) with iterative refinement
/// using extended-precision residuals. Throws if the factorisation reports a
/// singular pivot or the relative residual stays above 1e-11.
inline Eigen::VectorXd factor_and_solve(const SparseMatrix& matrix, const Eigen::VectorXd& rhs) {
    if (matrix.size() != rhs.size()) {
        throw std::invalid_argument("factor_and_solve: matrix is " + std::to_string(matrix.size()) +
                                    "x" + std::to_string(matrix.size()) + " but rhs has size " +
                                    std::to_string(rhs.size()));
    }
    const int n = matrix.size();
    const auto& offsets = matrix.row_offsets();
    const auto& cols = matrix.col_indices();
    const auto& vals = matrix.values();

    const Eigen::SparseMatrix<double> A = matrix.to_eigen();
    Eigen::UmfPackLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) {
        throw std::runtime_error("factor_and_solve: singular matrix (UMFPACK status " +
                                 std::to_string(lu.umfpackFactorizeReturncode()) + ")");
    }

    Eigen::VectorXd x = lu.solve(rhs);
    const double rhs_norm = rhs.norm();
    for (int pass = 0; pass < 4; ++pass) {
        const Eigen::VectorXd residual = matrix.residual_extended(x, rhs);
        const double rel = rhs_norm > 0.0 ? residual.norm() / rhs_norm : residual.norm();
        if (rel <= 1e-13) break;
        x += Eigen::VectorXd(lu.solve(residual));
    }

    // Accept when || A x - b || <= 1e-11 (||b|| + || |A||x| ||). The second
    // term is the precision actually representable by a double x: near
    // Newton convergence b is the tiny difference of O(||A|| ||x||) terms and
    // even the exactly rounded solution cannot push the plain ||.||/||b||
    // ratio below eps * |||A||x||| / ||b||.
    const Eigen::VectorXd residual = matrix.residual_extended(x, rhs);
    double cancellation_scale = 0.0;
    {
        Eigen::VectorXd ax_abs = Eigen::VectorXd::Zero(n);
        for (int r = 0; r < n; ++r) {
            double acc = 0.0;
            for (int k = offsets[r]; k < offsets[r + 1]; ++k) {
                acc += std::abs(vals[k]) * std::abs(x[cols[k]]);
            }
            ax_abs[r] = acc;
        }
        cancellation_scale = ax_abs.norm();
    }
    if (!(residual.norm() <= 1e-11 * (rhs_norm + cancellation_scale))) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3e", residual.norm() / (rhs_norm + cancellation_scale));
        throw std::runtime_error(std::string("factor_and_solve: relative residual ") + buf +
                                 " exceeds 1e-11");
    }
    return x;
}

} // namespace smectic
