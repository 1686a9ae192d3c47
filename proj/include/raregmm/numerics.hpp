#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace rgmm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kMaxEigenDim = 200;

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

// Relative symmetry check: max |a_ij - a_ji| <= tol * max(1, max |a_ij|).
inline bool is_symmetric(const Matrix& a, double tol = 1e-10) {
    if (a.rows() != a.cols()) return false;
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Symmetric positive-definite matrix held through its lower Cholesky factor.
class SpdMatrix {
public:
    /// Factor A = L L^T. Throws SingularCovarianceError naming the first
    /// pivot that is non-positive or non-finite.
    static SpdMatrix factor(const Matrix& a) {
        if (a.rows() != a.cols() || a.rows() == 0) {
            throw DomainError("cholesky: matrix must be square and non-empty");
        }
        if (!is_symmetric(a)) throw SymmetryError("cholesky: matrix is not symmetric");
        const Eigen::Index n = a.rows();
        Matrix l = Matrix::Zero(n, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            double d = a(j, j);
            for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
            if (!(d > 0.0) || !std::isfinite(d)) {
                throw SingularCovarianceError("covariance is not positive definite", static_cast<int>(j));
            }
            const double ljj = std::sqrt(d);
            l(j, j) = ljj;
            for (Eigen::Index i = j + 1; i < n; ++i) {
                double s = a(i, j);
                for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
                l(i, j) = s / ljj;
            }
        }
        return SpdMatrix(std::move(l));
    }

    int dim() const { return static_cast<int>(chol_.rows()); }
    const Matrix& lower() const { return chol_; }

    Matrix dense() const { return chol_ * chol_.transpose(); }

    double log_det() const { return 2.0 * chol_.diagonal().array().log().sum(); }

    Vector solve(const Vector& b) const {
        if (b.size() != chol_.rows()) throw DomainError("spd_solve: dimension mismatch");
        return solve_impl(b);
    }

    Matrix solve(const Matrix& b) const {
        if (b.rows() != chol_.rows()) throw DomainError("spd_solve: dimension mismatch");
        return solve_impl(b);
    }

    // Expressions are evaluated first so the Vector / Matrix overload is picked.
    template <typename Derived>
    auto solve(const Eigen::MatrixBase<Derived>& b) const {
        return solve(b.eval());
    }

    Matrix inverse() const { return solve_impl(Matrix(Matrix::Identity(chol_.rows(), chol_.rows()))); }

    // L^{-1} b, used for Mahalanobis distances over many columns at once.
    Matrix whiten(const Matrix& b) const { return chol_.triangularView<Eigen::Lower>().solve(b); }

private:
    explicit SpdMatrix(Matrix l) : chol_(std::move(l)) {}

    template <typename T>
    T solve_impl(const T& b) const {
        T y = chol_.triangularView<Eigen::Lower>().solve(b);
        return chol_.transpose().triangularView<Eigen::Upper>().solve(y);
    }

    Matrix chol_;
};

inline SpdMatrix cholesky(const Matrix& a) { return SpdMatrix::factor(a); }

inline Vector spd_solve(const SpdMatrix& a, const Vector& b) { return a.solve(b); }

struct EigenSpectrum {
    std::vector<std::complex<double>> eigenvalues;

    double max_modulus() const {
        double r = 0.0;
        for (const auto& z : eigenvalues) r = std::max(r, std::abs(z));
        return r;
    }
};

/// All eigenvalues of a general real square matrix (Hessenberg + shifted QR,
/// delegated to Eigen's real Schur decomposition).
inline EigenSpectrum eigenvalues(const Matrix& a) {
    if (a.rows() != a.cols() || a.rows() == 0) throw DomainError("eigenvalues: matrix must be square");
    if (a.rows() > kMaxEigenDim) {
        throw DomainError("eigenvalues: dimension " + std::to_string(a.rows()) + " exceeds cap " +
                          std::to_string(kMaxEigenDim));
    }
    if (!a.allFinite()) throw DomainError("eigenvalues: matrix has non-finite entries");
    Eigen::EigenSolver<Matrix> solver;
    solver.setMaxIterations(30 * static_cast<Eigen::Index>(a.rows()));
    solver.compute(a, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) throw NumericalFailure("eigenvalues: QR iteration did not converge");
    EigenSpectrum out;
    const auto& ev = solver.eigenvalues();
    out.eigenvalues.assign(ev.data(), ev.data() + ev.size());
    return out;
}

inline double spectral_radius(const Matrix& a) { return eigenvalues(a).max_modulus(); }

}  // namespace rgmm
