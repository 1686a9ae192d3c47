#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "numerics.hpp"

namespace rgmm {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// ---------------------------------------------------------------------------
// vech / vec / duplication matrix
// ---------------------------------------------------------------------------

inline int vech_size(int p) { return p * (p + 1) / 2; }

// Position of A_ij (i <= j, zero based) inside vech(A). Entries are ordered
// lexicographically over (i, j) with i <= j, i.e. row by row of the upper
// triangle.
inline int vech_index(int p, int i, int j) {
    if (i > j) std::swap(i, j);
    return i * p - i * (i - 1) / 2 + (j - i);
}

inline Vector vech(const Matrix& a) {
    if (a.rows() != a.cols()) throw DomainError("vech: matrix must be square");
    if (!is_symmetric(a)) throw SymmetryError("vech: matrix is not symmetric");
    const int p = static_cast<int>(a.rows());
    Vector v(vech_size(p));
    int k = 0;
    for (int i = 0; i < p; ++i)
        for (int j = i; j < p; ++j) v(k++) = a(i, j);
    return v;
}

inline int dim_from_vech_size(Eigen::Index n) {
    const int p = static_cast<int>(std::lround((std::sqrt(8.0 * static_cast<double>(n) + 1.0) - 1.0) / 2.0));
    if (vech_size(p) != n || p < 1) throw DomainError("unvech: length is not p(p+1)/2");
    return p;
}

inline Matrix unvech(const Vector& v) {
    const int p = dim_from_vech_size(v.size());
    Matrix a(p, p);
    int k = 0;
    for (int i = 0; i < p; ++i)
        for (int j = i; j < p; ++j) {
            a(i, j) = v(k);
            a(j, i) = v(k);
            ++k;
        }
    return a;
}

// Column-major vectorisation.
inline Vector vec(const Matrix& a) { return Eigen::Map<const Vector>(a.data(), a.size()); }

/// D with D * vech(A) = vec(A) for symmetric A.
inline Matrix duplication_matrix(int p) {
    if (p < 1) throw DomainError("duplication_matrix: p must be >= 1");
    Matrix d = Matrix::Zero(p * p, vech_size(p));
    for (int j = 0; j < p; ++j)
        for (int i = 0; i < p; ++i) d(j * p + i, vech_index(p, i, j)) = 1.0;
    return d;
}

// ---------------------------------------------------------------------------
// Packed parameter layout: (alpha, mu0, vech(Sigma0), mu1, vech(Sigma1))
// ---------------------------------------------------------------------------

enum class Block { alpha = 0, mu0 = 1, sigma0 = 2, mu1 = 3, sigma1 = 4 };

struct ThetaLayout {
    int p;

    int d() const { return vech_size(p); }
    int q() const { return p * p + 3 * p + 1; }

    int size(Block b) const {
        switch (b) {
            case Block::alpha: return 1;
            case Block::mu0:
            case Block::mu1: return p;
            default: return d();
        }
    }

    int offset(Block b) const {
        switch (b) {
            case Block::alpha: return 0;
            case Block::mu0: return 1;
            case Block::sigma0: return 1 + p;
            case Block::mu1: return 1 + p + d();
            default: return 1 + 2 * p + d();
        }
    }

    int mu(int k) const { return offset(k == 0 ? Block::mu0 : Block::mu1); }
    int sigma(int k) const { return offset(k == 0 ? Block::sigma0 : Block::sigma1); }
};

inline constexpr std::array<Block, 5> kBlocks{Block::alpha, Block::mu0, Block::sigma0, Block::mu1, Block::sigma1};

/// Two-component Gaussian mixture parameters. Component 1 is the minor
/// (rare) class with mixing probability alpha; component 0 the major class.
class Theta {
public:
    Theta(double alpha, Vector mu0, const Matrix& sigma0, Vector mu1, const Matrix& sigma1)
        : alpha_(alpha),
          mu_{std::move(mu0), std::move(mu1)},
          sigma_{symmetrize(sigma0), symmetrize(sigma1)},
          chol_{factor_checked(sigma_[0], 0), factor_checked(sigma_[1], 1)} {
        if (!(alpha_ > 0.0 && alpha_ < 1.0)) {
            throw DomainError("theta: alpha must lie in (0,1), got " + std::to_string(alpha_));
        }
        const auto p = sigma_[0].rows();
        if (mu_[0].size() != p || mu_[1].size() != p || sigma_[1].rows() != p) {
            throw DomainError("theta: inconsistent component dimensions");
        }
        if (!mu_[0].allFinite() || !mu_[1].allFinite()) throw DomainError("theta: non-finite mean");
    }

    static Theta unpack(const Vector& packed, int p) {
        const ThetaLayout lay{p};
        if (p < 1 || packed.size() != lay.q()) {
            throw DomainError("theta: packed length " + std::to_string(packed.size()) + " does not match q=" +
                              std::to_string(lay.q()) + " for p=" + std::to_string(p));
        }
        const int d = lay.d();
        return Theta(packed(0), packed.segment(lay.mu(0), p), unvech(packed.segment(lay.sigma(0), d)),
                     packed.segment(lay.mu(1), p), unvech(packed.segment(lay.sigma(1), d)));
    }

    Vector pack() const {
        const ThetaLayout lay = layout();
        Vector v(lay.q());
        v(0) = alpha_;
        for (int k = 0; k < 2; ++k) {
            v.segment(lay.mu(k), dim()) = mu_[k];
            v.segment(lay.sigma(k), lay.d()) = vech(sigma_[k]);
        }
        return v;
    }

    int dim() const { return static_cast<int>(mu_[0].size()); }
    int size() const { return layout().q(); }
    ThetaLayout layout() const { return ThetaLayout{dim()}; }

    double alpha() const { return alpha_; }
    // Mixing weight of component k: alpha for k = 1, 1 - alpha for k = 0.
    double weight(int k) const { return k == 1 ? alpha_ : 1.0 - alpha_; }
    const Vector& mu(int k) const { return mu_[k]; }
    const Matrix& sigma(int k) const { return sigma_[k]; }
    const SpdMatrix& chol(int k) const { return chol_[k]; }

    // Relabel components: alpha -> 1 - alpha, 0 <-> 1.
    Theta swapped() const { return Theta(1.0 - alpha_, mu_[1], sigma_[1], mu_[0], sigma_[0]); }

    Theta with_alpha(double alpha) const { return Theta(alpha, mu_[0], sigma_[0], mu_[1], sigma_[1]); }

private:
    static SpdMatrix factor_checked(const Matrix& s, int k) {
        try {
            return SpdMatrix::factor(s);
        } catch (const SingularCovarianceError& e) {
            throw SingularCovarianceError("theta: Sigma" + std::to_string(k) + " is not positive definite",
                                          e.pivot());
        }
    }

    double alpha_;
    std::array<Vector, 2> mu_;
    std::array<Matrix, 2> sigma_;
    std::array<SpdMatrix, 2> chol_;
};

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Unlabeled observations, one row per sample.
class DataSet {
public:
    explicit DataSet(Matrix x) : x_(std::move(x)) {
        if (x_.rows() < 1) throw DomainError("dataset: at least one observation required");
        check();
    }

    // N = 0 placeholder of dimension p (labeled-only fits and tests).
    static DataSet empty(int p) {
        DataSet d;
        d.x_ = Matrix(0, p);
        return d;
    }

    const Matrix& x() const { return x_; }
    int n() const { return static_cast<int>(x_.rows()); }
    int dim() const { return static_cast<int>(x_.cols()); }

private:
    DataSet() = default;

    void check() const {
        if (x_.cols() < 1) throw DomainError("dataset: dimension must be >= 1");
        if (!x_.allFinite()) throw DomainError("dataset: non-finite feature value");
    }

    Matrix x_;
};

/// Labeled observations with binary responses; m = 0 means no labeled data.
class LabeledDataSet {
public:
    LabeledDataSet(Matrix x, Vector y) : x_(std::move(x)), y_(std::move(y)) {
        if (x_.rows() != y_.size()) throw DomainError("labeled dataset: x and y lengths differ");
        if (!x_.allFinite()) throw DomainError("labeled dataset: non-finite feature value");
        for (Eigen::Index i = 0; i < y_.size(); ++i) {
            if (y_(i) != 0.0 && y_(i) != 1.0) throw DomainError("labeled dataset: labels must be 0 or 1");
        }
    }

    static LabeledDataSet empty(int p) { return LabeledDataSet(Matrix(0, p), Vector(0)); }

    const Matrix& x() const { return x_; }
    const Vector& y() const { return y_; }
    int m() const { return static_cast<int>(x_.rows()); }
    int dim() const { return static_cast<int>(x_.cols()); }
    double n_positive() const { return y_.sum(); }

private:
    Matrix x_;
    Vector y_;
};

struct Responsibilities {
    Vector pi;
};

// ---------------------------------------------------------------------------
// Densities
// ---------------------------------------------------------------------------

inline double gaussian_logpdf(const Vector& x, const Vector& mu, const SpdMatrix& sigma) {
    if (x.size() != mu.size() || mu.size() != sigma.dim()) throw DomainError("gaussian_logpdf: dimension mismatch");
    const Vector z = sigma.whiten(x - mu);
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + sigma.log_det() + z.squaredNorm());
}

// log phi_{mu_k, Sigma_k}(X_i) for every row of x.
inline Vector component_logpdf(const Matrix& x, const Theta& theta, int k) {
    const SpdMatrix& c = theta.chol(k);
    const int p = theta.dim();
    // Rows of (X - 1 mu^T) L^{-T} are the whitened residuals.
    const Matrix linv_t = c.whiten(Matrix::Identity(p, p)).transpose();
    const Matrix z = (x.rowwise() - theta.mu(k).transpose()) * linv_t;
    const double base = -0.5 * (static_cast<double>(p) * kLog2Pi + c.log_det());
    return (base - 0.5 * z.rowwise().squaredNorm().array()).matrix();
}

// log(e^a + e^b)
inline double log_add_exp(double a, double b) {
    const double m = std::max(a, b);
    if (m == -std::numeric_limits<double>::infinity()) return m;
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double logistic(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

inline double mixture_logdensity(const Vector& x, const Theta& theta) {
    return log_add_exp(std::log(theta.alpha()) + gaussian_logpdf(x, theta.mu(1), theta.chol(1)),
                       std::log1p(-theta.alpha()) + gaussian_logpdf(x, theta.mu(0), theta.chol(0)));
}

inline double mixture_density(const Vector& x, const Theta& theta) { return std::exp(mixture_logdensity(x, theta)); }

/// Log-odds log(alpha phi_1 / ((1 - alpha) phi_0)) for every row of x.
inline Vector log_odds(const Matrix& x, const Theta& theta) {
    const double prior_odds = std::log(theta.alpha()) - std::log1p(-theta.alpha());
    return ((component_logpdf(x, theta, 1) - component_logpdf(x, theta, 0)).array() + prior_odds).matrix();
}

// Elementwise logistic; 1 / (1 + e^{-t}) keeps full relative accuracy in both tails.
inline Vector logistic(const Vector& t) { return (1.0 + (-t.array()).exp()).inverse().matrix(); }

/// pi_i = P(Y_i = 1 | X_i), evaluated as the logistic of the log-odds.
inline Responsibilities posterior(const DataSet& data, const Theta& theta) {
    if (data.dim() != theta.dim()) throw DomainError("posterior: dimension mismatch");
    return Responsibilities{logistic(log_odds(data.x(), theta))};
}

}  // namespace rgmm
