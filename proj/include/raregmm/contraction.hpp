#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "em.hpp"

namespace rgmm {

enum class MappingKind { em, mem };
enum class JacobianMethod { analytic, central_fd };

inline const char* to_string(MappingKind k) { return k == MappingKind::em ? "F" : "F*"; }
inline const char* to_string(JacobianMethod m) { return m == JacobianMethod::analytic ? "analytic" : "central_fd"; }

struct JacobianReport {
    Matrix jac;
    Theta eval_point;
    MappingKind mapping;
    JacobianMethod method;
    double spectral_radius;
};

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

using PackedMap = std::function<Vector(const Vector&)>;

/// Central-difference Jacobian of f at x0 with per-coordinate step
/// rel_step * max(1, |x0_j|).
inline Matrix central_difference_jacobian(const PackedMap& f, const Vector& x0, double rel_step = 1e-5) {
    if (!(rel_step > 0.0)) throw DomainError("jacobian_fd: step must be > 0");
    const Eigen::Index n = x0.size();
    Matrix jac;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double h = rel_step * std::max(1.0, std::abs(x0(j)));
        Vector plus = x0, minus = x0;
        plus(j) += h;
        minus(j) -= h;
        Vector fp, fm;
        try {
            fp = f(plus);
            fm = f(minus);
        } catch (const Error& e) {
            throw NumericalFailure(std::string("jacobian_fd: mapping failed at coordinate ") + std::to_string(j) +
                                       ": " + e.what(),
                                   static_cast<int>(j));
        }
        if (j == 0) jac.resize(fp.size(), n);
        jac.col(j) = (fp - fm) / ((plus(j) - x0(j)) + (x0(j) - minus(j)));
    }
    return jac;
}

inline PackedMap packed_mapping(MappingKind kind, const DataSet& data, const LabeledDataSet& labeled, int p) {
    return [kind, &data, &labeled, p](const Vector& v) {
        const Theta th = Theta::unpack(v, p);
        return (kind == MappingKind::em ? em_step(data, th) : mem_step(data, labeled, th)).pack();
    };
}

inline JacobianReport jacobian_fd(MappingKind kind, const DataSet& data, const LabeledDataSet& labeled,
                                  const Theta& theta, double rel_step = 1e-5) {
    Matrix jac = central_difference_jacobian(packed_mapping(kind, data, labeled, theta.dim()), theta.pack(), rel_step);
    const double rho = spectral_radius(jac);
    return {std::move(jac), theta, kind, JacobianMethod::central_fd, rho};
}

// ---------------------------------------------------------------------------
// Analytic Jacobian
// ---------------------------------------------------------------------------

namespace detail {

// Row i holds vech((X_i - c)(X_i - c)^T).
inline Matrix vech_outer_rows(const Matrix& x, const Vector& c) {
    const int p = static_cast<int>(x.cols());
    const Matrix r = x.rowwise() - c.transpose();
    Matrix out(x.rows(), vech_size(p));
    int k = 0;
    for (int a = 0; a < p; ++a)
        for (int b = a; b < p; ++b) out.col(k++) = r.col(a).cwiseProduct(r.col(b));
    return out;
}

}  // namespace detail

/// Exact derivative of F (kind = em) or F* (kind = mem) at theta, obtained by
/// differentiating the responsibilities and pushing the result through the
/// weighted means and second moments.
inline JacobianReport jacobian_analytic(MappingKind kind, const DataSet& data, const LabeledDataSet& labeled,
                                        const Theta& theta) {
    const LabeledDataSet lab = kind == MappingKind::em ? LabeledDataSet::empty(theta.dim()) : labeled;
    const Theta image = detail::mixed_step(data, lab, theta, 0.0, nullptr);
    const ThetaLayout lay = theta.layout();
    const int p = lay.p, d = lay.d(), q = lay.q();
    const int n = data.n();
    const Matrix& x = data.x();

    const Vector pi = posterior(data, theta).pi;
    const Vector y = lab.y();
    const double w1 = pi.sum() + y.sum();
    const double w0 = static_cast<double>(n) - pi.sum() + (static_cast<double>(lab.m()) - y.sum());
    const double a = theta.alpha();

    // Row i of g holds d pi_i / d theta.
    Matrix g(n, q);
    g.col(0).setConstant(1.0 / (a * (1.0 - a)));
    for (int k = 0; k < 2; ++k) {
        const double sign = k == 1 ? 1.0 : -1.0;
        const Matrix sinv = theta.chol(k).inverse();
        const Matrix gamma = theta.chol(k).solve(Matrix((x.rowwise() - theta.mu(k).transpose()).transpose()));
        g.block(0, lay.mu(k), n, p) = sign * gamma.transpose();
        // (1/2) D^T vec(gamma gamma^T - Sigma_k^{-1}), one row per observation.
        int col = lay.sigma(k);
        for (int r = 0; r < p; ++r)
            for (int c = r; c < p; ++c, ++col) {
                const double mult = (r == c ? 0.5 : 1.0) * sign;
                g.col(col) = mult * (gamma.row(r).transpose().cwiseProduct(gamma.row(c).transpose()).array() -
                                     sinv(r, c))
                                        .matrix();
            }
    }
    g.array().colwise() *= (pi.array() * (1.0 - pi.array()));

    Matrix jac = Matrix::Zero(q, q);
    jac.row(0) = g.colwise().sum() / static_cast<double>(n + lab.m());
    for (int k = 0; k < 2; ++k) {
        const double sign = k == 1 ? 1.0 : -1.0;
        const double w = k == 1 ? w1 : w0;
        const Matrix cm = x.rowwise() - image.mu(k).transpose();
        const Matrix cs = detail::vech_outer_rows(x, theta.mu(k)).rowwise() - vech(image.sigma(k)).transpose();
        jac.block(lay.mu(k), 0, p, q) = (sign / w) * (cm.transpose() * g);
        jac.block(lay.sigma(k), 0, d, q) = (sign / w) * (cs.transpose() * g);
        // Direct dependence of the second moment on its centring mean.
        const Vector shift = image.mu(k) - theta.mu(k);
        for (int j = 0; j < p; ++j) {
            Matrix e = Matrix::Zero(p, p);
            e.col(j) += shift;
            e.row(j) += shift.transpose();
            jac.block(lay.sigma(k), lay.mu(k) + j, d, 1) -= vech(e);
        }
    }
    const double rho = spectral_radius(jac);
    return {std::move(jac), theta, kind, JacobianMethod::analytic, rho};
}

// ---------------------------------------------------------------------------
// Limit matrices
// ---------------------------------------------------------------------------

/// Closed-form integrals of phi1^2 / phi0. The ratio equals c * phi_{m,S}
/// with S^{-1} = 2 Sigma1^{-1} - Sigma0^{-1}.
struct RatioIntegrals {
    double log_c;
    Vector m;
    Matrix s;
    // -int phi1^2/phi0 (x - mu1) dx
    Vector delta_mu1_alpha;
    // -int phi1^2/phi0 {(x - mu1)(x - mu1)^T - Sigma1} dx
    Matrix delta_sigma1_alpha;
};

inline RatioIntegrals gaussian_ratio_integrals(const Theta& theta) {
    const int p = theta.dim();
    const Matrix inv1 = theta.chol(1).inverse();
    const Matrix inv0 = theta.chol(0).inverse();
    const Matrix precision = symmetrize(2.0 * inv1 - inv0);
    std::optional<SpdMatrix> pc;
    try {
        pc.emplace(SpdMatrix::factor(precision));
    } catch (const SingularCovarianceError&) {
        throw DivergingIntegralError(
            "limit matrix: 2*Sigma1^{-1} - Sigma0^{-1} is not positive definite, the integrals of phi1^2/phi0 "
            "diverge");
    }
    const Matrix s = symmetrize(pc->inverse());
    const Vector b = 2.0 * inv1 * theta.mu(1) - inv0 * theta.mu(0);
    const Vector m = pc->solve(b);
    const double pd = static_cast<double>(p);
    const double log_det_s = -pc->log_det();
    const double log_c = 0.5 * (pd * kLog2Pi + log_det_s) - (pd * kLog2Pi + theta.chol(1).log_det()) +
                         0.5 * (pd * kLog2Pi + theta.chol(0).log_det()) +
                         0.5 * (m.dot(b) - 2.0 * theta.mu(1).dot(inv1 * theta.mu(1)) +
                                theta.mu(0).dot(inv0 * theta.mu(0)));
    const double c = std::exp(log_c);
    const Vector dm = m - theta.mu(1);
    return {log_c, m, s, -c * dm, -c * (s + dm * dm.transpose() - theta.sigma(1))};
}

/// Gaussian moment blocks taken over X ~ N(mu1, Sigma1), evaluated exactly
/// with Isserlis' theorem. gamma_k = Sigma_k^{-1}(X - mu_k).
struct MomentBlocks {
    Matrix mu1_sigma0;     // p x d
    Matrix mu1_sigma1;     // p x d
    Matrix sigma1_mu0;     // d x p
    Matrix sigma1_mu1;     // d x p
    Matrix sigma1_sigma0;  // d x d
    Matrix sigma1_sigma1;  // d x d

    const Matrix& mu1_sigma(int k) const { return k == 0 ? mu1_sigma0 : mu1_sigma1; }
    const Matrix& sigma1_mu(int k) const { return k == 0 ? sigma1_mu0 : sigma1_mu1; }
    const Matrix& sigma1_sigma(int k) const { return k == 0 ? sigma1_sigma0 : sigma1_sigma1; }
};

inline MomentBlocks gaussian_moment_blocks(const Theta& theta) {
    const int p = theta.dim();
    const int d = vech_size(p);
    const Matrix dup = duplication_matrix(p);
    const Matrix& sig = theta.sigma(1);
    const Vector vech_sig = vech(sig);
    MomentBlocks out;

    for (int k = 0; k < 2; ++k) {
        const double sign = k == 1 ? 1.0 : -1.0;  // (-1)^{k+1}
        const Matrix ainv = theta.chol(k).inverse();
        const Vector delta = theta.mu(1) - theta.mu(k);
        const Vector u = ainv * delta;
        const Matrix b = ainv * sig;  // B = Sigma_k^{-1} Sigma1
        const Matrix mid = ainv * (sig + delta * delta.transpose()) * ainv;

        // E[Z vec(gamma gamma^T)^T], Z = X - mu1: only the cross terms with the
        // shift survive because odd central moments vanish.
        Matrix e3(p, p * p);
        for (int a = 0; a < p; ++a) {
            const Matrix t = b.col(a) * u.transpose() + u * b.col(a).transpose();
            e3.row(a) = vec(t).transpose();
        }

        // E[vech(Z Z^T) gamma^T] = vech(Sigma1) u^T.
        const Matrix e3b = vech_sig * u.transpose();

        // E[vech(Z Z^T) vec(gamma gamma^T)^T]
        Matrix e4(d, p * p);
        for (int a = 0; a < p; ++a)
            for (int bb = a; bb < p; ++bb) {
                const int r = vech_index(p, a, bb);
                for (int dd = 0; dd < p; ++dd)
                    for (int c = 0; c < p; ++c) {
                        e4(r, dd * p + c) = sig(a, bb) * mid(c, dd) + b(c, a) * b(dd, bb) + b(c, bb) * b(dd, a);
                    }
            }

        Matrix mu1_sigma = sign * e3 * dup / 2.0;
        Matrix sigma1_mu = sign * e3b - sign * vech_sig * (delta.transpose() * ainv);
        Matrix sigma1_sigma = e4 * dup / 2.0 - vech_sig * vec(mid).transpose() * dup / 2.0;
        if (k == 0) {
            out.mu1_sigma0 = std::move(mu1_sigma);
            out.sigma1_mu0 = std::move(sigma1_mu);
            out.sigma1_sigma0 = std::move(sigma1_sigma);
        } else {
            out.mu1_sigma1 = std::move(mu1_sigma);
            out.sigma1_mu1 = std::move(sigma1_mu);
            out.sigma1_sigma1 = std::move(sigma1_sigma);
        }
    }
    return out;
}

enum class LimitKind { M, Mstar };

struct LimitMatrix {
    Matrix mat;
    LimitKind kind;
    double kappa;
    int p;

    ThetaLayout layout() const { return ThetaLayout{p}; }

    Matrix block(Block r, Block c) const {
        const ThetaLayout lay = layout();
        return mat.block(lay.offset(r), lay.offset(c), lay.size(r), lay.size(c));
    }
};

namespace detail {

inline void set_block(Matrix& m, const ThetaLayout& lay, Block r, Block c, const Matrix& v) {
    m.block(lay.offset(r), lay.offset(c), lay.size(r), lay.size(c)) = v;
}

}  // namespace detail

/// Probability limit of the EM contraction operator as alpha -> 0 with
/// N * alpha -> infinity. Independent of alpha itself.
inline LimitMatrix limit_matrix_M(const Theta& theta) {
    const ThetaLayout lay = theta.layout();
    const int p = lay.p;
    const RatioIntegrals ri = gaussian_ratio_integrals(theta);
    const MomentBlocks mb = gaussian_moment_blocks(theta);
    const Vector dmu = theta.mu(1) - theta.mu(0);

    Matrix m = Matrix::Zero(lay.q(), lay.q());
    using B = Block;
    m(0, 0) = 1.0;
    detail::set_block(m, lay, B::mu0, B::alpha, theta.mu(0) - theta.mu(1));
    detail::set_block(m, lay, B::sigma0, B::alpha,
                      -vech(symmetrize(theta.sigma(1) - theta.sigma(0) + dmu * dmu.transpose())));

    detail::set_block(m, lay, B::mu1, B::alpha, ri.delta_mu1_alpha);
    detail::set_block(m, lay, B::mu1, B::mu0, -theta.sigma(1) * theta.chol(0).inverse());
    detail::set_block(m, lay, B::mu1, B::sigma0, mb.mu1_sigma0);
    detail::set_block(m, lay, B::mu1, B::mu1, Matrix::Identity(p, p));
    detail::set_block(m, lay, B::mu1, B::sigma1, mb.mu1_sigma1);

    detail::set_block(m, lay, B::sigma1, B::alpha, vech(symmetrize(ri.delta_sigma1_alpha)));
    detail::set_block(m, lay, B::sigma1, B::mu0, mb.sigma1_mu0);
    detail::set_block(m, lay, B::sigma1, B::sigma0, mb.sigma1_sigma0);
    detail::set_block(m, lay, B::sigma1, B::mu1, mb.sigma1_mu1);
    detail::set_block(m, lay, B::sigma1, B::sigma1, -mb.sigma1_sigma1);
    return {std::move(m), LimitKind::M, 0.0, p};
}

/// Limit of the MEM contraction operator for m/N -> kappa: M with the
/// minor-component alpha column removed, scaled by 1/(1+kappa).
inline LimitMatrix limit_matrix_Mstar(const Theta& theta, double kappa) {
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw DomainError("limit_matrix_Mstar: kappa must be >= 0");
    LimitMatrix lm = limit_matrix_M(theta);
    const ThetaLayout lay = lm.layout();
    detail::set_block(lm.mat, lay, Block::mu1, Block::alpha, Matrix::Zero(lay.p, 1));
    detail::set_block(lm.mat, lay, Block::sigma1, Block::alpha, Matrix::Zero(lay.d(), 1));
    lm.mat *= 1.0 / (1.0 + kappa);
    lm.kind = LimitKind::Mstar;
    lm.kappa = kappa;
    return lm;
}

/// The minor-component rows of the MEM contraction operator carry an extra
/// factor alpha on their alpha column. Applies that convention to a
/// finite-sample Jacobian so it can be compared with limit_matrix_Mstar.
inline Matrix scale_minor_alpha_column(Matrix jac, const ThetaLayout& lay, double alpha) {
    jac.block(lay.offset(Block::mu1), 0, lay.p + lay.d(), 1) *= alpha;
    return jac;
}

/// Spectral radius of (I_p, D_mu1Sigma1; D_Sigma1mu1, -D_Sigma1Sigma1)/(1+kappa),
/// which governs the (mu1, Sigma1) block of the MEM iteration.
inline double block_spectral_radius_check(const Theta& theta, double kappa) {
    if (!(kappa >= 0.0)) throw DomainError("block_spectral_radius_check: kappa must be >= 0");
    const MomentBlocks mb = gaussian_moment_blocks(theta);
    const int p = theta.dim(), d = vech_size(p);
    Matrix blk(p + d, p + d);
    blk.topLeftCorner(p, p) = Matrix::Identity(p, p);
    blk.topRightCorner(p, d) = mb.mu1_sigma1;
    blk.bottomLeftCorner(d, p) = mb.sigma1_mu1;
    blk.bottomRightCorner(d, d) = -mb.sigma1_sigma1;
    return spectral_radius(blk / (1.0 + kappa));
}

/// Smallest kappa for which block_spectral_radius_check drops below 1,
/// located by bisection. Returns 0 when already contracting at kappa = 0.
inline double min_contracting_kappa(const Theta& theta, double tol = 1e-10) {
    if (block_spectral_radius_check(theta, 0.0) < 1.0) return 0.0;
    double lo = 0.0, hi = 1.0;
    while (block_spectral_radius_check(theta, hi) >= 1.0) {
        hi *= 2.0;
        if (hi > 1e12) throw NumericalFailure("min_contracting_kappa: no contracting kappa found");
    }
    while (hi - lo > tol * std::max(1.0, hi)) {
        const double mid = 0.5 * (lo + hi);
        (block_spectral_radius_check(theta, mid) < 1.0 ? hi : lo) = mid;
    }
    return hi;
}

/// Relative Frobenius deviation ||A_b - R_b|| / ||R_b|| for each of the 5x5
/// parameter blocks; blocks with ||R_b|| <= min_norm are reported as NaN.
inline Matrix blockwise_relative_deviation(const Matrix& a, const Matrix& ref, int p, double min_norm = 1e-3) {
    const ThetaLayout lay{p};
    Matrix out(5, 5);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) {
            const Block br = kBlocks[r], bc = kBlocks[c];
            const auto rb = ref.block(lay.offset(br), lay.offset(bc), lay.size(br), lay.size(bc));
            const auto ab = a.block(lay.offset(br), lay.offset(bc), lay.size(br), lay.size(bc));
            const double nr = rb.norm();
            out(r, c) = nr > min_norm ? (ab - rb).norm() / nr : std::numeric_limits<double>::quiet_NaN();
        }
    return out;
}

}  // namespace rgmm
