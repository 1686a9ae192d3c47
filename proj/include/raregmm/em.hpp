#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "core.hpp"

namespace rgmm {

struct FitConfig {
    int max_iter = 5000;
    // Stopping rule: max |theta^(t+1) - theta^(t)| over packed coordinates.
    double tol = 1e-6;
    // Added to the diagonal of every updated covariance. Zero disables it.
    double ridge = 0.0;
    bool record_trace = false;

    void validate() const {
        if (max_iter < 1) throw ConfigError("fit: max_iter must be >= 1");
        if (!(tol > 0.0)) throw ConfigError("fit: tol must be > 0");
        if (!(ridge >= 0.0)) throw ConfigError("fit: ridge must be >= 0");
    }
};

enum class Termination { tolerance_met, max_iter_reached, numerical_failure };

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::tolerance_met: return "tolerance_met";
        case Termination::max_iter_reached: return "max_iter_reached";
        default: return "numerical_failure";
    }
}

struct FitResult {
    Theta theta_hat;
    int n_iter = 0;
    bool converged = false;
    Termination termination = Termination::max_iter_reached;
    std::string message;
    // loglik_semi at theta^(0), ..., theta^(n_iter); filled when record_trace.
    std::vector<double> loglik_trace;
    std::vector<Vector> theta_trace;
};

namespace detail {

inline double empty_threshold(int n) { return 1e-300 * std::max(1, n); }

inline Matrix weighted_scatter(const Matrix& x, const Vector& center, const Vector& w) {
    const Matrix r = x.rowwise() - center.transpose();
    return r.transpose() * (r.array().colwise() * w.array()).matrix();
}

// Log-likelihood contribution of the labeled sample (complete-data terms).
inline double labeled_loglik(const LabeledDataSet& lab, const Theta& theta) {
    if (lab.m() == 0) return 0.0;
    const Vector l1 = component_logpdf(lab.x(), theta, 1);
    const Vector l0 = component_logpdf(lab.x(), theta, 0);
    const Vector& y = lab.y();
    const double n1 = y.sum();
    const double n0 = static_cast<double>(lab.m()) - n1;
    double s = y.dot(l1) + (1.0 - y.array()).matrix().dot(l0);
    s += n1 * std::log(theta.alpha()) + n0 * std::log1p(-theta.alpha());
    return s;
}

// One application of the MEM mapping. When unlabeled_loglik is non-null it
// receives sum_i log f_theta(X_i) at the input theta, computed from the same
// component densities.
inline Theta mixed_step(const DataSet& data, const LabeledDataSet& lab, const Theta& theta, double ridge,
                        double* unlabeled_loglik) {
    if (data.dim() != theta.dim() || lab.dim() != theta.dim()) throw DomainError("step: dimension mismatch");
    const int n = data.n();
    const int m = lab.m();

    const double log_a = std::log(theta.alpha());
    const double log_b = std::log1p(-theta.alpha());
    const Vector l1 = component_logpdf(data.x(), theta, 1);
    const Vector l0 = component_logpdf(data.x(), theta, 0);
    const Vector pi = logistic(((l1 - l0).array() + (log_a - log_b)).matrix());
    if (unlabeled_loglik) {
        double ll = 0.0;
        for (int i = 0; i < n; ++i) ll += log_add_exp(log_a + l1(i), log_b + l0(i));
        *unlabeled_loglik = ll;
    }
    const Vector one_minus_pi = (1.0 - pi.array()).matrix();

    const Vector& y = lab.y();
    const Vector one_minus_y = (1.0 - y.array()).matrix();
    const double w1 = pi.sum() + y.sum();
    const double w0 = one_minus_pi.sum() + one_minus_y.sum();
    const double thresh = empty_threshold(n + m);
    if (!(w1 > thresh)) throw EmptyComponentError("step: component 1 received no weight");
    if (!(w0 > thresh)) throw EmptyComponentError("step: component 0 received no weight");

    const double alpha = w1 / static_cast<double>(n + m);
    const Vector mu1 = (data.x().transpose() * pi + lab.x().transpose() * y) / w1;
    const Vector mu0 = (data.x().transpose() * one_minus_pi + lab.x().transpose() * one_minus_y) / w0;

    // Second moments are centred at the input means.
    Matrix s1 = (weighted_scatter(data.x(), theta.mu(1), pi) + weighted_scatter(lab.x(), theta.mu(1), y)) / w1;
    Matrix s0 = (weighted_scatter(data.x(), theta.mu(0), one_minus_pi) +
                 weighted_scatter(lab.x(), theta.mu(0), one_minus_y)) /
                w0;
    s1 = symmetrize(s1);
    s0 = symmetrize(s0);
    if (ridge > 0.0) {
        s1.diagonal().array() += ridge;
        s0.diagonal().array() += ridge;
    }
    return Theta(alpha, mu0, s0, mu1, s1);
}

}  // namespace detail

/// sum_i log f_theta(X_i).
inline double loglik(const DataSet& data, const Theta& theta) {
    if (data.dim() != theta.dim()) throw DomainError("loglik: dimension mismatch");
    const Vector l1 = component_logpdf(data.x(), theta, 1);
    const Vector l0 = component_logpdf(data.x(), theta, 0);
    const double log_a = std::log(theta.alpha());
    const double log_b = std::log1p(-theta.alpha());
    double s = 0.0;
    for (int i = 0; i < data.n(); ++i) s += log_add_exp(log_a + l1(i), log_b + l0(i));
    return s;
}

/// Joint log-likelihood of unlabeled and labeled samples.
inline double loglik_semi(const DataSet& data, const LabeledDataSet& labeled, const Theta& theta) {
    if (labeled.dim() != theta.dim()) throw DomainError("loglik_semi: dimension mismatch");
    return loglik(data, theta) + detail::labeled_loglik(labeled, theta);
}

/// EM mapping: responsibilities at theta, then weighted moments. Covariances
/// are centred at the input means.
inline Theta em_step(const DataSet& data, const Theta& theta, double ridge = 0.0) {
    return detail::mixed_step(data, LabeledDataSet::empty(theta.dim()), theta, ridge, nullptr);
}

/// Mixed EM mapping: soft-weighted unlabeled terms pooled with hard-labeled
/// terms.
inline Theta mem_step(const DataSet& data, const LabeledDataSet& labeled, const Theta& theta, double ridge = 0.0) {
    return detail::mixed_step(data, labeled, theta, ridge, nullptr);
}

inline double max_abs_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// Iterate mem_step (em_step when the labeled set is empty) from theta0.
inline FitResult fit(const DataSet& data, const LabeledDataSet& labeled, const Theta& theta0,
                     const FitConfig& config = {}) {
    config.validate();
    FitResult res{theta0};
    Vector cur_packed = theta0.pack();
    if (config.record_trace) res.theta_trace.push_back(cur_packed);

    const auto record_ll = [&](double unlabeled_ll, const Theta& th) {
        if (config.record_trace) res.loglik_trace.push_back(unlabeled_ll + detail::labeled_loglik(labeled, th));
    };

    for (int t = 1; t <= config.max_iter; ++t) {
        double ll = 0.0;
        std::optional<Theta> next;
        try {
            next.emplace(detail::mixed_step(data, labeled, res.theta_hat, config.ridge,
                                            config.record_trace ? &ll : nullptr));
        } catch (const Error& e) {
            res.termination = Termination::numerical_failure;
            res.message = e.what();
            return res;
        }
        record_ll(ll, res.theta_hat);
        Vector next_packed = next->pack();
        const double change = max_abs_diff(next_packed, cur_packed);
        res.theta_hat = std::move(*next);
        cur_packed = std::move(next_packed);
        res.n_iter = t;
        if (config.record_trace) res.theta_trace.push_back(cur_packed);
        if (!std::isfinite(change)) {
            res.termination = Termination::numerical_failure;
            res.message = "non-finite parameter update";
            return res;
        }
        if (change <= config.tol) {
            res.converged = true;
            res.termination = Termination::tolerance_met;
            break;
        }
    }
    if (!res.converged) res.termination = Termination::max_iter_reached;
    if (config.record_trace) res.loglik_trace.push_back(loglik_semi(data, labeled, res.theta_hat));
    return res;
}

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

enum class InitKind { true_perturbed, labeled_moments, quantile_split };

struct InitSpec {
    InitKind kind = InitKind::quantile_split;
    // true_perturbed: reference parameters and uniform noise half-widths.
    std::optional<Theta> truth;
    double mean_scale = 0.5;
    double cov_scale = 0.2;
    // true_perturbed: half-width of the multiplicative log-scale noise on alpha.
    double alpha_log_scale = 0.0;
    // quantile_split: fraction of the projected sample assigned to class 1.
    double alpha_guess = 0.1;
};

namespace detail {

inline Theta class_moments(const Matrix& x1, const Matrix& x0, double alpha, const char* who) {
    const auto moments = [&](const Matrix& x, Vector& mu, Matrix& s) {
        mu = x.colwise().mean().transpose();
        const Matrix r = x.rowwise() - mu.transpose();
        s = symmetrize(r.transpose() * r / static_cast<double>(x.rows()));
    };
    Vector mu1, mu0;
    Matrix s1, s0;
    moments(x1, mu1, s1);
    moments(x0, mu0, s0);
    try {
        return Theta(alpha, mu0, s0, mu1, s1);
    } catch (const Error& e) {
        throw InitError(std::string(who) + ": class moments do not define a valid theta: " + e.what());
    }
}

inline Matrix select_rows(const Matrix& x, const std::vector<int>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(idx[r]);
    return out;
}

}  // namespace detail

/// Starting value for fit().
inline Theta init_strategy(const DataSet& data, const LabeledDataSet& labeled, const InitSpec& spec,
                           std::uint64_t seed) {
    switch (spec.kind) {
        case InitKind::true_perturbed: {
            if (!spec.truth) throw InitError("true_perturbed: reference theta required");
            const Theta& t = *spec.truth;
            std::mt19937_64 gen(seed);
            std::uniform_real_distribution<double> unif(-1.0, 1.0);
            double alpha = t.alpha();
            if (spec.alpha_log_scale > 0.0) alpha *= std::exp(spec.alpha_log_scale * unif(gen));
            alpha = std::clamp(alpha, 1e-12, 1.0 - 1e-12);
            std::array<Vector, 2> mu{t.mu(0), t.mu(1)};
            std::array<Matrix, 2> sig{t.sigma(0), t.sigma(1)};
            for (int k = 0; k < 2; ++k) {
                for (Eigen::Index j = 0; j < mu[k].size(); ++j) mu[k](j) += spec.mean_scale * unif(gen);
                for (Eigen::Index j = 0; j < sig[k].rows(); ++j) sig[k](j, j) += spec.cov_scale * unif(gen);
            }
            try {
                return Theta(alpha, mu[0], sig[0], mu[1], sig[1]);
            } catch (const Error& e) {
                throw InitError(std::string("true_perturbed: perturbed theta invalid: ") + e.what());
            }
        }
        case InitKind::labeled_moments: {
            std::vector<int> pos, neg;
            for (int i = 0; i < labeled.m(); ++i) (labeled.y()(i) == 1.0 ? pos : neg).push_back(i);
            if (pos.empty() || neg.empty()) throw InitError("labeled_moments: both classes must be labeled");
            const double alpha = static_cast<double>(pos.size()) / labeled.m();
            return detail::class_moments(detail::select_rows(labeled.x(), pos), detail::select_rows(labeled.x(), neg),
                                         alpha, "labeled_moments");
        }
        case InitKind::quantile_split: {
            const Matrix& x = data.x();
            const int n = data.n();
            const int p = data.dim();
            if (!(spec.alpha_guess > 0.0 && spec.alpha_guess < 1.0)) {
                throw InitError("quantile_split: alpha_guess must lie in (0,1)");
            }
            // Project onto the leading principal axis, sign fixed so that its
            // largest-magnitude loading is positive.
            Vector dir = Vector::Ones(1);
            if (p > 1) {
                const Matrix r = x.rowwise() - x.colwise().mean();
                Eigen::SelfAdjointEigenSolver<Matrix> es(r.transpose() * r);
                dir = es.eigenvectors().col(p - 1);
                Eigen::Index imax = 0;
                dir.cwiseAbs().maxCoeff(&imax);
                if (dir(imax) < 0) dir = -dir;
            }
            const Vector proj = x * dir;
            std::vector<int> order(n);
            for (int i = 0; i < n; ++i) order[i] = i;
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return proj(a) < proj(b); });
            const int n1 = static_cast<int>(std::ceil(spec.alpha_guess * n));
            if (n1 < p + 1 || n - n1 < p + 1) {
                throw InitError("quantile_split: too few observations on one side of the split");
            }
            std::vector<int> lo(order.begin(), order.begin() + n1), hi(order.begin() + n1, order.end());
            (void)seed;
            return detail::class_moments(detail::select_rows(x, lo), detail::select_rows(x, hi),
                                         static_cast<double>(n1) / n, "quantile_split");
        }
    }
    throw InitError("unknown init kind");
}

}  // namespace rgmm
