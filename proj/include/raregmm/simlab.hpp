#pragma once

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "contraction.hpp"

namespace rgmm {

// ---------------------------------------------------------------------------
// Seeds
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { unlabeled = 1, labeled = 2, init = 3 };

// Independent stream per (cell, replication, purpose). Cells are keyed by
// their parameter values, so a sub-grid reproduces the matching cells of the
// full grid.
inline std::uint64_t derive_seed(std::uint64_t root, double alpha, double label_frac, int rep, Stream s) {
    std::uint64_t h = splitmix64(root);
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(alpha));
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(label_frac));
    h = splitmix64(h ^ static_cast<std::uint64_t>(rep));
    return splitmix64(h ^ static_cast<std::uint64_t>(s));
}

// ---------------------------------------------------------------------------
// Design
// ---------------------------------------------------------------------------

inline Theta paper_theta_1d(double alpha = 0.5) {
    return Theta(alpha, Vector::Constant(1, 1.5), Matrix::Identity(1, 1), Vector::Constant(1, -1.5),
                 Matrix::Identity(1, 1));
}

enum class AlphaStart {
    // Empirical labeled positive fraction when m > 0, else alpha_fixed.
    labeled_fraction,
    // Empirical labeled positive fraction when m > 0, else perturbed truth.
    labeled_fraction_or_perturbed,
    // alpha_true * exp(u), u ~ U(-alpha_log_scale, alpha_log_scale).
    perturbed_truth,
};

struct SimInit {
    double mean_scale = 0.5;
    double cov_scale = 0.2;
    AlphaStart alpha_start = AlphaStart::labeled_fraction_or_perturbed;
    double alpha_fixed = 0.3;
    double alpha_log_scale = 0.5;
};

struct SimDesign {
    int n_total = 100000;
    std::vector<double> alphas{0.5, 0.2, 0.1, 0.01, 0.001};
    std::vector<double> label_fracs{0.0, 0.01, 0.05, 0.10, 0.25, 0.50};
    int reps = 500;
    // Alpha of theta_true is replaced by each cell's alpha.
    Theta theta_true = paper_theta_1d();
    std::uint64_t seed = 20240501;
    FitConfig fit{};
    SimInit init{};
    // Evaluate the contraction operator at the estimate instead of the truth.
    bool rho_at_estimate = false;
    bool keep_details = false;

    void validate() const {
        if (n_total < 10) throw ConfigError("design: n_total must be >= 10");
        if (reps < 1) throw ConfigError("design: reps must be >= 1");
        if (alphas.empty() || label_fracs.empty()) throw ConfigError("design: empty grid");
        for (double a : alphas)
            if (!(a > 0.0 && a < 1.0)) throw ConfigError("design: alphas must lie in (0,1)");
        for (double f : label_fracs)
            if (!(f >= 0.0 && f < 1.0)) throw ConfigError("design: label_fracs must lie in [0,1)");
        if (init.mean_scale < 0 || init.cov_scale < 0 || init.alpha_log_scale < 0) {
            throw ConfigError("design: init scales must be >= 0");
        }
        if (!(init.alpha_fixed > 0.0 && init.alpha_fixed < 1.0)) throw ConfigError("design: alpha_fixed in (0,1)");
        fit.validate();
    }

    // The full simulation grid with D = 500.
    static SimDesign paper() { return SimDesign{}; }

    // Same grid at desk scale (D = 50).
    static SimDesign desk() {
        SimDesign d;
        d.reps = 50;
        return d;
    }

    std::string stopping_rule() const {
        char buf[160];
        std::snprintf(buf, sizeof buf, "max_j |theta_j^(t+1) - theta_j^(t)| <= %.3g, max_iter = %d", fit.tol,
                      fit.max_iter);
        return buf;
    }
};

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

struct SyntheticSample {
    Matrix x;
    Vector y;  // hidden truth labels

    DataSet unlabeled() const { return x.rows() ? DataSet(x) : DataSet::empty(static_cast<int>(x.cols())); }
    LabeledDataSet labeled() const { return LabeledDataSet(x, y); }
};

/// Y_i ~ Bernoulli(alpha), X_i | Y_i = k ~ N(mu_k, Sigma_k).
template <typename Rng>
SyntheticSample generate_dataset(double alpha, const Theta& truth, int n, Rng& rng) {
    if (n < 0) throw DomainError("generate_dataset: n must be >= 0");
    const int p = truth.dim();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    SyntheticSample s{Matrix(n, p), Vector(n)};
    Vector z(p);
    for (int i = 0; i < n; ++i) {
        const int k = unif(rng) < alpha ? 1 : 0;
        for (int j = 0; j < p; ++j) z(j) = normal(rng);
        s.y(i) = k;
        s.x.row(i) = (truth.mu(k) + truth.chol(k).lower() * z).transpose();
    }
    return s;
}

// ---------------------------------------------------------------------------
// Replications
// ---------------------------------------------------------------------------

/// Choose theta_hat or its relabelled version, whichever is closer to truth.
inline Theta align_components(const Theta& theta_hat, const Theta& truth) {
    const Vector t = truth.pack();
    const Theta sw = theta_hat.swapped();
    return (sw.pack() - t).norm() < (theta_hat.pack() - t).norm() ? sw : theta_hat;
}

struct CellSpec {
    double alpha;
    double label_frac;

    int n_labeled(int n_total) const { return static_cast<int>(std::llround(label_frac * n_total)); }
};

struct ReplicationRecord {
    int rep = 0;
    bool failed = false;
    std::string message;
    Termination termination = Termination::numerical_failure;
    int n_iter = 0;
    double rho = 0.0;
    Vector theta_hat;  // aligned, packed
    Vector sq_err;     // per packed coordinate
};

inline Theta simulation_start(const SimDesign& design, const Theta& truth, const LabeledDataSet& labeled,
                              std::uint64_t seed) {
    const AlphaStart rule = design.init.alpha_start;
    const bool from_labels = labeled.m() > 0 && rule != AlphaStart::perturbed_truth;
    InitSpec spec;
    spec.kind = InitKind::true_perturbed;
    spec.truth = truth;
    spec.mean_scale = design.init.mean_scale;
    spec.cov_scale = design.init.cov_scale;
    spec.alpha_log_scale = from_labels || rule == AlphaStart::labeled_fraction ? 0.0 : design.init.alpha_log_scale;
    const Theta t0 = init_strategy(DataSet::empty(truth.dim()), labeled, spec, seed);
    if (from_labels) {
        const double n1 = labeled.n_positive();
        const double m = labeled.m();
        // A labeled sample with a single class gets the add-half estimate so alpha stays in (0,1).
        return t0.with_alpha(n1 > 0 && n1 < m ? n1 / m : (n1 + 0.5) / (m + 1.0));
    }
    if (rule == AlphaStart::labeled_fraction) return t0.with_alpha(design.init.alpha_fixed);
    return t0;
}

inline ReplicationRecord run_replication(const SimDesign& design, const CellSpec& cell, int rep) {
    ReplicationRecord rec;
    rec.rep = rep;
    try {
        const Theta truth = design.theta_true.with_alpha(cell.alpha);
        const int m = cell.n_labeled(design.n_total);
        const int n = design.n_total - m;
        std::mt19937_64 rng_u(derive_seed(design.seed, cell.alpha, cell.label_frac, rep, Stream::unlabeled));
        std::mt19937_64 rng_l(derive_seed(design.seed, cell.alpha, cell.label_frac, rep, Stream::labeled));
        const DataSet data = generate_dataset(cell.alpha, truth, n, rng_u).unlabeled();
        const LabeledDataSet labeled = generate_dataset(cell.alpha, truth, m, rng_l).labeled();

        const Theta start = simulation_start(
            design, truth, labeled, derive_seed(design.seed, cell.alpha, cell.label_frac, rep, Stream::init));
        const FitResult fr = fit(data, labeled, start, design.fit);
        rec.termination = fr.termination;
        rec.n_iter = fr.n_iter;
        if (fr.termination == Termination::numerical_failure) {
            rec.failed = true;
            rec.message = fr.message;
            return rec;
        }
        const MappingKind kind = m > 0 ? MappingKind::mem : MappingKind::em;
        const Theta& at = design.rho_at_estimate ? fr.theta_hat : truth;
        rec.rho = jacobian_analytic(kind, data, labeled, at).spectral_radius;
        const Theta aligned = align_components(fr.theta_hat, truth);
        rec.theta_hat = aligned.pack();
        rec.sq_err = (rec.theta_hat - truth.pack()).array().square().matrix();
    } catch (const Error& e) {
        rec.failed = true;
        rec.message = e.what();
    }
    return rec;
}

struct CellResult {
    double alpha = 0.0;
    double label_frac = 0.0;
    int n_labeled = 0;
    int n_unlabeled = 0;
    double rmse = 0.0;
    double mean_n_iter = 0.0;
    double mean_rho = 0.0;
    int n_ok = 0;
    int n_failed = 0;
    int n_unconverged = 0;
    // More than 10% of replications failed.
    bool cell_failed = false;
    std::vector<ReplicationRecord> reps;
};

/// RMSE = q^{-1} sum_j (D^{-1} sum_d err_dj^2)^{1/2} over successful records.
inline CellResult aggregate(const std::vector<ReplicationRecord>& records) {
    CellResult c;
    Vector msq;
    double sum_iter = 0.0, sum_rho = 0.0;
    for (const auto& r : records) {
        if (r.failed) {
            ++c.n_failed;
            continue;
        }
        if (r.termination != Termination::tolerance_met) ++c.n_unconverged;
        if (c.n_ok == 0) msq = Vector::Zero(r.sq_err.size());
        msq += r.sq_err;
        sum_iter += r.n_iter;
        sum_rho += r.rho;
        ++c.n_ok;
    }
    if (c.n_ok == 0) throw NumericalFailure("aggregate: no successful replications in cell");
    msq /= static_cast<double>(c.n_ok);
    c.rmse = msq.array().sqrt().mean();
    c.mean_n_iter = sum_iter / c.n_ok;
    c.mean_rho = sum_rho / c.n_ok;
    c.cell_failed = c.n_failed * 10 > static_cast<int>(records.size());
    return c;
}

struct ExperimentReport {
    SimDesign design;
    std::vector<CellResult> cells;
    double runtime_seconds = 0.0;
    int threads = 1;
};

/// Worker count from RGMM_THREADS, falling back to the hardware concurrency.
inline int thread_count() {
    if (const char* env = std::getenv("RGMM_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Run every (alpha, label_frac) cell, rows ordered by alpha then label
/// fraction. Results do not depend on the thread count.
inline ExperimentReport run_experiment(const SimDesign& design, int threads = thread_count()) {
    design.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<CellSpec> cells;
    for (double a : design.alphas)
        for (double f : design.label_fracs) cells.push_back({a, f});
    const std::size_t reps = static_cast<std::size_t>(design.reps);
    std::vector<ReplicationRecord> records(cells.size() * reps);

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t task = next++; task < records.size(); task = next++) {
            records[task] = run_replication(design, cells[task / reps], static_cast<int>(task % reps));
        }
    };
    threads = std::max(1, std::min<int>(threads, static_cast<int>(records.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    }

    ExperimentReport rep{design, {}, 0.0, threads};
    for (std::size_t c = 0; c < cells.size(); ++c) {
        std::vector<ReplicationRecord> cell_records(records.begin() + static_cast<std::ptrdiff_t>(c * reps),
                                                    records.begin() + static_cast<std::ptrdiff_t>((c + 1) * reps));
        CellResult cr;
        try {
            cr = aggregate(cell_records);
        } catch (const NumericalFailure&) {
            const double nan = std::numeric_limits<double>::quiet_NaN();
            cr.rmse = cr.mean_n_iter = cr.mean_rho = nan;
            cr.n_failed = static_cast<int>(cell_records.size());
            cr.cell_failed = true;
        }
        cr.alpha = cells[c].alpha;
        cr.label_frac = cells[c].label_frac;
        cr.n_labeled = cells[c].n_labeled(design.n_total);
        cr.n_unlabeled = design.n_total - cr.n_labeled;
        if (design.keep_details) cr.reps = std::move(cell_records);
        rep.cells.push_back(std::move(cr));
    }
    rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

}  // namespace rgmm
