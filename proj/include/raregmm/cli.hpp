#pragma once

#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "io.hpp"

namespace rgmm::cli {

namespace fs = std::filesystem;
using io::json;

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kParse = 2,
    kSchema = 3,
    kConfig = 4,
    kNumerical = 5,
    kDiverging = 6,
    kMaxIter = 7,
};

/// Run a command body and translate library errors into exit codes.
inline int guarded(const std::function<int()>& body, std::ostream& err = std::cerr) {
    try {
        return body();
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return kParse;
    } catch (const SchemaError& e) {
        err << "schema error: " << e.what() << '\n';
        return kSchema;
    } catch (const EvalError& e) {
        err << "evaluation error: " << e.what() << '\n';
        return kSchema;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const InitError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const DivergingIntegralError& e) {
        err << "diverging integral: " << e.what() << '\n';
        return kDiverging;
    } catch (const Error& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const fs::filesystem_error& e) {
        err << "config error: " << e.what() << '\n';
        return kConfig;
    }
}

inline void require_out_dir(const fs::path& out) {
    if (out.empty()) throw ConfigError("--out is required");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw ConfigError("cannot create output directory " + out.string());
}

inline void require_file(const fs::path& p, const char* flag) {
    if (!fs::is_regular_file(p)) throw ConfigError(std::string(flag) + ": no such file " + p.string());
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitOptions {
    fs::path unlabeled;
    std::optional<fs::path> labeled;
    std::string init = "quantile_split";
    std::optional<fs::path> truth;  // reference theta for init=true_perturbed
    double alpha_guess = 0.1;
    double tol = 1e-6;
    int max_iter = 5000;
    std::uint64_t seed = 1;
    fs::path out;
};

inline InitKind parse_init_kind(const std::string& s) {
    if (s == "true_perturbed") return InitKind::true_perturbed;
    if (s == "labeled_moments") return InitKind::labeled_moments;
    if (s == "quantile_split") return InitKind::quantile_split;
    throw ConfigError("unknown --init '" + s + "' (true_perturbed, labeled_moments, quantile_split)");
}

inline int cmd_fit(const FitOptions& o, std::ostream& log = std::cout) {
    require_file(o.unlabeled, "--unlabeled");
    if (o.labeled) require_file(*o.labeled, "--labeled");
    const FitConfig cfg{o.max_iter, o.tol, 0.0, true};
    cfg.validate();
    InitSpec spec;
    spec.kind = parse_init_kind(o.init);
    spec.alpha_guess = o.alpha_guess;
    if (spec.kind == InitKind::true_perturbed) {
        if (!o.truth) throw ConfigError("--init true_perturbed needs --truth PATH");
        spec.truth = io::read_theta(*o.truth);
    }
    require_out_dir(o.out);

    const Matrix xu = io::read_unlabeled_csv(o.unlabeled);
    const int p = static_cast<int>(xu.cols());
    const LabeledDataSet labeled = o.labeled ? io::read_labeled_csv(*o.labeled) : LabeledDataSet::empty(p);
    if (labeled.dim() != p) {
        throw SchemaError("unlabeled data has p=" + std::to_string(p) + " but labeled data has p=" +
                          std::to_string(labeled.dim()));
    }
    if (spec.truth && spec.truth->dim() != p) throw SchemaError("--truth dimension does not match the data");
    const DataSet data = xu.rows() ? DataSet(xu) : DataSet::empty(p);
    if (data.n() + labeled.m() == 0) throw ParseError("no observations in the input files");

    const Theta theta0 = init_strategy(data, labeled, spec, o.seed);
    const FitResult fr = fit(data, labeled, theta0, cfg);

    io::write_atomic(o.out / "theta_hat.json", io::theta_to_json(fr.theta_hat).dump(2) + "\n");
    std::string trace = "iter,loglik";
    for (int j = 0; j < theta0.size(); ++j) trace += ",theta" + std::to_string(j + 1);
    trace += '\n';
    for (std::size_t t = 0; t < fr.theta_trace.size(); ++t) {
        trace += std::to_string(t) + ',' +
                 io::fmt(t < fr.loglik_trace.size() ? fr.loglik_trace[t] : std::nan(""), "%.17g");
        for (Eigen::Index j = 0; j < fr.theta_trace[t].size(); ++j) trace += ',' + io::fmt(fr.theta_trace[t](j), "%.17g");
        trace += '\n';
    }
    io::write_atomic(o.out / "trace.csv", trace);
    const json status{{"termination", to_string(fr.termination)},
                      {"converged", fr.converged},
                      {"n_iter", fr.n_iter},
                      {"message", fr.message},
                      {"n_unlabeled", data.n()},
                      {"n_labeled", labeled.m()},
                      {"init", o.init},
                      {"seed", o.seed},
                      {"tol", o.tol},
                      {"max_iter", o.max_iter},
                      {"theta0", io::theta_to_json(theta0)}};
    io::write_atomic(o.out / "fit.json", status.dump(2) + "\n");

    log << "fit: " << to_string(fr.termination) << " after " << fr.n_iter << " iterations\n";
    switch (fr.termination) {
        case Termination::tolerance_met: return kOk;
        case Termination::max_iter_reached: return kMaxIter;
        default:
            std::cerr << "numerical failure: " << fr.message << '\n';
            return kNumerical;
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateOptions {
    std::optional<fs::path> config;
    std::string grid;  // "paper"
    bool desk = false;
    std::optional<std::uint64_t> seed;
    std::optional<int> reps;
    bool details = false;
    int threads = 0;  // 0: RGMM_THREADS or hardware concurrency
    fs::path out;
};

inline SimDesign resolve_design(const SimulateOptions& o) {
    if (o.config.has_value() == !o.grid.empty()) throw ConfigError("give exactly one of --config or --grid");
    SimDesign d;
    if (o.config) {
        require_file(*o.config, "--config");
        d = io::read_design(*o.config);
    } else if (o.grid == "paper") {
        d = SimDesign::paper();
    } else {
        throw ConfigError("unknown --grid '" + o.grid + "' (paper)");
    }
    if (o.desk) d.reps = SimDesign::desk().reps;
    if (o.reps) d.reps = *o.reps;
    if (o.seed) d.seed = *o.seed;
    if (o.details) d.keep_details = true;
    d.validate();
    return d;
}

inline int cmd_simulate(const SimulateOptions& o, std::ostream& log = std::cout) {
    const SimDesign d = resolve_design(o);
    require_out_dir(o.out);
    const ExperimentReport r = run_experiment(d, o.threads > 0 ? o.threads : thread_count());
    io::write_atomic(o.out / "cells.csv", io::cells_csv(r));
    io::write_atomic(o.out / "report.json", io::report_to_json(r).dump(2) + "\n");
    int failed = 0;
    for (const auto& c : r.cells) failed += c.cell_failed;
    log << "simulate: " << r.cells.size() << " cells, " << d.reps << " replications each, " << failed
        << " failed cells, " << io::fmt(r.runtime_seconds, "%.1f") << " s\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
    std::optional<fs::path> theta;
    std::string preset;  // "paper1d"
    std::optional<fs::path> data;
    std::optional<fs::path> labeled;
    std::vector<double> kappas{0.0, 1.0 / 3.0, 1.0, 3.0};
    fs::path out;
};

inline std::vector<double> parse_list(const std::string& s) {
    std::vector<double> v;
    for (const auto& f : io::split_csv_line(s)) v.push_back(io::parse_double(f, "--kappa-sweep", 1));
    return v;
}

inline json spectrum_json(const Matrix& a) {
    json ev = json::array();
    for (const auto& z : eigenvalues(a).eigenvalues) ev.push_back({z.real(), z.imag()});
    return ev;
}

inline std::string kappa_tag(double k) {
    std::string s = io::fmt(k, "%.6g");
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

inline int cmd_analyze(const AnalyzeOptions& o, std::ostream& log = std::cout) {
    if (o.theta.has_value() == !o.preset.empty()) throw ConfigError("give exactly one of --theta or --preset");
    if (!o.preset.empty() && o.preset != "paper1d") throw ConfigError("unknown --preset '" + o.preset + "' (paper1d)");
    for (double k : o.kappas)
        if (!(k >= 0.0) || !std::isfinite(k)) throw ConfigError("--kappa-sweep values must be finite and >= 0");
    if (o.theta) require_file(*o.theta, "--theta");
    if (o.data) require_file(*o.data, "--data");
    if (o.labeled) require_file(*o.labeled, "--labeled");
    require_out_dir(o.out);

    const Theta theta = o.theta ? io::read_theta(*o.theta) : paper_theta_1d(0.01);
    const int p = theta.dim();
    json summary{{"theta", io::theta_to_json(theta)}};

    const RatioIntegrals ri = gaussian_ratio_integrals(theta);
    summary["ratio_integrals"] = {{"log_c", ri.log_c},
                                  {"c", std::exp(ri.log_c)},
                                  {"delta_mu1_alpha", io::vector_json(ri.delta_mu1_alpha)},
                                  {"delta_sigma1_alpha", io::vector_json(ri.delta_sigma1_alpha)}};

    const LimitMatrix m = limit_matrix_M(theta);
    io::write_atomic(o.out / "M.csv", io::matrix_csv(m.mat));
    summary["M"] = {{"spectral_radius", spectral_radius(m.mat)},
                    {"det_M_minus_I", (m.mat - Matrix::Identity(m.mat.rows(), m.mat.cols())).determinant()},
                    {"eigenvalues", spectrum_json(m.mat)}};

    json sweep = json::array();
    for (double k : o.kappas) {
        const LimitMatrix ms = limit_matrix_Mstar(theta, k);
        io::write_atomic(o.out / ("Mstar_kappa_" + kappa_tag(k) + ".csv"), io::matrix_csv(ms.mat));
        sweep.push_back({{"kappa", k},
                         {"spectral_radius_Mstar", spectral_radius(ms.mat)},
                         {"block_check_radius", block_spectral_radius_check(theta, k)}});
    }
    summary["kappa_sweep"] = sweep;
    summary["min_contracting_kappa"] = min_contracting_kappa(theta);

    if (o.data) {
        const Matrix xu = io::read_unlabeled_csv(*o.data);
        if (xu.cols() != p) throw SchemaError("--data dimension does not match theta");
        const DataSet data = xu.rows() ? DataSet(xu) : DataSet::empty(p);
        const LabeledDataSet labeled = o.labeled ? io::read_labeled_csv(*o.labeled) : LabeledDataSet::empty(p);
        if (labeled.dim() != p) throw SchemaError("--labeled dimension does not match theta");
        json fs_json;
        const auto emit = [&](MappingKind kind, const char* name) {
            const JacobianReport a = jacobian_analytic(kind, data, labeled, theta);
            const JacobianReport f = jacobian_fd(kind, data, labeled, theta, 1e-5);
            io::write_atomic(o.out / (std::string("jacobian_") + name + ".csv"), io::matrix_csv(a.jac));
            io::write_atomic(o.out / (std::string("jacobian_") + name + "_fd.csv"), io::matrix_csv(f.jac));
            fs_json[name] = {{"spectral_radius", a.spectral_radius},
                             {"spectral_radius_fd", f.spectral_radius},
                             {"max_abs_analytic_minus_fd", (a.jac - f.jac).cwiseAbs().maxCoeff()}};
        };
        emit(MappingKind::em, "F");
        if (labeled.m() > 0) emit(MappingKind::mem, "Fstar");
        fs_json["n_unlabeled"] = data.n();
        fs_json["n_labeled"] = labeled.m();
        summary["finite_sample"] = fs_json;
    }
    io::write_atomic(o.out / "summary.json", summary.dump(2) + "\n");
    log << "analyze: rho(M) = " << io::fmt(summary["M"]["spectral_radius"].get<double>(), "%.12g") << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreOptions {
    fs::path theta;
    fs::path data;
    fs::path out;
};

inline int cmd_score(const ScoreOptions& o, std::ostream& log = std::cout) {
    require_file(o.theta, "--theta");
    require_file(o.data, "--data");
    require_out_dir(o.out);
    const Theta theta = io::read_theta(o.theta);
    const io::GroupedData g = io::read_grouped_csv(o.data);
    if (g.dim != theta.dim()) {
        throw SchemaError("data has p=" + std::to_string(g.dim) + " but theta has p=" + std::to_string(theta.dim()));
    }
    std::vector<ScoredGroup> groups;
    std::string scores = "group_id,score,label\n";
    for (std::size_t k = 0; k < g.group_ids.size(); ++k) {
        ScoredGroup sg{g.group_ids[k], score_points(g.x[k], theta), g.labels[k]};
        for (std::size_t i = 0; i < sg.scores.size(); ++i)
            scores += sg.group_id + ',' + io::fmt(sg.scores[i], "%.17g") + ',' + std::to_string(sg.labels[i]) + '\n';
        groups.push_back(std::move(sg));
    }
    const EvalSummary s = evaluate_groups(groups);
    json per = json::array();
    for (const auto& e : s.per_group) {
        json j{{"group_id", e.group_id}, {"n", e.n}, {"n_positive", e.n_positive}};
        j["auc"] = e.has_auc ? json(e.auc) : json(nullptr);
        j["fp_at_full_recall"] = e.has_fp ? json(e.fp) : json(nullptr);
        per.push_back(j);
    }
    const json summary{{"mean_auc", s.mean_auc},
                       {"median_fp", s.median_fp},
                       {"n_groups", s.n_groups},
                       {"skipped_auc", s.skipped_auc},
                       {"skipped_fp", s.skipped_fp},
                       {"per_group", per}};
    io::write_atomic(o.out / "scores.csv", scores);
    io::write_atomic(o.out / "summary.json", summary.dump(2) + "\n");
    if (s.skipped_auc || s.skipped_fp) {
        log << "warning: " << s.skipped_auc << " group(s) without both classes, " << s.skipped_fp
            << " group(s) without positives\n";
    }
    log << "score: mean AUC " << io::fmt(s.mean_auc, "%.4f") << ", median FP " << io::fmt(s.median_fp, "%.1f") << '\n';
    return kOk;
}

}  // namespace rgmm::cli
