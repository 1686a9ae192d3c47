#include <CLI11.hpp>

#include "raregmm/cli.hpp"

int main(int argc, char** argv) {
    using namespace rgmm::cli;
    CLI::App app{"Two-component Gaussian mixtures under rare events: fitting, contraction diagnostics, simulation"};
    app.require_subcommand(1);

    FitOptions fo;
    std::string labeled, truth;
    auto* fit = app.add_subcommand("fit", "Fit the mixture by EM, or mixed EM when labeled data is given");
    fit->add_option("--unlabeled", fo.unlabeled, "CSV with columns x1..xp")->required();
    fit->add_option("--labeled", labeled, "CSV with columns x1..xp,y");
    fit->add_option("--init", fo.init, "true_perturbed | labeled_moments | quantile_split")->capture_default_str();
    fit->add_option("--truth", truth, "reference theta JSON for --init true_perturbed");
    fit->add_option("--alpha-guess", fo.alpha_guess, "minor-class share for quantile_split")->capture_default_str();
    fit->add_option("--tol", fo.tol, "stop when max |theta change| <= tol")->capture_default_str();
    fit->add_option("--max-iter", fo.max_iter)->capture_default_str();
    fit->add_option("--seed", fo.seed)->capture_default_str();
    fit->add_option("--out", fo.out, "output directory")->required();

    SimulateOptions so;
    std::string sim_config;
    std::uint64_t sim_seed = 0;
    int sim_reps = 0;
    auto* sim = app.add_subcommand("simulate", "Run the (alpha x label fraction) replication grid");
    auto* cfg_opt = sim->add_option("--config", sim_config, "design JSON");
    auto* grid_opt = sim->add_option("--grid", so.grid, "preset grid: paper");
    cfg_opt->excludes(grid_opt);
    sim->add_flag("--desk", so.desk, "desk scale: 50 replications per cell");
    auto* seed_opt = sim->add_option("--seed", sim_seed, "root seed");
    auto* reps_opt = sim->add_option("--reps", sim_reps, "replications per cell");
    sim->add_flag("--details", so.details, "embed per-replication records in report.json");
    sim->add_option("--threads", so.threads, "worker threads (default: RGMM_THREADS or all cores)");
    sim->add_option("--out", so.out, "output directory")->required();

    AnalyzeOptions ao;
    std::string a_theta, a_data, a_labeled, sweep;
    auto* an = app.add_subcommand("analyze", "Limit contraction matrices and finite-sample Jacobians");
    auto* th_opt = an->add_option("--theta", a_theta, "theta JSON");
    auto* pre_opt = an->add_option("--preset", ao.preset, "paper1d");
    th_opt->excludes(pre_opt);
    an->add_option("--data", a_data, "unlabeled CSV for the finite-sample Jacobian of F");
    an->add_option("--labeled", a_labeled, "labeled CSV for the finite-sample Jacobian of F*");
    an->add_option("--kappa-sweep", sweep, "comma-separated kappa values");
    an->add_option("--out", ao.out, "output directory")->required();

    ScoreOptions sc;
    auto* score = app.add_subcommand("score", "Posterior scores, AUC and false positives at full recall per group");
    score->add_option("--theta", sc.theta, "theta JSON")->required();
    score->add_option("--data", sc.data, "CSV with columns group_id,x1..xp,label")->required();
    score->add_option("--out", sc.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    if (fit->parsed()) {
        if (!labeled.empty()) fo.labeled = labeled;
        if (!truth.empty()) fo.truth = truth;
        return guarded([&] { return cmd_fit(fo); });
    }
    if (sim->parsed()) {
        if (!sim_config.empty()) so.config = sim_config;
        if (seed_opt->count()) so.seed = sim_seed;
        if (reps_opt->count()) so.reps = sim_reps;
        return guarded([&] { return cmd_simulate(so); });
    }
    if (an->parsed()) {
        if (!a_theta.empty()) ao.theta = a_theta;
        if (!a_data.empty()) ao.data = a_data;
        if (!a_labeled.empty()) ao.labeled = a_labeled;
        return guarded([&] {
            if (!sweep.empty()) ao.kappas = parse_list(sweep);
            return cmd_analyze(ao);
        });
    }
    return guarded([&] { return cmd_score(sc); });
}
