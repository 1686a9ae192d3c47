#include <gtest/gtest.h>

#include <unistd.h>

#include <random>
#include <sstream>

#include "raregmm/cli.hpp"

using namespace rgmm;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("raregmm_" + std::to_string(::getpid()) + "_" +
               ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = dir / name;
        std::ofstream(p) << text;
        return p;
    }

    fs::path dir;
};

std::string unlabeled_csv(const Matrix& x) {
    std::string s;
    for (Eigen::Index j = 0; j < x.cols(); ++j) s += (j ? ",x" : "x") + std::to_string(j + 1);
    s += '\n';
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) s += (j ? "," : "") + io::fmt(x(i, j), "%.17g");
        s += '\n';
    }
    return s;
}

std::string labeled_csv(const Matrix& x, const Vector& y) {
    std::string s = "x1,y\n";
    for (Eigen::Index i = 0; i < x.rows(); ++i) s += io::fmt(x(i, 0), "%.17g") + ',' + std::to_string(int(y(i))) + '\n';
    return s;
}

int quiet(const std::function<int()>& f) {
    std::ostringstream err;
    return cli::guarded(f, err);
}

}  // namespace

using IoTest = TempDir;
using CliTest = TempDir;

TEST_F(IoTest, CsvErrorsNameTheLine) {
    const fs::path bad = write("bad.csv", "x1,x2\n1,2\n\n3\n");
    try {
        io::read_unlabeled_csv(bad);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
    }
    const fs::path nan = write("nan.csv", "x1\n1\nabc\n");
    try {
        io::read_unlabeled_csv(nan);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
    EXPECT_THROW(io::read_unlabeled_csv(write("empty.csv", "")), ParseError);
    EXPECT_THROW(io::read_labeled_csv(write("lab.csv", "x1,y\n0.5,2\n")), ParseError);
    EXPECT_THROW(io::read_labeled_csv(write("noy.csv", "x1,x2\n0.5,2\n")), SchemaError);
    EXPECT_EQ(io::read_unlabeled_csv(write("hdr.csv", "x1,x2\n")).rows(), 0);
}

TEST_F(IoTest, ThetaJsonRoundTripIsExact) {
    std::mt19937_64 g(1);
    std::normal_distribution<double> n(0, 1);
    Matrix s(2, 2);
    s << 1.3, 0.2, 0.2, 0.7;
    const Theta t(0.123456789, Vector::Constant(2, n(g)), s, Vector::Constant(2, n(g)), 2 * s);
    const fs::path p = write("theta.json", io::theta_to_json(t).dump(2));
    EXPECT_EQ(io::read_theta(p).pack(), t.pack());

    io::json j = io::theta_to_json(t);
    j["mu0"] = {9.0, 9.0};
    EXPECT_THROW(io::theta_from_json(j), SchemaError);
    j = io::theta_to_json(t);
    j.erase("packed");
    EXPECT_EQ(io::theta_from_json(j).pack(), t.pack());
    j["p"] = 3;
    EXPECT_THROW(io::theta_from_json(j), SchemaError);
    EXPECT_THROW(io::read_theta(write("broken.json", "{")), ParseError);
}

TEST_F(IoTest, DesignJson) {
    SimDesign d = SimDesign::desk();
    d.alphas = {0.3};
    d.reps = 7;
    const SimDesign back = io::design_from_json(io::design_to_json(d));
    EXPECT_EQ(back.alphas, d.alphas);
    EXPECT_EQ(back.reps, 7);
    EXPECT_EQ(back.theta_true.pack(), d.theta_true.pack());
    EXPECT_THROW(io::design_from_json(io::json{{"bogus", 1}}), ConfigError);
    EXPECT_THROW(io::design_from_json(io::json{{"alphas", {1.5}}}), ConfigError);
    EXPECT_THROW(io::design_from_json(io::json{{"reps", "many"}}), ConfigError);
}

TEST_F(IoTest, AtomicWriteLeavesNoTemp) {
    io::write_atomic(dir / "a" / "b.txt", "hello");
    EXPECT_EQ(io::read_file(dir / "a" / "b.txt"), "hello");
    EXPECT_FALSE(fs::exists(dir / "a" / "b.txt.tmp"));
}

TEST_F(CliTest, FitRecoversSeparatedMixture) {
    std::mt19937_64 g(3);
    const Theta truth = paper_theta_1d(0.3);
    const SyntheticSample s = generate_dataset(0.3, truth, 5000, g);
    cli::FitOptions o;
    o.unlabeled = write("u.csv", unlabeled_csv(s.x));
    o.init = "quantile_split";
    o.alpha_guess = 0.3;
    o.out = dir / "fit";
    std::ostringstream log;
    ASSERT_EQ(quiet([&] { return cli::cmd_fit(o, log); }), cli::kOk);
    const Theta hat = align_components(io::read_theta(o.out / "theta_hat.json"), truth);
    EXPECT_LT(max_abs_diff(hat.pack(), truth.pack()), 0.1);
    EXPECT_TRUE(fs::exists(o.out / "trace.csv"));
    const auto status = io::json::parse(io::read_file(o.out / "fit.json"));
    EXPECT_EQ(status["termination"], "tolerance_met");

    o.max_iter = 1;
    EXPECT_EQ(quiet([&] { return cli::cmd_fit(o, log); }), cli::kMaxIter);
}

TEST_F(CliTest, FitLabeledOnlyAndInputErrors) {
    std::mt19937_64 g(4);
    const SyntheticSample s = generate_dataset(0.3, paper_theta_1d(0.3), 400, g);
    cli::FitOptions o;
    o.unlabeled = write("u.csv", "x1\n");
    o.labeled = write("l.csv", labeled_csv(s.x, s.y));
    o.init = "labeled_moments";
    o.out = dir / "fit";
    std::ostringstream log;
    ASSERT_EQ(quiet([&] { return cli::cmd_fit(o, log); }), cli::kOk);
    EXPECT_LE(io::json::parse(io::read_file(o.out / "fit.json"))["n_iter"].get<int>(), 2);

    o.unlabeled = write("empty.csv", "");
    EXPECT_EQ(quiet([&] { return cli::cmd_fit(o, log); }), cli::kParse);
    o.unlabeled = write("u2.csv", "x1,x2\n1,2\n");
    EXPECT_EQ(quiet([&] { return cli::cmd_fit(o, log); }), cli::kSchema);
    o.unlabeled = write("u.csv", "x1\n");
    o.init = "nonsense";
    EXPECT_EQ(quiet([&] { return cli::cmd_fit(o, log); }), cli::kConfig);
}

TEST_F(CliTest, SimulateIsByteReproducible) {
    const fs::path cfg = write("design.json", R"({"n_total": 2000, "alphas": [0.3, 0.1], "label_fracs": [0, 0.25],
                                                 "reps": 2, "seed": 9})");
    cli::SimulateOptions o;
    o.config = cfg;
    std::ostringstream log;
    o.out = dir / "a";
    ASSERT_EQ(quiet([&] { return cli::cmd_simulate(o, log); }), cli::kOk);
    o.out = dir / "b";
    o.threads = 2;
    ASSERT_EQ(quiet([&] { return cli::cmd_simulate(o, log); }), cli::kOk);
    const std::string a = io::read_file(dir / "a" / "cells.csv");
    EXPECT_EQ(a, io::read_file(dir / "b" / "cells.csv"));
    EXPECT_EQ(a.substr(0, a.find('\n')), "alpha,label_frac,rmse,mean_rho,mean_n_iter,n_failed");
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 5);

    o.config = write("bad.json", R"({"reps": 0})");
    EXPECT_EQ(quiet([&] { return cli::cmd_simulate(o, log); }), cli::kConfig);
    o.config.reset();
    EXPECT_EQ(quiet([&] { return cli::cmd_simulate(o, log); }), cli::kConfig);
}

TEST_F(CliTest, AnalyzePresetAndDivergence) {
    cli::AnalyzeOptions o;
    o.preset = "paper1d";
    o.kappas = {0.0, 1.0 / 3.0, 1.0};
    o.out = dir / "an";
    std::ostringstream log;
    ASSERT_EQ(quiet([&] { return cli::cmd_analyze(o, log); }), cli::kOk);
    const auto j = io::json::parse(io::read_file(o.out / "summary.json"));
    EXPECT_GE(j["M"]["spectral_radius"].get<double>(), 1.0 - 1e-10);
    const auto& sw = j["kappa_sweep"];
    for (std::size_t i = 0; i < 3; ++i) {
        const double k = sw[i]["kappa"].get<double>();
        EXPECT_EQ(sw[i]["block_check_radius"].get<double>(), sw[0]["block_check_radius"].get<double>() / (1 + k));
    }
    EXPECT_TRUE(fs::exists(o.out / "M.csv"));

    const Theta div(0.1, Vector::Zero(1), Matrix::Identity(1, 1), Vector::Ones(1), Matrix::Constant(1, 1, 3.0));
    o.preset.clear();
    o.theta = write("div.json", io::theta_to_json(div).dump());
    std::ostringstream err;
    EXPECT_EQ(cli::guarded([&] { return cli::cmd_analyze(o, log); }, err), cli::kDiverging);
    EXPECT_NE(err.str().find("2*Sigma1^{-1} - Sigma0^{-1}"), std::string::npos);
}

TEST_F(CliTest, AnalyzeWithData) {
    std::mt19937_64 g(5);
    const Theta truth = paper_theta_1d(0.2);
    const SyntheticSample s = generate_dataset(0.2, truth, 500, g);
    const SyntheticSample l = generate_dataset(0.2, truth, 100, g);
    cli::AnalyzeOptions o;
    o.theta = write("t.json", io::theta_to_json(truth).dump());
    o.data = write("u.csv", unlabeled_csv(s.x));
    o.labeled = write("l.csv", labeled_csv(l.x, l.y));
    o.out = dir / "an";
    std::ostringstream log;
    ASSERT_EQ(quiet([&] { return cli::cmd_analyze(o, log); }), cli::kOk);
    const auto j = io::json::parse(io::read_file(o.out / "summary.json"));
    EXPECT_LT(j["finite_sample"]["F"]["max_abs_analytic_minus_fd"].get<double>(), 1e-5);
    EXPECT_LT(j["finite_sample"]["Fstar"]["max_abs_analytic_minus_fd"].get<double>(), 1e-5);
}

TEST_F(CliTest, ScoreGroups) {
    std::mt19937_64 g(6);
    const Theta truth = paper_theta_1d(0.3);
    std::normal_distribution<double> n(0, 1);
    std::string csv = "group_id,x1,label\n";
    for (int grp = 0; grp < 5; ++grp)
        for (int i = 0; i < 200; ++i) {
            const int y = i % 4 == 0;
            csv += "g" + std::to_string(grp) + ',' + io::fmt((y ? -3.0 : 3.0) + n(g), "%.17g") + ',' +
                   std::to_string(y) + '\n';
        }
    csv += "neg,2.0,0\nneg,2.5,0\n";
    cli::ScoreOptions o;
    o.theta = write("t.json", io::theta_to_json(truth).dump());
    o.data = write("d.csv", csv);
    o.out = dir / "a";
    std::ostringstream log;
    ASSERT_EQ(quiet([&] { return cli::cmd_score(o, log); }), cli::kOk);
    const auto j = io::json::parse(io::read_file(o.out / "summary.json"));
    EXPECT_GE(j["mean_auc"].get<double>(), 0.98);
    EXPECT_EQ(j["skipped_auc"].get<int>(), 1);
    EXPECT_NE(log.str().find("warning"), std::string::npos);
    const std::string first = io::read_file(o.out / "scores.csv");
    ASSERT_EQ(quiet([&] { return cli::cmd_score(o, log); }), cli::kOk);
    EXPECT_EQ(first, io::read_file(o.out / "scores.csv"));

    o.data = write("d2.csv", "group_id,x1,x2,label\na,1,2,0\n");
    EXPECT_EQ(quiet([&] { return cli::cmd_score(o, log); }), cli::kSchema);
}

TEST_F(CliTest, BinaryExitCodes) {
    const std::string exe = RAREGMM_CLI_PATH;
    const auto run = [&](const std::string& args) {
        const int s = std::system((exe + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(s);
    };
    EXPECT_EQ(run("analyze --preset paper1d --out " + (dir / "x").string()), 0);
    EXPECT_EQ(run("fit --unlabeled " + write("e.csv", "").string() + " --out " + (dir / "y").string()), 2);
    EXPECT_NE(run(""), 0);
}
