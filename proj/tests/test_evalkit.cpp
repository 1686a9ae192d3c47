#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "raregmm/evalkit.hpp"

using namespace rgmm;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return num / pairs;
}

int brute_fp(const std::vector<double>& s, const std::vector<int>& y) {
    // Largest candidate threshold that still captures every positive.
    double best = -std::numeric_limits<double>::infinity();
    for (double c : s) {
        bool all = true;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (y[i] == 1 && s[i] < c) all = false;
        if (all) best = std::max(best, c);
    }
    int fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (y[i] == 0 && s[i] >= best) ++fp;
    return fp;
}

}  // namespace

TEST(Auc, SmallExamples) {
    EXPECT_EQ(auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
    EXPECT_EQ(auc({0.5, 0.5, 0.5}, {1, 0, 0}), 0.5);
    EXPECT_EQ(auc({0.9, 0.4, 0.35, 0.8}, {1, 0, 1, 0}), 0.5);
    EXPECT_THROW(auc({0.1, 0.2}, {1, 1}), EvalError);
    EXPECT_THROW(auc({0.1}, {1, 0}), EvalError);
    EXPECT_THROW(auc({0.1, 0.2}, {1, 2}), EvalError);
}

TEST(Auc, MatchesPairEnumerationWithTies) {
    std::mt19937_64 g(1);
    std::uniform_int_distribution<int> level(0, 4), bit(0, 1);
    for (int rep = 0; rep < 2000; ++rep) {
        const int n = 2 + rep % 11;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            s[i] = 0.25 * level(g);
            y[i] = bit(g);
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_EQ(auc(s, y), brute_auc(s, y));
    }
}

TEST(Auc, InvariantUnderMonotoneTransformAndComplement) {
    std::mt19937_64 g(2);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s(40), t(40);
    std::vector<int> y(40), ny(40);
    for (int i = 0; i < 40; ++i) {
        s[i] = u(g);
        t[i] = std::exp(3 * s[i]) - 7;
        y[i] = i % 3 == 0;
        ny[i] = 1 - y[i];
    }
    EXPECT_DOUBLE_EQ(auc(s, y), auc(t, y));
    EXPECT_NEAR(auc(s, y) + auc(s, ny), 1.0, 1e-15);
}

TEST(FpAtFullRecall, Examples) {
    EXPECT_EQ(fp_at_full_recall({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 0);
    EXPECT_EQ(fp_at_full_recall({0.05, 0.8, 0.2, 0.1}, {1, 0, 0, 0}), 3);
    EXPECT_EQ(fp_at_full_recall({0.5, 0.5, 0.1}, {1, 0, 0}), 1);
    EXPECT_THROW(fp_at_full_recall({0.1, 0.2}, {0, 0}), EvalError);
}

TEST(FpAtFullRecall, MatchesThresholdSweepAndKeepsFullRecall) {
    std::mt19937_64 g(3);
    std::uniform_int_distribution<int> level(0, 5), bit(0, 1);
    for (int rep = 0; rep < 2000; ++rep) {
        const int n = 1 + rep % 12;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            s[i] = level(g) / 5.0;
            y[i] = bit(g);
        }
        y[0] = 1;
        EXPECT_EQ(fp_at_full_recall(s, y), brute_fp(s, y));
    }
}

TEST(EvaluateGroups, AveragesAndSkips) {
    std::vector<ScoredGroup> gs{
        {"a", {0.9, 0.1}, {1, 0}},
        {"b", {0.2, 0.6, 0.4}, {1, 0, 0}},
        {"c", {0.3, 0.2}, {0, 0}},
        {"d", {0.7, 0.8}, {1, 1}},
    };
    const EvalSummary s = evaluate_groups(gs);
    EXPECT_DOUBLE_EQ(s.mean_auc, 0.5);
    EXPECT_EQ(s.skipped_auc, 2);
    EXPECT_EQ(s.skipped_fp, 1);
    // FP per group with positives: a 0, b 2, d 0.
    EXPECT_EQ(s.median_fp, 0.0);
    EXPECT_EQ(s.per_group.size(), 4u);
    EXPECT_THROW(evaluate_groups({}), EvalError);
    EXPECT_THROW(evaluate_groups({{"c", {0.3, 0.2}, {0, 0}}}), EvalError);
    EXPECT_EQ(median({1, 4, 2, 3}), 2.5);
}

TEST(Scoring, PaperMixtureAucMatchesClosedForm) {
    // Scoring with the true posterior is monotone in x, so AUC = P(X0 > X1) = Phi(3 / sqrt 2).
    std::mt19937_64 g(4);
    const Theta t(0.3, Vector::Constant(1, 1.5), Matrix::Identity(1, 1), Vector::Constant(1, -1.5),
                  Matrix::Identity(1, 1));
    std::normal_distribution<double> n(0, 1);
    Matrix x(20000, 1);
    std::vector<int> y(20000);
    for (int i = 0; i < 20000; ++i) {
        y[i] = i % 2;
        x(i, 0) = (y[i] ? -1.5 : 1.5) + n(g);
    }
    const double a = auc(score_points(x, t), y);
    EXPECT_NEAR(a, oracle::normal_cdf(3.0 / std::sqrt(2.0)), 0.005);
}
