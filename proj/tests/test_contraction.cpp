#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "raregmm/contraction.hpp"
#include "raregmm/simlab.hpp"

using namespace rgmm;

namespace {

double max_rel(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff() / (1.0 + b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(FiniteDifference, ExactOnQuadraticMap) {
    const PackedMap f = [](const Vector& v) {
        Vector out(2);
        out << v(0) * v(0) + 3 * v(1), v(0) * v(1);
        return out;
    };
    Vector x(2);
    x << 2.0, -1.0;
    Matrix ref(2, 2);
    ref << 4, 3, -1, 2;
    EXPECT_LT((central_difference_jacobian(f, x) - ref).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FiniteDifference, NamesFailingCoordinate) {
    const PackedMap f = [](const Vector& v) -> Vector {
        if (v(1) > 1.0) throw DomainError("out of domain");
        return v;
    };
    Vector x(3);
    x << 0.0, 1.0, 0.0;
    try {
        central_difference_jacobian(f, x);
        FAIL() << "expected NumericalFailure";
    } catch (const NumericalFailure& e) {
        EXPECT_EQ(e.coordinate(), 1);
    }
}

TEST(AnalyticJacobian, AgreesWithCentralDifferences) {
    std::mt19937_64 g(77);
    for (int rep = 0; rep < 6; ++rep) {
        const int p = 1 + rep % 2;
        const Theta t = oracle::random_theta(p, g);
        const SyntheticSample u = generate_dataset(t.alpha(), t, 300, g);
        const SyntheticSample l = generate_dataset(t.alpha(), t, 80, g);
        const Theta at = oracle::random_theta(p, g);
        for (MappingKind kind : {MappingKind::em, MappingKind::mem}) {
            const LabeledDataSet lab = kind == MappingKind::em ? LabeledDataSet::empty(p) : l.labeled();
            const JacobianReport a = jacobian_analytic(kind, u.unlabeled(), lab, at);
            const JacobianReport f = jacobian_fd(kind, u.unlabeled(), lab, at);
            EXPECT_EQ(a.method, JacobianMethod::analytic);
            EXPECT_LT(max_rel(a.jac, f.jac), 1e-6) << "rep " << rep << " kind " << to_string(kind);
            EXPECT_NEAR(a.spectral_radius, spectral_radius(a.jac), 0.0);
        }
    }
}

TEST(AnalyticJacobian, EmIsMemWithoutLabels) {
    std::mt19937_64 g(4);
    const Theta t = oracle::random_theta(2, g);
    const DataSet d = generate_dataset(0.3, t, 200, g).unlabeled();
    const Matrix a = jacobian_analytic(MappingKind::em, d, LabeledDataSet::empty(2), t).jac;
    const Matrix b = jacobian_analytic(MappingKind::mem, d, LabeledDataSet::empty(2), t).jac;
    EXPECT_EQ(a, b);
}

TEST(RatioIntegrals, PaperSettingClosedForm) {
    const RatioIntegrals r = gaussian_ratio_integrals(paper_theta_1d(0.01));
    const double c = std::exp(9.0);
    EXPECT_NEAR(r.log_c, 9.0, 1e-13);
    EXPECT_NEAR(r.m(0), -4.5, 1e-14);
    EXPECT_NEAR(r.delta_mu1_alpha(0) / (3 * c), 1.0, 1e-13);
    EXPECT_NEAR(r.delta_sigma1_alpha(0, 0) / (-9 * c), 1.0, 1e-13);
}

TEST(RatioIntegrals, MatchAdaptiveQuadrature) {
    std::mt19937_64 g(12);
    for (int rep = 0; rep < 10; ++rep) {
        const Theta t = oracle::random_theta(1, g);
        const RatioIntegrals r = gaussian_ratio_integrals(t);
        const auto q = oracle::ratio_quadrature_1d(t.mu(0)(0), t.sigma(0)(0, 0), t.mu(1)(0), t.sigma(1)(0, 0));
        EXPECT_NEAR(std::exp(r.log_c) / q.c, 1.0, 1e-10);
        EXPECT_NEAR(-r.delta_mu1_alpha(0), q.first, 1e-10 * std::abs(q.c));
        EXPECT_NEAR(-r.delta_sigma1_alpha(0, 0), q.second, 1e-10 * std::abs(q.c));
    }
}

TEST(RatioIntegrals, DivergenceIsReported) {
    const Theta t(0.1, Vector::Zero(1), Matrix::Identity(1, 1), Vector::Ones(1), Matrix::Constant(1, 1, 3.0));
    try {
        gaussian_ratio_integrals(t);
        FAIL() << "expected DivergingIntegralError";
    } catch (const DivergingIntegralError& e) {
        EXPECT_NE(std::string(e.what()).find("2*Sigma1^{-1} - Sigma0^{-1}"), std::string::npos);
    }
    EXPECT_THROW(limit_matrix_M(t), DivergingIntegralError);
}

TEST(MomentBlocks, PaperSettingValues) {
    const MomentBlocks mb = gaussian_moment_blocks(paper_theta_1d(0.01));
    EXPECT_NEAR(mb.mu1_sigma0(0, 0), 3.0, 1e-14);
    EXPECT_NEAR(mb.mu1_sigma1(0, 0), 0.0, 1e-14);
    EXPECT_NEAR(mb.sigma1_sigma1(0, 0), 1.0, 1e-14);
    EXPECT_NEAR(mb.sigma1_sigma0(0, 0), 1.0, 1e-14);
    EXPECT_NEAR(mb.sigma1_mu0(0, 0), 0.0, 1e-14);
    EXPECT_NEAR(mb.sigma1_mu1(0, 0), 0.0, 1e-14);
}

TEST(MomentBlocks, MatchGaussHermite) {
    std::mt19937_64 g(31);
    for (int rep = 0; rep < 8; ++rep) {
        const int p = 1 + rep % 2;
        const Theta t = oracle::random_theta(p, g);
        const MomentBlocks mb = gaussian_moment_blocks(t);
        const oracle::DeltaTerms q = oracle::delta_gauss_hermite(t, p == 1 ? 200 : 30);
        for (int k = 0; k < 2; ++k) {
            EXPECT_LT(max_rel(mb.mu1_sigma(k), q.mu1_sigma[k]), 1e-10);
            EXPECT_LT(max_rel(mb.sigma1_mu(k), q.sigma1_mu[k]), 1e-10);
            EXPECT_LT(max_rel(mb.sigma1_sigma(k), q.sigma1_sigma[k]), 1e-10);
        }
    }
}

TEST(MomentBlocks, MatchMonteCarlo) {
    std::mt19937_64 g(8);
    const Theta t = oracle::random_theta(2, g);
    const MomentBlocks mb = gaussian_moment_blocks(t);
    const oracle::DeltaMonteCarlo mc = oracle::delta_monte_carlo(t, 400000, 99);
    const auto within = [](const Matrix& exact, const Matrix& mean, const Matrix& se) {
        return ((exact - mean).cwiseAbs().array() <= 4.0 * se.array() + 1e-12).all();
    };
    for (int k = 0; k < 2; ++k) {
        EXPECT_TRUE(within(mb.mu1_sigma(k), mc.mean.mu1_sigma[k], mc.se.mu1_sigma[k]));
        EXPECT_TRUE(within(mb.sigma1_mu(k), mc.mean.sigma1_mu[k], mc.se.sigma1_mu[k]));
        EXPECT_TRUE(within(mb.sigma1_sigma(k), mc.mean.sigma1_sigma[k], mc.se.sigma1_sigma[k]));
    }
}

TEST(LimitMatrix, PaperSettingEntries) {
    const LimitMatrix m = limit_matrix_M(paper_theta_1d(0.01));
    const double c = std::exp(9.0);
    Matrix ref(5, 5);
    ref << 1, 0, 0, 0, 0,  //
        3, 0, 0, 0, 0,     //
        -9, 0, 0, 0, 0,    //
        3 * c, -1, 3, 1, 0,  //
        -9 * c, 0, 1, 0, -1;
    EXPECT_LT(max_rel(m.mat, ref), 1e-13);
    EXPECT_EQ(m.kind, LimitKind::M);
}

TEST(LimitMatrix, HasUnitEigenvalue) {
    std::mt19937_64 g(2);
    for (int rep = 0; rep < 10; ++rep) {
        const Theta t = oracle::random_theta(1 + rep % 2, g);
        const LimitMatrix m = limit_matrix_M(t);
        const Matrix mi = m.mat - Matrix::Identity(m.mat.rows(), m.mat.cols());
        EXPECT_EQ(mi.row(0).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ(mi.determinant(), 0.0);
        EXPECT_GE(spectral_radius(m.mat), 1.0 - 1e-10);
    }
}

TEST(LimitMatrix, MstarScalesAndDropsMinorAlphaColumn) {
    std::mt19937_64 g(6);
    const Theta t = oracle::random_theta(2, g);
    const LimitMatrix m = limit_matrix_M(t);
    for (double kappa : {0.0, 1.0 / 3.0, 1.0, 3.0}) {
        const LimitMatrix ms = limit_matrix_Mstar(t, kappa);
        for (Block r : kBlocks)
            for (Block c : kBlocks) {
                const Matrix expect = (r == Block::mu1 || r == Block::sigma1) && c == Block::alpha
                                          ? Matrix::Zero(ms.block(r, c).rows(), 1)
                                          : Matrix(m.block(r, c) * (1.0 / (1.0 + kappa)));
                EXPECT_EQ(ms.block(r, c), expect);
            }
    }
    EXPECT_THROW(limit_matrix_Mstar(t, -1.0), DomainError);
}

TEST(BlockCheck, ScalesWithKappaAndThresholdIsTight) {
    std::mt19937_64 g(10);
    for (int rep = 0; rep < 5; ++rep) {
        const Theta t = oracle::random_theta(1 + rep % 2, g);
        const double r0 = block_spectral_radius_check(t, 0.0);
        for (double kappa : {1.0 / 3.0, 1.0, 3.0}) {
            EXPECT_NEAR(block_spectral_radius_check(t, kappa), r0 / (1 + kappa), 1e-12 * r0);
        }
        const double k = min_contracting_kappa(t);
        EXPECT_LT(block_spectral_radius_check(t, k), 1.0);
        // The identity block pins the radius at >= 1 for kappa = 0, so the
        // threshold is max(1, r0) - 1.
        EXPECT_NEAR(k, std::max(1.0, r0) - 1.0, 1e-8 * std::max(1.0, r0));
        if (r0 > 1.0 + 1e-6) EXPECT_GE(block_spectral_radius_check(t, k * (1 - 1e-6)), 1.0);
    }
}

TEST(Helpers, ScaleMinorAlphaColumnAndBlockDeviation) {
    const ThetaLayout lay{1};
    const Matrix ones = Matrix::Ones(5, 5);
    const Matrix s = scale_minor_alpha_column(ones, lay, 0.1);
    EXPECT_EQ(s(3, 0), 0.1);
    EXPECT_EQ(s(4, 0), 0.1);
    EXPECT_EQ(s(2, 0), 1.0);
    EXPECT_EQ(s(3, 1), 1.0);

    Matrix ref = Matrix::Zero(5, 5);
    ref(0, 0) = 2.0;
    Matrix a = ref;
    a(0, 0) = 2.2;
    const Matrix dev = blockwise_relative_deviation(a, ref, 1);
    EXPECT_NEAR(dev(0, 0), 0.1, 1e-15);
    EXPECT_TRUE(std::isnan(dev(1, 1)));
}
