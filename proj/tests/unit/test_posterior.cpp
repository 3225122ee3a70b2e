#include <gtest/gtest.h>

#include <cmath>

#include "randreg/harness/experiment.hpp"
#include "randreg/posterior.hpp"
#include "test_support.hpp"

using namespace randreg;

namespace {

Eigen::MatrixXd random_psd(gen::Source& src, Eigen::Index m, Eigen::Index rank) {
    const Eigen::MatrixXd a = src.points(m, rank, -1.0, 1.0);
    return a * a.transpose();
}

// sigma^2 at every grid index from a dense inverse of K_t + r I.
Eigen::VectorXd dense_variances(const Eigen::MatrixXd& k, const std::vector<std::size_t>& pts, double r) {
    const auto t = static_cast<Eigen::Index>(pts.size());
    const Eigen::Index m = k.rows();
    Eigen::VectorXd out = k.diagonal();
    if (t == 0) return out;
    Eigen::MatrixXd kt(t, t), cross(t, m);
    for (Eigen::Index a = 0; a < t; ++a) {
        for (Eigen::Index b = 0; b < t; ++b) kt(a, b) = k(pts[a], pts[b]);
        cross.row(a) = k.row(pts[a]);
    }
    kt.diagonal().array() += r;
    const Eigen::MatrixXd inv = kt.inverse();
    for (Eigen::Index i = 0; i < m; ++i) out(i) -= cross.col(i).dot(inv * cross.col(i));
    return out;
}

double direct_logdet(const Eigen::MatrixXd& k, const std::vector<std::size_t>& pts, double r) {
    const auto t = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(t, t);
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = 0; j < t; ++j) a(i, j) += k(pts[i], pts[j]) / r;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    return es.eigenvalues().array().log().sum();
}

ConfidenceParams conf(double delta, double sigma = 1.0, double alpha = 1.0, double lambda0 = 1.0) {
    ConfidenceParams c;
    c.delta = delta;
    c.sigma_loss = sigma;
    c.alpha = alpha;
    c.lambda0 = lambda0;
    return c;
}

}  // namespace

TEST(Posterior, FirstUpdateScalarSchur) {
    PosteriorState s(GridKernel(Eigen::MatrixXd::Identity(2, 2)), 1.0);
    EXPECT_EQ(s.variance(0), 1.0);
    s.update(0);
    EXPECT_NEAR(s.cholesky()(0, 0), std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(s.variance(0), 0.5, 1e-15);
    EXPECT_NEAR(s.cached_variance(0), 0.5, 1e-15);
    EXPECT_NEAR(s.logdet(), std::log(2.0), 1e-15);
}

TEST(Posterior, OrthogonalPointKeepsPriorVariance) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(3, 3);
    k.diagonal() << 1.0, 2.0, 3.0;
    k(0, 1) = k(1, 0) = 0.5;
    PosteriorState s(GridKernel(k), 0.3);
    s.update(0);
    s.update(1);
    EXPECT_EQ(s.variance(2), 3.0);
    EXPECT_EQ(s.cached_variance(2), 3.0);
}

TEST(Posterior, RepeatedVisitLaw) {
    for (double kappa2 : {0.25, 1.0, 4.0}) {
        for (double r : {0.1, 1.0, 2.5}) {
            Eigen::MatrixXd k(2, 2);
            k << kappa2, 0.3 * kappa2, 0.3 * kappa2, 1.0;
            PosteriorState s(GridKernel(k), r);
            for (int n = 1; n <= 1000; ++n) {
                s.update(0);
                if (n == 1 || n == 10 || n == 100 || n == 1000) {
                    const double law = kappa2 * r / (r + kappa2 * n);
                    EXPECT_NEAR(s.variance(0), law, 1e-10);
                    EXPECT_NEAR(s.cached_variance(0), law, 1e-10);
                }
            }
        }
    }
}

TEST(Posterior, IncrementalMatchesDenseOracle) {
    gen::Source src(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index m = 10 + src.integer(0, 20);
        const Eigen::MatrixXd k = random_psd(src, m, src.integer(1, 12));
        const double r = src.uniform(0.05, 2.0);
        PosteriorState s(GridKernel(k), r);
        for (int t = 0; t < 32; ++t) {
            s.update(static_cast<std::size_t>(src.integer(0, static_cast<int>(m) - 1)));
            const Eigen::VectorXd oracle = dense_variances(k, s.points(), r);
            for (int p = 0; p < 10; ++p) {
                const auto i = static_cast<std::size_t>(src.integer(0, static_cast<int>(m) - 1));
                EXPECT_NEAR(s.variance(i), std::max(0.0, oracle(i)), 1e-8);
                EXPECT_NEAR(s.cached_variance(i), std::max(0.0, oracle(i)), 1e-8);
            }
            const Eigen::MatrixXd l = s.cholesky();
            const Eigen::MatrixXd direct = s.regularized_gram();
            EXPECT_LE((l * l.transpose() - direct).norm() / direct.norm(), 1e-8);
            EXPECT_NEAR(s.logdet(), direct_logdet(k, s.points(), r), 1e-8 * std::max(1.0, std::abs(s.logdet())));
        }
    }
}

TEST(Posterior, VarianceBoundedAndMonotone) {
    gen::Source src(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index m = 15;
        const Eigen::MatrixXd k = random_psd(src, m, 6);
        PosteriorState s(GridKernel(k), src.uniform(0.01, 1.0));
        Eigen::VectorXd prev = s.grid_variances();
        for (int t = 0; t < 60; ++t) {
            s.update(static_cast<std::size_t>(src.integer(0, m - 1)));
            const Eigen::VectorXd v = s.grid_variances();
            for (Eigen::Index i = 0; i < m; ++i) {
                EXPECT_GE(v(i), 0.0);
                EXPECT_LE(v(i), k(i, i) + 1e-12);
                EXPECT_LE(v(i), prev(i) + 1e-10);
            }
            prev = v;
        }
    }
}

TEST(Posterior, GridCacheAgreesWithTriangularSolve) {
    gen::Source src(3);
    const Eigen::MatrixXd k = random_psd(src, 40, 40);
    PosteriorState cached(GridKernel(k), 0.2, true), plain(GridKernel(k), 0.2, false);
    for (int t = 0; t < 200; ++t) {
        const auto i = static_cast<std::size_t>(src.integer(0, 39));
        cached.update(i);
        plain.update(i);
    }
    const Eigen::VectorXd a = cached.grid_variances(), b = plain.grid_variances();
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Posterior, BreakdownReportsDiagnostics) {
    Eigen::MatrixXd k(2, 2);
    k << 1.0, 2.0, 2.0, 1.0;
    PosteriorState s(GridKernel(k), 0.1);
    s.update(0);
    try {
        s.update(1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
        EXPECT_NE(std::string(e.what()).find("Schur complement"), std::string::npos);
    }
}

TEST(Posterior, UnregisteredIndex) {
    PosteriorState s(GridKernel(Eigen::MatrixXd::Identity(3, 3)), 1.0);
    EXPECT_THROW(s.update(3), Error);
    EXPECT_THROW((void)s.variance(7), Error);
    EXPECT_THROW(PosteriorState(GridKernel(Eigen::MatrixXd::Identity(3, 3)), 0.0), Error);
}

TEST(Beta, EmptyLogDet) {
    PosteriorState s(GridKernel(Eigen::MatrixXd::Identity(2, 2)), 1.0);
    const ConfidenceParams c = conf(0.1, 0.5, 2.0, 0.7);
    EXPECT_NEAR(beta(s, c, 0.7, 0.0), std::sqrt(2 * 0.25 / (2.0 * 0.7) * std::log(10.0)), 1e-15);
    EXPECT_EQ(beta(s, conf(1.0), 1.0, 0.0), 0.0);
    EXPECT_EQ(error_halfwidth(s, conf(1.0), 1.0, 0.0, 0), 0.0);
}

TEST(Beta, MatchesFormulaAfterUpdates) {
    gen::Source src(4);
    const Eigen::MatrixXd k = random_psd(src, 12, 5);
    const ConfidenceParams c = conf(0.05, 0.3, 1.5, 0.48);
    PosteriorState s(GridKernel(k), c.ridge());
    for (int t = 0; t < 25; ++t) s.update(static_cast<std::size_t>(src.integer(0, 11)));
    const double ld = direct_logdet(k, s.points(), c.ridge());
    const double lambda_t = 3.1, d0 = 0.8;
    const double expected = std::sqrt(lambda_t / c.lambda0) * d0 +
                            std::sqrt(2 * c.sigma_loss * c.sigma_loss / (c.alpha * c.lambda0) * (0.5 * ld + std::log(1 / c.delta)));
    EXPECT_NEAR(beta(s, c, lambda_t, d0), expected, 1e-9);
}

TEST(Beta, MonotoneInArguments) {
    gen::Source src(5);
    const Eigen::MatrixXd k = random_psd(src, 8, 8);
    PosteriorState s(GridKernel(k), 1.0);
    double prev_info = beta(s, conf(0.1), 1.0, 0.2);
    for (int t = 0; t < 20; ++t) {
        s.update(static_cast<std::size_t>(src.integer(0, 7)));
        const double b = beta(s, conf(0.1), 1.0, 0.2);
        EXPECT_GT(b, prev_info);
        prev_info = b;
    }
    EXPECT_LT(beta(s, conf(0.1), 1.0, 0.2), beta(s, conf(0.1), 1.0, 0.3));
    EXPECT_GT(beta(s, conf(0.01), 1.0, 0.2), beta(s, conf(0.1), 1.0, 0.2));
}

TEST(Beta, Errors) {
    PosteriorState s(GridKernel(Eigen::MatrixXd::Identity(2, 2)), 1.0);
    EXPECT_THROW((void)beta(s, conf(0.0), 1.0, 0.0), Error);
    EXPECT_THROW((void)beta(s, conf(-0.5), 1.0, 0.0), Error);
    EXPECT_THROW((void)beta(s, conf(0.1, 1.0, 1.0, 2.0), 1.0, 0.0), Error);
}

TEST(Beta, FiniteDomainLogDetBound) {
    gen::Source src(6);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index m = 3 + src.integer(0, 10);
        const Eigen::MatrixXd k = random_psd(src, m, m);
        const double r = src.uniform(0.05, 2.0);
        PosteriorState s(GridKernel(k), r);
        const int t_max = 5 + src.integer(0, 100);
        for (int t = 0; t < t_max; ++t) s.update(static_cast<std::size_t>(src.integer(0, m - 1)));
        const Eigen::MatrixXd kt = s.regularized_gram() - r * Eigen::MatrixXd::Identity(t_max, t_max);
        // At most m non-zero eigenvalues of K_t.
        const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(kt).eigenvalues();
        int nonzero = 0;
        for (Eigen::Index i = 0; i < ev.size(); ++i) nonzero += ev(i) > 1e-9 * ev.maxCoeff();
        EXPECT_LE(nonzero, m);
        EXPECT_LE(s.logdet(), static_cast<double>(m) * std::log(1.0 + kt.trace() / r) + 1e-9);
    }
}

TEST(Beta, TailBoundInitDistance) {
    ConfidenceParams c = conf(0.1);
    c.tail_constant = 0.4;
    const double s = std::log(M_PI * M_PI * 16.0 / (6.0 * 0.1));
    EXPECT_NEAR(tail_bound_init_distance(c, 3), 0.4 * (1 + std::sqrt(s)), 1e-14);
    EXPECT_GT(tail_bound_init_distance(c, 100), tail_bound_init_distance(c, 3));
}

TEST(Posterior, DominationTransfer) {
    const DomainGrid grid = DomainGrid::linspace(25);
    const ModelSpec model = ModelSpec::linear_feature(RandomFourierFeatures::make(15, 1, 0.2, 1.0, 3), 1);
    const InducedKernel ik = InducedKernel::exact(model, KernelSpec::linear(), grid);
    const ReferenceKernelSpec ref{KernelSpec::matern(2.5, 0.2), std::nullopt};
    const Eigen::MatrixXd kr = reference_gram(ref, grid);
    const auto b = smallest_certified_scale(kr, ik.gram());
    ASSERT_TRUE(b.has_value());
    ASSERT_TRUE(certify_domination(kr, ik.gram(), *b).pass);
    const ReferenceKernelSpec scaled{ref.kernel, *b};
    gen::Source src(7);
    PosteriorState upper(GridKernel::from_reference(scaled, grid), 0.5), lower(GridKernel::from_induced(ik), 0.5);
    for (int t = 0; t < 40; ++t) {
        const auto i = static_cast<std::size_t>(src.integer(0, 24));
        upper.update(i);
        lower.update(i);
        for (std::size_t p = 0; p < grid.size(); ++p) {
            // Tolerance scaled to the grid certificate's own slack.
            EXPECT_GE(upper.variance(p), lower.variance(p) - 1e-8 * kr.trace() * (*b) * (*b));
        }
    }
}

TEST(Coverage, RealizableEnsembleMeetsNominalLevel) {
    harness::Overrides ov;
    ov.force_oracle_diagnostics = true;
    const auto ctx = harness::load_context(std::string(RANDREG_CONFIG_DIR) + "/coverage.ini", ov);
    ASSERT_EQ(ctx.replications, 200u);
    ASSERT_EQ(ctx.horizon, 200u);
    ASSERT_EQ(ctx.conf.delta, 0.1);
    const auto results = harness::run_replications(ctx, 1);
    std::size_t covered = 0;
    for (const auto& r : results) {
        bool all = true;
        for (const auto& row : r.rows) all = all && row.covered.value_or(false) && row.covered_prev.value_or(false);
        covered += all;
    }
    EXPECT_GE(static_cast<double>(covered) / static_cast<double>(results.size()), 0.9);
}
