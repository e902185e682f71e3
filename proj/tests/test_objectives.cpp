#include <cmath>
#include <memory>
#include <numeric>

#include <gtest/gtest.h>

#include "egoprep/datasets.hpp"
#include "egoprep/objectives.hpp"
#include "egoprep/sampling.hpp"
#include "test_support.hpp"

using namespace egoprep;
using namespace egoprep::testing;

namespace {

constexpr int kProbes = 10;

LsqProblem small_lsq(std::uint64_t seed) { return make_lsq(gen_regression(12, 6, 1.0, seed)); }

std::vector<LayerShape> small_mlp_layers() { return {{6, 5, true}, {5, 4, true}}; }

ReluMlp small_mlp(std::uint64_t seed, std::size_t n = 24) {
    const auto data = gen_classification(n, 6, 4, 0.5, seed);
    return ReluMlp(small_mlp_layers(), data.features, data.labels);
}

DeepLinearNet small_linear_net(std::uint64_t seed, std::size_t n = 16) {
    const auto data = gen_linear_net_data(n, seed);
    return DeepLinearNet({{10, 6, false}, {6, 5, false}, {5, 10, false}}, data.a, data.y);
}

MatFacProblem small_matfac(std::uint64_t seed) {
    MatFacProblem p;
    p.d1 = 4;
    p.d2 = 3;
    p.rank = 2;
    for (std::size_t i = 0; i < 7; ++i) p.measurements.push_back(random_matrix(4, 3, derive_seed(seed, {i})));
    p.b = gaussian(7, derive_seed(seed, {99}));
    return p;
}

void expect_fd_agreement(const Objective& f, std::uint64_t seed, double tol, double scale = 1.0) {
    for (int probe = 0; probe < kProbes; ++probe) {
        const Vector theta = gaussian(f.dim(), derive_seed(seed, {static_cast<std::uint64_t>(probe)}), scale);
        const Vector g = f.gradient(theta);
        const Vector fd = fd_gradient(f, theta);
        EXPECT_LE(rel_err(g, fd), tol) << "probe " << probe;
    }
}

void expect_full_batch_matches(const Objective& f, std::uint64_t seed) {
    const Vector theta = gaussian(f.dim(), seed, 0.5);
    const auto full = f.value_grad(theta);
    const auto batch = f.batch_value_grad(theta, all_indices(f.sample_count()));
    EXPECT_NEAR(batch.value, full.value, 1e-10 * (1.0 + std::abs(full.value)));
    EXPECT_LE(norm2(subtract(batch.gradient, full.gradient)), 1e-10 * (1.0 + norm2(full.gradient)));
}

} // namespace

// Least squares ---------------------------------------------------------------

TEST(LeastSquares, ZeroAtGroundTruth) {
    const auto p = small_lsq(1);
    const auto vg = lsq_value_grad(p, p.theta_star);
    EXPECT_NEAR(vg.value, 0.0, 1e-20);
    EXPECT_LE(norm2(vg.gradient), 1e-12);
}

TEST(LeastSquares, HandEvaluation) {
    const LsqProblem p{DenseMatrix::identity(2), Vector{0, 0}, Vector{0, 0}};
    const auto vg = lsq_value_grad(p, Vector{3, 4});
    EXPECT_DOUBLE_EQ(vg.value, 12.5);
    EXPECT_EQ(vg.gradient, (Vector{3, 4}));
}

TEST(LeastSquares, FiniteDifferences) { expect_fd_agreement(LeastSquares(small_lsq(2)), 3, 1e-6); }

TEST(LeastSquares, FullBatchEqualsGradient) { expect_full_batch_matches(LeastSquares(small_lsq(4)), 5); }

TEST(LeastSquares, DimensionMismatch) {
    try {
        lsq_value_grad(small_lsq(1), Vector{1.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::DimMismatch);
    }
}

TEST(LeastSquares, MinibatchIsUnbiased) {
    const LeastSquares f(small_lsq(6));
    const Vector theta = gaussian(f.dim(), 7);
    // Averaging over every singleton batch recovers the full gradient.
    Vector mean(f.dim(), 0.0);
    for (std::size_t i = 0; i < f.sample_count(); ++i) {
        const std::vector<std::size_t> b{i};
        axpy(1.0 / static_cast<double>(f.sample_count()), f.stoch_gradient(theta, b), mean);
    }
    EXPECT_LE(rel_err(mean, f.gradient(theta)), 1e-12);
}

// Log-sum-exp -------------------------------------------------------------------

TEST(LogSumExp, AtGroundTruthIsLogN) {
    const auto r = gen_regression(9, 4, 1.0, 3);
    const auto p = make_lse(r);
    const auto vg = lse_value_grad(p, p.theta_star);
    EXPECT_NEAR(vg.value, std::log(9.0), 1e-12);
    EXPECT_LE(norm2(vg.gradient), 1e-12);
}

TEST(LogSumExp, SingleTermByHand) {
    const LogSumExpProblem p{DenseMatrix::identity(1), Vector{0}, Vector{0}};
    const auto vg = lse_value_grad(p, Vector{2});
    EXPECT_NEAR(vg.value, 4.0, 1e-14);
    EXPECT_NEAR(vg.gradient[0], 4.0, 1e-14);
}

TEST(LogSumExp, FiniteDifferences) {
    const LogSumExp f(make_lse(gen_regression(12, 6, 1.0, 8)));
    expect_fd_agreement(f, 9, 1e-6, 0.3);
}

TEST(LogSumExp, FullBatchEqualsGradient) { expect_full_batch_matches(LogSumExp(make_lse(gen_regression(10, 5, 1.0, 1))), 2); }

TEST(LogSumExp, LargeResidualsStayFinite) {
    // Residuals around 40 put r² near 1600, far beyond exp's range.
    const LogSumExpProblem p{DenseMatrix::from_rows({{1.0}, {1.0}, {1.0}}), Vector{0.0, -0.5, 0.5}, Vector{0.0}};
    const auto vg = lse_value_grad(p, Vector{40.0});
    EXPECT_TRUE(std::isfinite(vg.value));
    EXPECT_TRUE(all_finite(vg.gradient));
    EXPECT_NEAR(vg.value, 40.5 * 40.5 + std::log1p(std::exp(40.0 * 40.0 - 40.5 * 40.5) + std::exp(39.5 * 39.5 - 40.5 * 40.5)),
                1e-9);
}

// Logistic --------------------------------------------------------------------

TEST(Logistic, ZeroParametersGiveNLogTwo) {
    const auto p = make_logistic(gen_regression(30, 3, 1.0, 4), 4);
    EXPECT_NEAR(logistic_value_grad(p, Vector(3, 0.0)).value, 30.0 * std::log(2.0), 1e-12);
}

TEST(Logistic, SaturatesToZero) {
    const LogisticProblem p{DenseMatrix::identity(1), Vector{1.0}, Vector{0.0}};
    EXPECT_LT(logistic_value_grad(p, Vector{50.0}).value, 1e-20);
    EXPECT_TRUE(std::isfinite(logistic_value_grad(p, Vector{-800.0}).value));
}

TEST(Logistic, FiniteDifferences) {
    const Logistic f(make_logistic(gen_regression(40, 5, 1.0, 10), 10));
    expect_fd_agreement(f, 11, 1e-6);
}

TEST(Logistic, FullBatchEqualsGradient) {
    expect_full_batch_matches(Logistic(make_logistic(gen_regression(20, 3, 1.0, 2), 2)), 3);
}

TEST(Logistic, LabelsAreBinary) {
    const auto p = make_logistic(gen_regression(200, 3, 0.0, 5), 5);
    for (double y : p.labels) EXPECT_TRUE(y == 0.0 || y == 1.0);
    EXPECT_THROW(Logistic(LogisticProblem{DenseMatrix::identity(1), Vector{0.5}, Vector{0}}), Error);
}

// Deep linear network -----------------------------------------------------------

TEST(DeepLinearNet, DefaultShapeHas2300Parameters) {
    EXPECT_EQ(total_params(DeepLinearNet::default_layers()), 2300u);
}

TEST(DeepLinearNet, InterpolatingWeightsGiveZero) {
    const auto data = gen_linear_net_data(25, 1);
    const DeepLinearNet f({{10, 10, false}, {10, 10, false}}, data.a, data.y);
    Vector theta(200, 0.0);
    for (std::size_t i = 0; i < 10; ++i) theta[i * 10 + i] = 1.0; // W1 = I
    std::copy(data.m_star.data().begin(), data.m_star.data().end(), theta.begin() + 100); // W2 = M*
    const auto vg = f.value_grad(theta);
    EXPECT_LT(vg.value, 1e-24);
    EXPECT_LT(norm2(vg.gradient), 1e-12);
}

TEST(DeepLinearNet, FullBatchIsMeanOfSingletons) {
    const auto f = small_linear_net(2, 9);
    const Vector theta = gaussian(f.dim(), 3, 0.5);
    double mean = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
        const std::vector<std::size_t> b{i};
        mean += f.batch_value_grad(theta, b).value / 9.0;
    }
    EXPECT_NEAR(f.value(theta), mean, 1e-12 * (1.0 + mean));
}

TEST(DeepLinearNet, FiniteDifferences) { expect_fd_agreement(small_linear_net(3), 4, 1e-5, 0.5); }

TEST(DeepLinearNet, FullBatchEqualsGradient) { expect_full_batch_matches(small_linear_net(5), 6); }

TEST(DeepLinearNet, BatchErrors) {
    const auto f = small_linear_net(7, 4);
    const Vector theta(f.dim(), 0.1);
    try {
        f.batch_value_grad(theta, std::vector<std::size_t>{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EmptyBatch);
    }
    EXPECT_THROW(f.batch_value_grad(theta, std::vector<std::size_t>{4}), Error);
    EXPECT_THROW(f.value(Vector(3, 0.0)), Error);
}

// ReLU MLP ----------------------------------------------------------------------

TEST(ReluMlp, ZeroParametersGiveLogClasses) {
    DenseMatrix x = random_matrix(20, 6, 1);
    std::vector<int> labels(20);
    for (int i = 0; i < 20; ++i) labels[static_cast<std::size_t>(i)] = i % 10;
    const ReluMlp f({{6, 8, true}, {8, 10, true}}, x, labels);
    EXPECT_NEAR(f.value(Vector(f.dim(), 0.0)), std::log(10.0), 1e-14);
}

TEST(ReluMlp, FiniteDifferencesAwayFromKinks) {
    const auto f = small_mlp(2);
    int accepted = 0;
    for (std::uint64_t s = 0; accepted < kProbes && s < 1000; ++s) {
        const Vector theta = gaussian(f.dim(), derive_seed(77, {s}), 0.5);
        if (f.min_abs_preactivation(theta) < 1e-3) continue;
        ++accepted;
        EXPECT_LE(rel_err(f.gradient(theta), fd_gradient(f, theta)), 1e-5) << "probe seed " << s;
    }
    EXPECT_EQ(accepted, kProbes);
}

TEST(ReluMlp, OutputBiasGradientSumsToZero) {
    const auto f = small_mlp(3);
    const Vector theta = gaussian(f.dim(), 4, 0.5);
    const Vector g = f.gradient(theta);
    const auto offs = layer_offsets(small_mlp_layers());
    double s = 0.0;
    for (std::size_t r = 0; r < 4; ++r) s += g[offs[1].bias + r];
    EXPECT_NEAR(s, 0.0, 1e-14);
}

TEST(ReluMlp, FullBatchEqualsGradient) { expect_full_batch_matches(small_mlp(5), 6); }

TEST(ReluMlp, PiecewiseLinearInInputs) {
    // Forward logits are positively homogeneous in x when biases vanish.
    const auto data = gen_classification(5, 6, 4, 0.5, 9);
    DenseMatrix doubled = data.features;
    for (double& v : doubled.data()) v *= 2.0;
    const std::vector<LayerShape> layers{{6, 5, false}, {5, 4, false}};
    const ReluMlp a(layers, data.features, data.labels);
    const ReluMlp b(layers, doubled, data.labels);
    const Vector theta = gaussian(a.dim(), 10);
    EXPECT_NEAR(a.accuracy(theta), b.accuracy(theta), 0.0);
    EXPECT_TRUE(std::isfinite(a.value(theta)));
}

TEST(ReluMlp, RejectsBadLabels) {
    EXPECT_THROW(ReluMlp({{2, 3, true}}, DenseMatrix(1, 2), std::vector<int>{3}), Error);
}

// Matrix factorization ------------------------------------------------------------

TEST(MatFac, FiniteDifferences) { expect_fd_agreement(MatrixFactorization(small_matfac(1)), 2, 1e-6); }

TEST(MatFac, HessianQuadraticZeroDirection) {
    const auto p = small_matfac(3);
    EXPECT_EQ(matfac_hessian_quadratic(p, gaussian(p.dim(), 4), Vector(p.dim(), 0.0)), 0.0);
}

TEST(MatFac, HessianQuadraticAtZeroResidual) {
    auto p = small_matfac(5);
    const Vector theta = gaussian(p.dim(), 6);
    const auto [l, r] = detail::unpack_factors(p, theta);
    p.b = detail::measure(p, matmul_nt(l, r));
    const Vector v = gaussian(p.dim(), 7);
    const auto [u, w] = detail::unpack_factors(p, v);
    DenseMatrix mixed = matmul_nt(u, r);
    axpy(1.0, matmul_nt(l, w).data(), mixed.data());
    const Vector m = detail::measure(p, mixed);
    const double q = matfac_hessian_quadratic(p, theta, v);
    EXPECT_NEAR(q, 2.0 * dot(m, m), 1e-10 * (1.0 + q));
    EXPECT_GE(q, 0.0);
}

TEST(MatFac, HessianQuadraticMatchesSecondDifference) {
    const auto p = small_matfac(8);
    const MatrixFactorization f(p);
    for (int probe = 0; probe < kProbes; ++probe) {
        const Vector theta = gaussian(p.dim(), derive_seed(9, {static_cast<std::uint64_t>(probe)}));
        const Vector v = gaussian(p.dim(), derive_seed(10, {static_cast<std::uint64_t>(probe)}));
        const double h = 1e-3;
        Vector plus = theta, minus = theta;
        axpy(h, v, plus);
        axpy(-h, v, minus);
        const double fd = (f.value(plus) - 2.0 * f.value(theta) + f.value(minus)) / (h * h);
        const double q = matfac_hessian_quadratic(p, theta, v);
        EXPECT_LE(std::abs(q - fd), 1e-4 * std::abs(q)) << "probe " << probe;
    }
}

// Quadratic smoothness certificate ------------------------------------------------

TEST(QuadraticSmoothness, Identity) {
    const auto s = quadratic_smoothness_sum(DenseMatrix::identity(3));
    EXPECT_EQ(s.constants, (Vector{1, 1, 1}));
    EXPECT_EQ(s.sum, 3.0);
}

TEST(QuadraticSmoothness, TwoByTwo) {
    const auto s = quadratic_smoothness_sum(DenseMatrix::from_rows({{2, 1}, {1, 2}}));
    EXPECT_EQ(s.constants, (Vector{3, 3}));
    EXPECT_EQ(s.sum, 6.0);
}

TEST(QuadraticSmoothness, CertificateIsPsd) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto h = random_symmetric(7, seed);
        const auto s = quadratic_smoothness_sum(h);
        DenseMatrix plus = DenseMatrix::diagonal(s.constants);
        DenseMatrix minus = plus;
        for (std::size_t i = 0; i < plus.size(); ++i) {
            plus.data()[i] -= h.data()[i];
            minus.data()[i] += h.data()[i];
        }
        EXPECT_GE(min_eigenvalue(plus), -1e-10);
        EXPECT_GE(min_eigenvalue(minus), -1e-10);
    }
}

TEST(QuadraticSmoothness, RotationAddsOffDiagonalMass) {
    const Vector diag{5, 3, 2, 1, 0.5};
    const auto d = DenseMatrix::diagonal(diag);
    EXPECT_DOUBLE_EQ(quadratic_smoothness_sum(d).sum, 11.5);
    const auto q = random_orthogonal(5, 3);
    DenseMatrix h = matmul_tn(q, matmul(d, q));
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t i = j + 1; i < 5; ++i) h(i, j) = h(j, i);
    EXPECT_GE(quadratic_smoothness_sum(h).sum, 11.5 - 1e-12);
}

TEST(QuadraticSmoothness, RejectsAsymmetric) {
    try {
        quadratic_smoothness_sum(DenseMatrix::from_rows({{1, 2}, {0, 1}}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NotSymmetric);
    }
}

TEST(Quadratic, GradientIsAffine) {
    const auto h = random_symmetric(4, 1);
    const Vector c = gaussian(4, 2);
    const Quadratic f(h, c);
    expect_fd_agreement(f, 3, 1e-8);
    EXPECT_EQ(f.gradient(Vector(4, 0.0)), c);
}
