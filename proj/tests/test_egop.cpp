#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include <gtest/gtest.h>

#include "egoprep/datasets.hpp"
#include "egoprep/diagnostics.hpp"
#include "egoprep/egop.hpp"
#include "test_support.hpp"

using namespace egoprep;
using namespace egoprep::testing;

namespace {

std::shared_ptr<const LeastSquares> lsq_objective(std::size_t n, std::size_t d, double alpha, std::uint64_t seed) {
    return std::make_shared<const LeastSquares>(make_lsq(gen_regression(n, d, alpha, seed)));
}

DenseMatrix block_diag(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out(a.rows() + b.rows(), a.cols() + b.cols());
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j)
        for (std::size_t i = 0; i < b.rows(); ++i) out(a.rows() + i, a.cols() + j) = b(i, j);
    return out;
}

Errc error_code(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return Errc::ConfigError;
}

} // namespace

TEST(EstimateEgop, ConstantGradientGivesOuterProduct) {
    const Vector c{1.5, -2.0, 0.25};
    const Quadratic f(DenseMatrix(3, 3), c);
    for (std::size_t m : {1u, 7u, 64u}) {
        const auto e = estimate_egop(f, SamplingDistribution::scaled_gaussian(3.0), {m, 0, 11});
        ASSERT_TRUE(e.matrix.has_value());
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ((*e.matrix)(i, j), c[i] * c[j]);
        EXPECT_EQ(e.sample_count, m);
        EXPECT_FALSE(e.block_id.has_value());
    }
}

TEST(EstimateEgop, ConvergesToAnalyticLeastSquares) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto f = lsq_objective(30, 20, 1.0, seed);
        const auto e = estimate_egop(*f, SamplingDistribution::standard_gaussian(), {1000, 0, seed});
        EXPECT_LE(rel_frobenius(*e.matrix, analytic_lsq_egop(f->problem())), 0.15) << "seed " << seed;
    }
}

TEST(EstimateEgop, AnalyticByHand) {
    const LsqProblem id{DenseMatrix::identity(3), Vector(3, 0.0), Vector(3, 0.0)};
    EXPECT_EQ(analytic_lsq_egop(id), DenseMatrix::identity(3));
    const LsqProblem diag{DenseMatrix::diagonal(Vector{2, 1}), Vector(2, 0.0), Vector(2, 0.0)};
    EXPECT_EQ(analytic_lsq_egop(diag), DenseMatrix::diagonal(Vector{16, 1}));
}

TEST(EstimateEgop, EigenpairIdentityOnSameSamples) {
    const auto f = lsq_objective(15, 8, 1.0, 3);
    const EstimateOptions opts{40, 0, 5};
    const auto e = estimate_egop(*f, SamplingDistribution::standard_gaussian(), opts);
    for (std::size_t k = 0; k < 8; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < opts.samples; ++i) {
            const double proj = dot(sample_gradient(*f, SamplingDistribution::standard_gaussian(), opts, i),
                                    e.basis.col(k));
            mean += proj * proj / static_cast<double>(opts.samples);
        }
        EXPECT_NEAR(mean, e.eigenvalues[k], 1e-10 * e.eigenvalues[0]) << "k=" << k;
    }
}

TEST(EstimateEgop, MinibatchesAndErrors) {
    const auto f = lsq_objective(20, 5, 1.0, 1);
    const auto e = estimate_egop(*f, SamplingDistribution::standard_gaussian(), {10, 4, 2});
    EXPECT_EQ(e.dim(), 5u);
    EXPECT_THROW(estimate_egop(*f, SamplingDistribution::standard_gaussian(), {10, 21, 2}), Error);
    EXPECT_THROW(estimate_egop(*f, SamplingDistribution::standard_gaussian(), {0, 0, 2}), Error);
    const LogSumExp lse(make_lse(gen_regression(5, 2, 0.0, 1)));
    EXPECT_EQ(error_code([&] { estimate_egop(lse, SamplingDistribution::scaled_gaussian(1e200), {3, 0, 1}); }),
              Errc::NonFinite);
}

TEST(EstimateEgop, ThreadedMatchesSerial) {
    const auto f = lsq_objective(25, 12, 1.0, 4);
    const auto rho = SamplingDistribution::standard_gaussian();
    const auto serial = estimate_egop(*f, rho, {101, 0, 9, true, 1});
    const auto a = estimate_egop(*f, rho, {101, 0, 9, true, 3});
    const auto b = estimate_egop(*f, rho, {101, 0, 9, true, 3});
    EXPECT_EQ(*a.matrix, *b.matrix);
    EXPECT_LE(rel_frobenius(*a.matrix, *serial.matrix), 1e-13);
}

TEST(BlockEgops, SingleBlockEqualsGlobal) {
    const auto f = lsq_objective(12, 6, 1.0, 2);
    const auto rho = SamplingDistribution::standard_gaussian();
    const EstimateOptions opts{30, 0, 8};
    const auto blocks = estimate_block_egops(*f, rho, BlockPartition::whole(6), opts);
    const auto global = estimate_egop(*f, rho, opts);
    ASSERT_EQ(blocks.size(), 1u);
    EXPECT_EQ(*blocks[0].matrix, *global.matrix);
    EXPECT_EQ(blocks[0].eigenvalues, global.eigenvalues);
    EXPECT_EQ(blocks[0].basis, global.basis);
    EXPECT_EQ(blocks[0].block_id, std::optional<std::size_t>(0));
}

TEST(BlockEgops, SeparableQuadraticBlocksMatchStandalone) {
    const DenseMatrix h1 = random_symmetric(4, 1);
    const DenseMatrix h2 = random_symmetric(4, 2);
    const Vector c1 = gaussian(4, 3);
    const Vector c2 = gaussian(4, 4);
    Vector c = c1;
    c.insert(c.end(), c2.begin(), c2.end());
    const Quadratic f(block_diag(h1, h2), c);
    const Quadratic f1(h1, c1);
    const Quadratic f2(h2, c2);
    const auto rho = SamplingDistribution::standard_gaussian();
    const EstimateOptions opts{200, 0, 17};
    BlockPartition parts{{{0, 1, 2, 3}, {4, 5, 6, 7}}, {}};
    const auto est = estimate_block_egops(f, rho, parts, opts);
    ASSERT_EQ(est.size(), 2u);

    // Standalone estimates from the same draws, restricted to each block.
    DenseMatrix p1(4, 4), p2(4, 4);
    for (std::size_t i = 0; i < opts.samples; ++i) {
        const Vector theta = sample_params(rho, 8, derive_seed(opts.seed, {detail::kParamsTag, i}));
        const Vector g1 = f1.gradient(std::span<const double>(theta).subspan(0, 4));
        const Vector g2 = f2.gradient(std::span<const double>(theta).subspan(4, 4));
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t a = 0; a < 4; ++a) {
                p1(a, b) += g1[a] * g1[b] / 200.0;
                p2(a, b) += g2[a] * g2[b] / 200.0;
            }
    }
    EXPECT_LE(rel_frobenius(*est[0].matrix, p1), 1e-12);
    EXPECT_LE(rel_frobenius(*est[1].matrix, p2), 1e-12);

    // And both approach H² + ccᵀ in expectation.
    DenseMatrix expect1 = matmul(h1, h1);
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t a = 0; a < 4; ++a) expect1(a, b) += c1[a] * c1[b];
    const auto big = estimate_block_egops(f, rho, parts, {20000, 0, 3});
    EXPECT_LE(rel_frobenius(*big[0].matrix, expect1), 0.05);
}

TEST(BlockEgops, FirstLayerOfDeepLinearNet) {
    const auto data = gen_linear_net_data(50, 1);
    const auto layers = DeepLinearNet::default_layers();
    const DeepLinearNet f(layers, data.a, data.y);
    auto parts = layer_blocks(layers);
    parts.reparameterize = {true, false, false};
    const auto est = estimate_block_egops(f, SamplingDistribution::glorot(layers), parts, {4, 10, 2, false});
    ASSERT_EQ(est.size(), 1u);
    EXPECT_EQ(est[0].dim(), 500u);
    EXPECT_EQ(est[0].basis.rows(), 500u);
    EXPECT_FALSE(est[0].matrix.has_value());
}

TEST(BlockPartition, Validation) {
    EXPECT_EQ(error_code([] { BlockPartition{{{0, 1}, {1, 2}}, {}}.validate(3); }), Errc::OverlapError);
    EXPECT_EQ(error_code([] { BlockPartition{{{0, 5}}, {}}.validate(3); }), Errc::DimMismatch);
    EXPECT_EQ(error_code([] { BlockPartition{{{0}}, {true, false}}.validate(3); }), Errc::ShapeMismatch);
}

TEST(BlockPartition, LayerBlocksWithAndWithoutBias) {
    const std::vector<LayerShape> layers{{3, 2, true}, {2, 4, true}};
    EXPECT_EQ(layer_blocks(layers).blocks[1].size(), 8u);
    const auto with_bias = layer_blocks(layers, true);
    EXPECT_EQ(with_bias.blocks[0].size(), 8u);
    EXPECT_EQ(with_bias.blocks[1].size(), 12u);
    with_bias.validate(total_params(layers));
}

TEST(Reparameterize, IdentityBasisIsTransparent) {
    const auto f = lsq_objective(10, 4, 1.0, 1);
    const auto g = reparameterize(f, DenseMatrix::identity(4));
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Vector theta = gaussian(4, s);
        const auto a = f->value_grad(theta);
        const auto b = g->value_grad(theta);
        EXPECT_EQ(a.value, b.value);
        EXPECT_EQ(a.gradient, b.gradient);
    }
}

TEST(Reparameterize, ValueAndSolutionMapping) {
    const auto f = lsq_objective(10, 6, 1.0, 2);
    const auto g = reparameterize(f, random_orthogonal(6, 3));
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Vector tt = gaussian(6, s);
        EXPECT_EQ(g->value(tt), f->value(g->to_original(tt)));
    }
    const Vector theta = gaussian(6, 99);
    EXPECT_LE(rel_err(g->to_original(g->to_reparam(theta)), theta), 1e-14);
}

TEST(Reparameterize, GradientFiniteDifferences) {
    const auto f = std::make_shared<const LogSumExp>(make_lse(gen_regression(12, 6, 1.0, 4)));
    const auto g = reparameterize(f, random_orthogonal(6, 5));
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Vector tt = gaussian(6, s, 0.3);
        EXPECT_LE(rel_err(g->gradient(tt), fd_gradient(*g, tt)), 1e-5);
    }
}

TEST(Reparameterize, RejectsNonOrthonormal) {
    const auto f = lsq_objective(5, 3, 1.0, 1);
    DenseMatrix bad = DenseMatrix::identity(3);
    bad(0, 0) = 1.1;
    EXPECT_EQ(error_code([&] { reparameterize(f, bad); }), Errc::NotOrthonormal);
    EXPECT_EQ(error_code([&] { reparameterize(f, DenseMatrix::identity(4)); }), Errc::NotOrthonormal);
}

TEST(BlockReparameterize, IdentityBasesAndSingleBlock) {
    const auto f = lsq_objective(10, 6, 1.0, 6);
    const auto id = block_reparameterize(f, {{{0, 1, 2}, {3, 4, 5}}, {}},
                                         {DenseMatrix::identity(3), DenseMatrix::identity(3)});
    const DenseMatrix q = random_orthogonal(6, 7);
    const auto whole = block_reparameterize(f, BlockPartition::whole(6), {q});
    const auto global = reparameterize(f, q);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Vector tt = gaussian(6, s);
        EXPECT_EQ(id->value_grad(tt).gradient, f->value_grad(tt).gradient);
        EXPECT_EQ(whole->value_grad(tt).gradient, global->value_grad(tt).gradient);
    }
}

TEST(BlockReparameterize, MatchesAssembledBlockDiagonal) {
    const auto f = lsq_objective(10, 7, 1.0, 8);
    const DenseMatrix q1 = random_orthogonal(3, 1);
    const DenseMatrix q2 = random_orthogonal(3, 2);
    // Blocks {0,1,2} and {3,4,5}; coordinate 6 untouched.
    const auto g = block_reparameterize(f, {{{0, 1, 2}, {3, 4, 5}}, {}}, {q1, q2});
    const auto full = reparameterize(f, block_diag(block_diag(q1, q2), DenseMatrix::identity(1)));
    const Vector tt = gaussian(7, 3);
    EXPECT_NEAR(g->value(tt), full->value(tt), 1e-12 * (1.0 + full->value(tt)));
    EXPECT_LE(rel_err(g->gradient(tt), full->gradient(tt)), 1e-13);
}

TEST(BlockReparameterize, DeepLinearPerLayerBasesFiniteDifferences) {
    const auto data = gen_linear_net_data(12, 2);
    const std::vector<LayerShape> layers{{10, 4, false}, {4, 3, false}, {3, 10, false}};
    const auto f = std::make_shared<const DeepLinearNet>(layers, data.a, data.y);
    const auto parts = layer_blocks(layers);
    std::vector<DenseMatrix> bases;
    for (std::size_t k = 0; k < parts.blocks.size(); ++k) bases.push_back(random_orthogonal(parts.blocks[k].size(), k));
    const auto g = block_reparameterize(f, parts, bases);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Vector tt = gaussian(g->dim(), s, 0.5);
        EXPECT_LE(rel_err(g->gradient(tt), fd_gradient(*g, tt)), 1e-5) << "probe " << s;
    }
}

TEST(BlockReparameterize, Errors) {
    const auto f = lsq_objective(10, 4, 1.0, 1);
    EXPECT_EQ(error_code([&] { block_reparameterize(f, {{{0, 1}, {1, 2}}, {}}, {DenseMatrix::identity(2), DenseMatrix::identity(2)}); }),
              Errc::OverlapError);
    EXPECT_EQ(error_code([&] { block_reparameterize(f, {{{0, 1}}, {}}, {DenseMatrix::identity(3)}); }),
              Errc::NotOrthonormal);
}

TEST(SampleParams, StandardGaussianMoments) {
    const Vector x = sample_params(SamplingDistribution::standard_gaussian(), 100000, 1);
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v / 1e5;
    for (double v : x) var += (v - mean) * (v - mean) / 1e5;
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(SampleParams, ScaledGaussianVariance) {
    const Vector x = sample_params(SamplingDistribution::scaled_gaussian(0.5), 100000, 2);
    EXPECT_NEAR(dot(x, x) / 1e5, 0.25, 0.01);
}

TEST(SampleParams, GlorotLayerStd) {
    const LayerShape l{64, 32, true};
    EXPECT_NEAR(glorot_std(l), 0.1443, 5e-5);
    const Vector x = sample_params(SamplingDistribution::glorot({l}), total_params(std::vector<LayerShape>{l}), 3);
    double ss = 0.0;
    for (std::size_t i = 0; i < l.weight_count(); ++i) ss += x[i] * x[i];
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(l.weight_count())), glorot_std(l), 0.005);
    const double bound = 1.0 / std::sqrt(96.0);
    for (std::size_t i = l.weight_count(); i < x.size(); ++i) EXPECT_LE(std::abs(x[i]), bound);
}

TEST(SampleParams, FixedSeedAndShapeErrors) {
    const auto rho = SamplingDistribution::default_uniform({{4, 3, true}});
    EXPECT_EQ(sample_params(rho, 15, 5), sample_params(rho, 15, 5));
    EXPECT_EQ(error_code([&] { sample_params(rho, 14, 5); }), Errc::ShapeMismatch);
}

TEST(EgopArtifact, SaveLoadRoundTrip) {
    const auto f = lsq_objective(10, 5, 1.0, 3);
    const auto e = estimate_egop(*f, SamplingDistribution::standard_gaussian(), {20, 0, 1});
    const auto path = (std::filesystem::temp_directory_path() / "egoprep_test.egop").string();
    save_egop(path, e);
    const auto back = load_egop(path);
    EXPECT_EQ(back.eigenvalues, e.eigenvalues);
    EXPECT_EQ(back.basis, e.basis);
    EXPECT_EQ(back.sample_count, 20u);
    EXPECT_EQ(back.dist, DistKind::StandardGaussian);
    EXPECT_EQ(serialize_egop(back), serialize_egop(e));

    // Truncate by one byte.
    const std::string bytes = serialize_egop(e);
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 1));
    }
    EXPECT_EQ(error_code([&] { load_egop(path); }), Errc::FormatError);
    std::string bad = bytes;
    bad[4] = '2';
    EXPECT_EQ(error_code([&] { deserialize_egop(bad); }), Errc::FormatError);
    std::filesystem::remove(path);
    EXPECT_EQ(error_code([&] { load_egop(path); }), Errc::IoError);
}

TEST(EgopArtifact, DimensionMismatchAtUseSite) {
    const auto f = lsq_objective(10, 5, 1.0, 3);
    const auto e = deserialize_egop(serialize_egop(estimate_egop(*f, SamplingDistribution::standard_gaussian(), {8, 0, 1})));
    const auto other = lsq_objective(10, 6, 1.0, 3);
    EXPECT_EQ(error_code([&] { reparameterize(other, e.basis); }), Errc::NotOrthonormal);
    const auto g = reparameterize(f, e.basis);
    EXPECT_EQ(error_code([&] { g->value(Vector(6, 0.0)); }), Errc::DimMismatch);
}

TEST(PartialBasis, KeepsLeadingEigenvectors) {
    const auto f = lsq_objective(20, 10, 1.0, 2);
    const auto e = estimate_egop(*f, SamplingDistribution::standard_gaussian(), {30, 0, 1});
    const auto v = partial_basis(e, 3, 9);
    EXPECT_LE(orthonormality_error(v), 1e-10);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(v(i, j), e.basis(i, j));
    EXPECT_EQ(partial_basis(e, 10, 1), e.basis);
}

// Properties of the analytic least-squares EGOP ------------------------------------

TEST(EgopProperties, RotationEquivariance) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto p = make_lsq(gen_regression(15, 10, 1.0, seed));
        const DenseMatrix q = random_orthogonal(10, 100 + seed);
        const LsqProblem rotated{matmul(p.a, q), p.y, matvec_t(q, p.theta_star)};
        const DenseMatrix lhs = analytic_lsq_egop(rotated);
        const DenseMatrix rhs = matmul_tn(q, matmul(analytic_lsq_egop(p), q));
        EXPECT_LE(rel_frobenius(lhs, rhs), 1e-10);
    }
}

TEST(EgopProperties, EigenbasisDiagonalizes) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto p = make_lsq(gen_regression(15, 10, 2.0, seed));
        const DenseMatrix egop = analytic_lsq_egop(p);
        const DenseMatrix v = sym_eig(egop).eigenvectors;
        const LsqProblem rotated{matmul(p.a, v), p.y, matvec_t(v, p.theta_star)};
        EXPECT_LE(off_diagonal_norm(analytic_lsq_egop(rotated)), 1e-8 * frobenius(egop));
    }
}

TEST(EgopProperties, SigmaFourthDecayBound) {
    for (double alpha : {1.0, 2.0, 3.0}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const Vector sigma = power_law_spectrum(50, alpha);
            const DenseMatrix a = DenseMatrix::diagonal(sigma);
            const Vector theta_star = standard_gaussian(50, seed);
            const auto lam = sym_eig(analytic_lsq_egop({a, matvec(a, theta_star), theta_star})).eigenvalues;
            for (std::size_t k = 1; k < 50; ++k)
                EXPECT_LE(lam[k] / lam[0], std::pow(sigma[k - 1] / sigma[0], 4)) << "alpha " << alpha << " k " << k;
        }
    }
}
