#include "vanad/flow.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace vanad;

namespace {

FlowModel make_flow(Index C, std::uint64_t seed, Index layers = 3, Index hidden = 0,
                    BaseMode base = BaseMode::random, Conditioner cond = Conditioner::masked) {
    FlowConfig cfg;
    cfg.channels = C;
    cfg.layers = layers;
    cfg.hidden = hidden;
    cfg.seed = seed;
    cfg.base = base;
    cfg.conditioner = cond;
    return build_flow(cfg);
}

Matrix gaussian_rows(Index n, const Vector& mean, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix out(n, mean.size());
    for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < mean.size(); ++c) out(i, c) = mean(c) + z(rng);
    return out;
}

Vector random_point(Index C, std::mt19937_64& rng, double scale = 1.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Vector x(C);
    for (Index c = 0; c < C; ++c) x(c) = u(rng);
    return x;
}

}  // namespace

TEST(FlowInit, FreshFlowIsIdentity) {
    for (Index C : {1, 2, 5}) {
        auto m = make_flow(C, 3, 3, 0, BaseMode::fixed_zero);
        std::mt19937_64 rng(1);
        Vector x = random_point(C, rng);
        auto r = m.forward(x);
        EXPECT_EQ(r.z, x);
        EXPECT_EQ(r.logdet, 0.0);
        EXPECT_NEAR(m.log_density(Vector::Zero(C)), -0.5 * static_cast<double>(C) * kLog2Pi, 1e-12);
    }
}

TEST(FlowInit, LogDensityConstants) {
    EXPECT_NEAR(make_flow(1, 0, 3, 0, BaseMode::fixed_zero).log_density(Vector::Zero(1)), -0.918939, 1e-6);
    EXPECT_NEAR(make_flow(2, 0, 3, 0, BaseMode::fixed_zero).log_density(Vector::Zero(2)), -1.837877, 1e-6);
}

TEST(FlowInit, RandomBaseMeanIsSeeded) {
    auto a = make_flow(4, 5), b = make_flow(4, 5), c = make_flow(4, 6);
    EXPECT_EQ(a.base_mean(), b.base_mean());
    EXPECT_NE(a.base_mean(), c.base_mean());
    EXPECT_EQ(make_flow(4, 5, 3, 0, BaseMode::fixed_zero).base_mean(), Vector::Zero(4));
}

TEST(FlowInit, HiddenWidthDefault) {
    EXPECT_EQ(make_flow(2, 0).hidden(), 8);
    EXPECT_EQ(make_flow(7, 0).hidden(), 14);
    EXPECT_EQ(make_flow(7, 0, 3, 5).hidden(), 5);
}

TEST(FlowForward, ForcedScaleWithZeroSumHasZeroLogdet) {
    auto m = make_flow(2, 0, 1);
    auto& p = m.layers()[0].params;
    p.b_out(2) = 0.5;
    p.b_out(3) = -0.5;
    Vector x(2);
    x << 1.0, 2.0;
    auto r = m.forward(x);
    EXPECT_DOUBLE_EQ(r.logdet, 0.0);
    EXPECT_DOUBLE_EQ(r.z(0), std::exp(-0.5));
    EXPECT_DOUBLE_EQ(r.z(1), 2.0 * std::exp(0.5));
}

TEST(FlowForward, ScaleIsClamped) {
    auto m = make_flow(1, 0, 1);
    m.layers()[0].params.b_out(1) = 50.0;
    auto r = m.forward(Vector::Ones(1));
    EXPECT_DOUBLE_EQ(r.logdet, -kAlphaClamp);
}

TEST(FlowForward, WrongDimensionAndNonFinite) {
    auto m = make_flow(2, 0);
    EXPECT_THROW(m.forward(Vector::Zero(3)), Error);
    Vector bad(2);
    bad << 0.0, std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(m.forward(bad), Error);
}

TEST(FlowJacobian, LogdetMatchesFiniteDifferenceDeterminant) {
    std::mt19937_64 rng(21);
    for (int k = 0; k < 20; ++k) {
        auto m = make_flow(3, static_cast<std::uint64_t>(k));
        oracle::randomize(m, 100 + static_cast<std::uint64_t>(k), 0.5);
        Vector x = random_point(3, rng);
        const Matrix J = oracle::fd_jacobian([&](const Vector& v) { return m.forward(v).z; }, x);
        const double det = J.determinant();
        EXPECT_LE(oracle::rel_err(std::exp(m.forward(x).logdet), std::abs(det)), 1e-4);
        EXPECT_GT(det, 0.0);
    }
}

TEST(FlowJacobian, EachLayerIsTriangularInItsOrder) {
    auto m = make_flow(4, 2, 2);
    oracle::randomize(m, 77, 0.8);
    std::mt19937_64 rng(3);
    for (Index l = 0; l < 2; ++l) {
        const auto& L = m.layers()[static_cast<std::size_t>(l)];
        auto layer_map = [&](const Vector& x) {
            auto c = m.conditioner(l, x);
            return Vector(((x - c.mu).array() * (-c.alpha).array().exp()).matrix());
        };
        Vector x = random_point(4, rng);
        Matrix J = oracle::fd_jacobian(layer_map, x);
        for (Index i = 0; i < 4; ++i)
            for (Index j = 0; j < 4; ++j)
                if (L.rank[static_cast<std::size_t>(j)] > L.rank[static_cast<std::size_t>(i)]) {
                    EXPECT_LT(std::abs(J(i, j)), 1e-8) << "layer " << l << " (" << i << "," << j << ")";
                }
    }
}

TEST(FlowJacobian, AutoregressivePropertyIsExact) {
    auto m = make_flow(5, 4, 1);
    oracle::randomize(m, 5, 1.0);
    const auto& L = m.layers()[0];
    std::mt19937_64 rng(8);
    Vector x = random_point(5, rng);
    const auto base = m.conditioner(0, x);
    for (Index j = 0; j < 5; ++j) {
        Vector y = x;
        y(j) += 0.37;
        const auto moved = m.conditioner(0, y);
        for (Index i = 0; i < 5; ++i)
            if (L.rank[static_cast<std::size_t>(i)] <= L.rank[static_cast<std::size_t>(j)]) {
                EXPECT_EQ(moved.mu(i), base.mu(i));
                EXPECT_EQ(moved.alpha(i), base.alpha(i));
            }
    }
}

TEST(FlowInverse, RoundTrip) {
    std::mt19937_64 rng(4);
    auto m = make_flow(3, 9);
    oracle::randomize(m, 10, 0.6);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        Vector x = random_point(3, rng, 3.0);
        worst = std::max(worst, (m.inverse(m.forward(x).z) - x).cwiseAbs().maxCoeff());
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(FlowInverse, SingleVariable) {
    auto m = make_flow(1, 1);
    oracle::randomize(m, 2, 1.0);
    Vector x = Vector::Constant(1, 0.3);
    EXPECT_NEAR(m.inverse(m.forward(x).z)(0), 0.3, 1e-12);
}

TEST(FlowInverse, DenseConditionerHasNoInverse) {
    auto m = make_flow(2, 0, 2, 0, BaseMode::random, Conditioner::dense);
    EXPECT_THROW(m.inverse(Vector::Zero(2)), Error);
}

TEST(FlowDensity, IntegratesToOne) {
    for (Index C : {1, 2}) {
        auto random_flow = make_flow(C, 30 + static_cast<std::uint64_t>(C));
        oracle::randomize(random_flow, 40, 0.4);
        const double step = C == 1 ? 1e-3 : 0.02;
        EXPECT_NEAR(oracle::density_mass(random_flow, -10, 10, step), 1.0, 1e-2) << "C=" << C;

        auto trained = make_flow(C, 50);
        Vector mean = Vector::Constant(C, 0.4);
        train(trained, gaussian_rows(1024, mean, 60), TrainConfig{3, 0.005, 128, 1});
        EXPECT_NEAR(oracle::density_mass(trained, -10, 10, step), 1.0, 1e-2) << "trained C=" << C;
    }
}

TEST(FlowGradient, ZeroBatchAtIdentity) {
    auto m = make_flow(3, 0, 2, 0, BaseMode::fixed_zero);
    auto lg = nll_and_grad(m, Matrix::Zero(4, 3));
    EXPECT_NEAR(lg.loss, 1.5 * kLog2Pi, 1e-12);
    for (const auto& g : lg.grad.layers) EXPECT_EQ(g.b_out.head(3), Vector::Zero(3));
}

TEST(FlowGradient, LossMatchesDirectFormula) {
    auto m = make_flow(3, 12);
    oracle::randomize(m, 13, 0.7);
    std::mt19937_64 rng(14);
    Matrix batch(6, 3);
    for (Index b = 0; b < 6; ++b) batch.row(b) = random_point(3, rng).transpose();
    EXPECT_NEAR(nll_and_grad(m, batch).loss, oracle::direct_nll(m, batch), 1e-10);
    double mean_logp = 0.0;
    for (Index b = 0; b < 6; ++b) mean_logp += m.log_density(batch.row(b).transpose()) / 6.0;
    EXPECT_NEAR(nll_and_grad(m, batch).loss, -mean_logp, 1e-10);
}

TEST(FlowGradient, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto m = make_flow(3, seed, 2, 8);
        oracle::randomize(m, 1000 + seed, 0.5);
        std::mt19937_64 rng(seed);
        Matrix batch(4, 3);
        for (Index b = 0; b < 4; ++b) batch.row(b) = random_point(3, rng).transpose();
        const auto analytic = nll_and_grad(m, batch).grad.flat();
        const auto numeric = oracle::fd_gradient(m, batch);
        ASSERT_EQ(analytic.size(), numeric.size());
        for (std::size_t k = 0; k < analytic.size(); ++k)
            ASSERT_LE(oracle::rel_err(analytic[k], numeric[k]), 1e-4)
                << "seed " << seed << " param " << k << ": " << analytic[k] << " vs " << numeric[k];
    }
}

TEST(FlowGradient, DenseConditionerMatchesFiniteDifferences) {
    auto m = make_flow(2, 3, 2, 6, BaseMode::random, Conditioner::dense);
    oracle::randomize(m, 4, 0.5);
    Matrix batch = gaussian_rows(3, Vector::Zero(2), 5);
    const auto analytic = nll_and_grad(m, batch).grad.flat();
    const auto numeric = oracle::fd_gradient(m, batch);
    for (std::size_t k = 0; k < analytic.size(); ++k) ASSERT_LE(oracle::rel_err(analytic[k], numeric[k]), 1e-4);
}

TEST(FlowGradient, BadBatches) {
    auto m = make_flow(2, 0);
    EXPECT_THROW(nll_and_grad(m, Matrix(0, 2)), Error);
    EXPECT_THROW(nll_and_grad(m, Matrix::Zero(2, 3)), Error);
    Matrix inf = Matrix::Zero(2, 2);
    inf(1, 1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(nll_and_grad(m, inf), Error);
}

TEST(FlowTraining, FitsUnitGaussian) {
    Vector mean(2);
    mean << 0.7, -0.4;
    auto m = make_flow(2, 7);
    const Matrix data = gaussian_rows(4096, mean, 8);
    train(m, data, TrainConfig{5, 0.005, 128, 9});
    const double nll = nll_and_grad(m, data).loss;
    EXPECT_NEAR(nll, 1.0 + kLog2Pi, 0.1);
    EXPECT_NEAR(1.0 + kLog2Pi, 2.8379, 1e-4);
}

TEST(FlowTraining, ReducesLossAcrossSeeds) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto m = make_flow(3, seed);
        Matrix data = gaussian_rows(1000, Vector::Constant(3, 1.0), seed + 10);
        const double before = nll_and_grad(m, data).loss;
        auto report = train(m, data, TrainConfig{3, 0.005, 128, seed});
        EXPECT_EQ(report.epoch_nll.size(), 3u);
        EXPECT_LT(nll_and_grad(m, data).loss, before);
    }
}

TEST(FlowTraining, ZeroLearningRateLeavesParametersAlone) {
    auto m = make_flow(2, 1);
    const auto before = m.flat_parameters();
    train(m, gaussian_rows(300, Vector::Zero(2), 2), TrainConfig{2, 0.0, 64, 3});
    EXPECT_EQ(m.flat_parameters(), before);
}

TEST(FlowTraining, BaseMeanIsNotTrained) {
    auto m = make_flow(2, 1);
    const Vector u = m.base_mean();
    train(m, gaussian_rows(300, Vector::Constant(2, 2.0), 2), TrainConfig{2, 0.01, 64, 3});
    EXPECT_EQ(m.base_mean(), u);
}

TEST(FlowTraining, DeterministicInSeeds) {
    Matrix data = gaussian_rows(500, Vector::Zero(3), 4);
    auto a = make_flow(3, 5), b = make_flow(3, 5);
    auto ra = train(a, data, TrainConfig{2, 0.005, 100, 6});
    auto rb = train(b, data, TrainConfig{2, 0.005, 100, 6});
    EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
    EXPECT_EQ(ra.epoch_nll, rb.epoch_nll);
}

TEST(FlowTraining, EmptyData) {
    auto m = make_flow(2, 0);
    EXPECT_THROW(train(m, Matrix(0, 2), TrainConfig{}), Error);
}

TEST(FlowStorage, SaveLoadIsBitExact) {
    for (auto cond : {Conditioner::masked, Conditioner::dense}) {
        auto m = make_flow(3, 11, 3, 0, BaseMode::random, cond);
        oracle::randomize(m, 12, 0.9);
        const auto path = std::filesystem::temp_directory_path() / "vanad_flow_roundtrip.txt";
        save_flow(m, path);
        auto back = load_flow(path);
        EXPECT_EQ(back.flat_parameters(), m.flat_parameters());
        EXPECT_EQ(back.base_mean(), m.base_mean());
        EXPECT_EQ(back.hidden(), m.hidden());
        EXPECT_EQ(back.config().conditioner, cond);
        Vector x = Vector::Constant(3, 0.25);
        EXPECT_EQ(back.log_density(x), m.log_density(x));
    }
}

TEST(FlowStorage, RejectsCorruptFiles) {
    const auto dir = std::filesystem::temp_directory_path();
    EXPECT_THROW(load_flow(dir / "vanad_no_such_flow.txt"), Error);
    const auto path = dir / "vanad_flow_corrupt.txt";
    std::ofstream(path) << "vanad-flow 1\nchannels 2\nlayers 1\n";
    EXPECT_THROW(load_flow(path), Error);
}
