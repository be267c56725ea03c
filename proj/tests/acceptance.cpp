// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "vanad/vanad.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace vanad;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void report(int id, const char* title, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("[%s] %2d %s: %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

FlowModel flow(Index C, std::uint64_t seed, Index layers = 3, Index hidden = 0, BaseMode base = BaseMode::random) {
    FlowConfig cfg;
    cfg.channels = C;
    cfg.layers = layers;
    cfg.hidden = hidden;
    cfg.seed = seed;
    cfg.base = base;
    return build_flow(cfg);
}

Vector uniform_point(Index C, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Vector x(C);
    for (Index c = 0; c < C; ++c) x(c) = u(rng);
    return x;
}

Matrix gaussian_rows(Index n, const Vector& mean, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix out(n, mean.size());
    for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < mean.size(); ++c) out(i, c) = mean(c) + z(rng);
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome identity_init() {
    double worst = 0.0;
    for (Index C : {1, 2, 5}) {
        auto m = flow(C, 1, 3, 0, BaseMode::fixed_zero);
        std::mt19937_64 rng(static_cast<std::uint64_t>(C));
        for (int k = 0; k < 10; ++k) {
            Vector x = uniform_point(C, rng, 3.0);
            auto r = m.forward(x);
            worst = std::max({worst, (r.z - x).cwiseAbs().maxCoeff(), std::abs(r.logdet)});
        }
        worst = std::max(worst, std::abs(m.log_density(Vector::Zero(C)) + 0.5 * static_cast<double>(C) * kLog2Pi));
    }
    return {worst <= 1e-12, "max deviation " + fmt(worst) + " (tol 1e-12)"};
}

Outcome gradient_check() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto m = flow(3, seed, 2, 8);
        oracle::randomize(m, 500 + seed, 0.5);
        std::mt19937_64 rng(seed + 50);
        Matrix batch(4, 3);
        for (Index b = 0; b < 4; ++b) batch.row(b) = uniform_point(3, rng, 1.5).transpose();
        const auto analytic = nll_and_grad(m, batch).grad.flat();
        const auto numeric = oracle::fd_gradient(m, batch);
        for (std::size_t k = 0; k < analytic.size(); ++k)
            worst = std::max(worst, oracle::rel_err(analytic[k], numeric[k]));
    }
    return {worst <= 1e-4, "max relative error " + fmt(worst) + " over 5 seeds (tol 1e-4)"};
}

Outcome jacobian_check() {
    double worst = 0.0;
    std::mt19937_64 rng(3);
    auto m = flow(3, 9);
    oracle::randomize(m, 10, 0.5);
    for (int k = 0; k < 20; ++k) {
        Vector x = uniform_point(3, rng, 2.0);
        const Matrix J = oracle::fd_jacobian([&](const Vector& v) { return m.forward(v).z; }, x);
        worst = std::max(worst, oracle::rel_err(std::exp(m.forward(x).logdet), J.determinant()));
    }
    return {worst <= 1e-4, "max relative error " + fmt(worst) + " over 20 points (tol 1e-4)"};
}

Outcome invertibility() {
    double worst = 0.0;
    std::mt19937_64 rng(4);
    auto m = flow(3, 11);
    oracle::randomize(m, 12, 0.6);
    for (int k = 0; k < 100; ++k) {
        Vector x = uniform_point(3, rng, 3.0);
        worst = std::max(worst, (m.inverse(m.forward(x).z) - x).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-6, "max inf-norm error " + fmt(worst) + " over 100 points (tol 1e-6)"};
}

Outcome density_normalization() {
    double worst = 0.0;
    std::string detail;
    for (Index C : {1, 2}) {
        const double step = C == 1 ? 1e-3 : 0.02;
        auto random_flow = flow(C, 20 + static_cast<std::uint64_t>(C));
        oracle::randomize(random_flow, 21, 0.4);
        auto trained = flow(C, 22);
        train(trained, gaussian_rows(2048, Vector::Constant(C, 0.5), 23), TrainConfig{5, 0.005, 128, 24});
        for (const auto* m : {&random_flow, &trained}) {
            const double mass = oracle::density_mass(*m, -10.0, 10.0, step);
            worst = std::max(worst, std::abs(mass - 1.0));
            detail += (detail.empty() ? "" : ", ") + fmt(mass);
        }
    }
    return {worst <= 1e-2, "masses " + detail + " (tol 1e-2)"};
}

Outcome gaussian_fit() {
    Vector mean(2);
    mean << 0.7, -0.4;
    auto m = flow(2, 7);
    const Matrix data = gaussian_rows(4096, mean, 8);
    train(m, data, TrainConfig{5, 0.005, 128, 9});
    const double nll = nll_and_grad(m, data).loss;
    return {std::abs(nll - 2.8379) <= 0.1, "mean NLL " + fmt(nll) + " vs 2.8379 (tol 0.1)"};
}

Outcome checkerboard_fusion() {
    bool ok = true;
    for (Index n = 1; n <= 14; ++n) {
        auto [m, mb] = make_checkerboard(n);
        ok = ok && m.visible_count() == (n * n + 1) / 2 && mb.visible_count() == n * n / 2;
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) ok = ok && m.visible(i, j) != mb.visible(i, j);
    }
    ok = ok && make_checkerboard(14).first.visible_count() == 98;

    PixelGrid constant{Matrix::Constant(224, 224, 0.7), 16};
    auto [m, mb] = make_checkerboard(14);
    ReferenceBackbone bb;
    const auto r1 = bb.reconstruct(apply_mask(constant, m), m);
    const auto r2 = bb.reconstruct(apply_mask(constant, mb), mb);
    ok = ok && r1.pixels == constant.pixels && r2.pixels == constant.pixels;
    ok = ok && fuse(r1, r2, m).pixels == constant.pixels;

    PixelGrid a{Matrix::Constant(224, 224, 1.0), 16}, b{Matrix::Constant(224, 224, 2.0), 16};
    const auto f = fuse(a, b, m);
    for (Index i = 0; i < 14; ++i)
        for (Index j = 0; j < 14; ++j)
            ok = ok && f.patch(i, j).isConstant(m.visible(i, j) ? 2.0 : 1.0, 0.0);
    return {ok, ok ? "complementary masks, 98/98 visible, exact constant reconstruction and fusion sourcing"
                   : "a mask or fusion property failed"};
}

Outcome admm() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 3.0);
    double worst_mean = 0.0;
    bool argmax_ok = true;
    for (int trial = 0; trial < 100; ++trial) {
        Matrix x(4, 196), x_hat(4, 196);
        for (Index i = 0; i < 4; ++i)
            for (Index t = 0; t < 196; ++t) {
                x(i, t) = n(rng) + 5.0;
                x_hat(i, t) = n(rng);
            }
        const auto stats = window_stats(x);
        const Matrix out = map_distribution(x_hat, stats);
        for (Index c = 0; c < 4; ++c) worst_mean = std::max(worst_mean, std::abs(out.row(c).mean() - stats.mu(c)));
        const Matrix lit = map_distribution(x_hat, stats, AdmmMode::literal);
        for (Index c = 0; c < 4; ++c) {
            Index p = 0, q = 0;
            x_hat.row(c).maxCoeff(&p);
            lit.row(c).maxCoeff(&q);
            argmax_ok = argmax_ok && p == q;
        }
    }
    return {worst_mean <= 1e-10 && argmax_ok,
            "max mean deviation " + fmt(worst_mean) + " (tol 1e-10), literal argmax " +
                (argmax_ok ? "preserved" : "moved")};
}

Outcome metric_oracles() {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_pairs = 0.0, worst_vus = 0.0;
    bool monotone = true;
    for (std::size_t T = 2; T <= 10; ++T) {
        std::vector<double> s(T);
        for (auto& v : s) v = u(rng);
        for (std::uint32_t bits = 1; bits + 1 < (1u << T); ++bits) {
            std::vector<int> y(T);
            for (std::size_t i = 0; i < T; ++i) y[i] = (bits >> i) & 1u;
            const double auc = auc_roc(s, y);
            worst_pairs = std::max(worst_pairs, std::abs(auc - oracle::pair_count_auc(s, {y.begin(), y.end()})));
            const std::vector<int> zero{0};
            worst_vus = std::max({worst_vus, std::abs(vus(s, y, zero, CurveKind::roc) - auc),
                                  std::abs(vus(s, y, zero, CurveKind::pr) - auc_pr(s, y))});
            if (T == 10 && bits % 37 == 0) {
                std::vector<double> t(T);
                std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(4.0 * v) - 3.0; });
                const auto a = evaluate(s, y, {0, 1, 2}), b = evaluate(t, y, {0, 1, 2});
                monotone = monotone && a.auc_roc == b.auc_roc && a.auc_pr == b.auc_pr && a.vus_roc == b.vus_roc &&
                           a.vus_pr == b.vus_pr;
            }
        }
    }
    return {worst_pairs <= 1e-12 && worst_vus <= 1e-12 && monotone,
            "pair-count deviation " + fmt(worst_pairs) + ", vus{0} deviation " + fmt(worst_vus) +
                ", monotone invariance " + (monotone ? "holds" : "broken")};
}

DetectionResult synthetic_run(AnomalyKind kind, SyntheticPair& pair) {
    RunConfig cfg;
    cfg.seed = 7;
    pair = gen_synthetic_pair(kind, 2000, 3, cfg.seed, cfg.window);
    ReferenceBackbone bb;
    return run_detection(pair.train, pair.test, cfg, bb);
}

Outcome spike_end_to_end() {
    SyntheticPair pair;
    const auto r = synthetic_run(AnomalyKind::spike, pair);
    const double auc = r.metrics ? r.metrics->auc_roc : 0.0;
    return {auc >= 0.9, "AUC-ROC " + fmt(auc) + " (need >= 0.9)"};
}

Outcome plateau_gain() {
    SyntheticPair pair;
    const auto r = synthetic_run(AnomalyKind::plateau, pair);
    const auto& y = *pair.test.labels;
    const double combined = auc_roc({r.scores.s.data(), static_cast<std::size_t>(r.scores.s.size())}, y);
    const double mae_only = auc_roc({r.scores.s_mae.data(), static_cast<std::size_t>(r.scores.s_mae.size())}, y);
    return {combined - mae_only >= 0.05,
            "AUC-ROC S " + fmt(combined) + " vs S_MAE " + fmt(mae_only) + " (need gain >= 0.05)"};
}

Outcome cli_determinism() {
    const fs::path dir = fs::temp_directory_path() / "vanad_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "config.json") << R"({"seed": 7})";
    const std::string cli = VANAD_CLI_PATH;
    auto sh = [](const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); };
    if (sh(cli + " synth --kind spike --length 2000 --vars 3 --config " + (dir / "config.json").string() +
           " --out " + (dir / "data").string()) != 0)
        return {false, "synth failed"};
    for (const char* run : {"a", "b"})
        if (sh(cli + " detect --train " + (dir / "data/train.csv").string() + " --test " +
               (dir / "data/test.csv").string() + " --config " + (dir / "config.json").string() + " --out " +
               (dir / run).string()) != 0)
            return {false, std::string("detect run ") + run + " failed"};
    const auto a = slurp(dir / "a/scores.csv"), b = slurp(dir / "b/scores.csv");
    return {!a.empty() && a == b, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different")};
}

}  // namespace

int main() {
    report(1, "identity initialization", identity_init);
    report(2, "gradient check", gradient_check);
    report(3, "jacobian check", jacobian_check);
    report(4, "invertibility", invertibility);
    report(5, "density normalization", density_normalization);
    report(6, "gaussian fit", gaussian_fit);
    report(7, "checkerboard and fusion", checkerboard_fusion);
    report(8, "distribution mapping", admm);
    report(9, "metric oracles", metric_oracles);
    report(10, "spike synthetic end-to-end", spike_end_to_end);
    report(11, "plateau synthetic, density term gain", plateau_gain);
    report(12, "detect determinism", cli_determinism);
    std::printf("%d of 12 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
