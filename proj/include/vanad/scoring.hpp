#pragma once

#include "vanad/admm.hpp"
#include "vanad/config.hpp"
#include "vanad/core.hpp"
#include "vanad/dataset.hpp"
#include "vanad/flow.hpp"
#include "vanad/metrics.hpp"
#include "vanad/reconstruction.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace vanad {

/// Per-step anomaly scores with s = s_mae + lambda * s_nf.
struct ScoreSeries {
    Vector s_mae;
    Vector s_nf;
    Vector s;
    double lambda = 0.0;
};

/// Global per-variable affine map applied to flow inputs.
struct Standardizer {
    Vector mean;
    Vector scale;

    static Standardizer identity(Index C) { return {Vector::Zero(C), Vector::Ones(C)}; }

    /// Mean and population standard deviation of each variable (rows of C x T);
    /// zero-variance variables keep unit scale.
    static Standardizer fit(const Matrix& values) {
        Standardizer s;
        s.mean = values.rowwise().mean();
        s.scale.resize(values.rows());
        for (Index c = 0; c < values.rows(); ++c) {
            const double sd = std::sqrt((values.row(c).array() - s.mean(c)).square().mean());
            s.scale(c) = sd > 0.0 ? sd : 1.0;
        }
        return s;
    }

    Vector apply(const Vector& x) const { return ((x - mean).array() / scale.array()).matrix(); }
};

struct ScoringOptions {
    Index resolution = 224;
    Index patch = 16;
    double lambda = 0.05;
    AdmmMode admm_mode = AdmmMode::self_standardize;
    double admm_eps = kDefaultAdmmEps;
};

struct WindowScores {
    Vector s_mae;
    Vector s_nf;
    Vector s;
};

/// Scores every step of one window from its reconstruction and the flow density
/// of the original observation.
inline WindowScores score_window(const WindowView& w, Backbone& backbone, const FlowModel& flow,
                                 const ScoringOptions& opt, const Standardizer& standardizer) {
    if (flow.channels() != w.channels())
        throw Error("scoring", "flow has " + std::to_string(flow.channels()) + " variables, window has " +
                                   std::to_string(w.channels()));
    const Matrix x_hat = reconstruct_window(w, backbone, opt.resolution, opt.patch);
    const Matrix x_tilde =
        map_distribution(x_hat, window_stats(w.data, opt.admm_eps), opt.admm_mode, opt.admm_eps);

    const Index L = w.length();
    WindowScores out{Vector(L), Vector(L), Vector(L)};
    for (Index t = 0; t < L; ++t) {
        out.s_mae(t) = (x_tilde.col(t) - w.data.col(t)).squaredNorm();
        out.s_nf(t) = -flow.log_density(standardizer.apply(w.data.col(t)));
        out.s(t) = out.s_mae(t) + opt.lambda * out.s_nf(t);
    }
    return out;
}

/// Reconstructs every window of `series` and averages overlaps onto the full axis.
inline Matrix reconstruct_series(const SeriesMatrix& series, Backbone& backbone, const RunConfig& cfg) {
    const auto windows = split_windows(series, cfg.window, cfg.resolved_stride());
    std::vector<std::pair<Index, Matrix>> blocks(windows.size());
    parallel_for(windows.size(), [&](std::size_t i) {
        blocks[i] = {windows[i].start, reconstruct_window(windows[i], backbone, cfg.resolution, cfg.patch)};
    });
    return stitch_columns(blocks, series.length());
}

struct DetectionResult {
    ScoreSeries scores;
    std::optional<MetricsReport> metrics;
    std::string notice;  // why metrics were skipped, if they were
    FlowModel flow;
    TrainingReport training;
    Standardizer standardizer;
};

/// Phase 1 fits the flow to reconstructions of the training split; phase 2
/// scores each test window and stitches; phase 3 evaluates when labels allow.
inline DetectionResult run_detection(const SeriesMatrix& train_split, const SeriesMatrix& test_split,
                                     const RunConfig& cfg, Backbone& backbone) {
    cfg.validate();
    const Index C = train_split.channels();
    if (train_split.length() == 0 || test_split.length() == 0) throw Error("scoring", "empty split");
    if (test_split.channels() != C)
        throw Error("scoring", "train split has " + std::to_string(C) + " variables, test split has " +
                                   std::to_string(test_split.channels()));

    DetectionResult result;
    result.standardizer =
        cfg.standardize == Standardize::global ? Standardizer::fit(train_split.values) : Standardizer::identity(C);

    const Matrix recon = reconstruct_series(train_split, backbone, cfg);
    Matrix data(recon.cols(), C);
    for (Index t = 0; t < recon.cols(); ++t) data.row(t) = result.standardizer.apply(recon.col(t)).transpose();

    FlowConfig fc;
    fc.channels = C;
    fc.layers = cfg.flow_layers;
    fc.hidden = cfg.flow_hidden;
    fc.seed = sub_seed(cfg.seed, "flow-init");
    fc.base = cfg.base;
    fc.conditioner = cfg.conditioner;
    result.flow = build_flow(fc);
    result.training =
        train(result.flow, data, TrainConfig{cfg.epochs, cfg.lr, cfg.batch, sub_seed(cfg.seed, "shuffle")});

    const ScoringOptions opt{cfg.resolution, cfg.patch, cfg.lambda, cfg.admm_mode, cfg.admm_eps};
    const auto windows = split_windows(test_split, cfg.window, cfg.resolved_stride());
    std::vector<WindowScores> per_window(windows.size());
    parallel_for(windows.size(), [&](std::size_t i) {
        per_window[i] = score_window(windows[i], backbone, result.flow, opt, result.standardizer);
    });

    std::vector<std::pair<Index, Matrix>> blocks;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        Matrix b(2, windows[i].length());
        b.row(0) = per_window[i].s_mae.transpose();
        b.row(1) = per_window[i].s_nf.transpose();
        blocks.emplace_back(windows[i].start, std::move(b));
    }
    const Matrix stitched = stitch_columns(blocks, test_split.length());
    auto& sc = result.scores;
    sc.lambda = cfg.lambda;
    sc.s_mae = stitched.row(0).transpose();
    sc.s_nf = stitched.row(1).transpose();
    sc.s = sc.s_mae + cfg.lambda * sc.s_nf;

    if (!test_split.labels) {
        result.notice = "test split has no labels; metrics skipped";
    } else if (!has_both_classes(*test_split.labels)) {
        result.notice = "test labels contain a single class; metrics skipped";
    } else {
        std::span<const double> s(sc.s.data(), static_cast<std::size_t>(sc.s.size()));
        result.metrics = evaluate(s, *test_split.labels, cfg.buffers);
    }
    return result;
}

/// Header t,s_mae,s_nf,s; values with 17 significant digits.
inline void write_scores_csv(const std::filesystem::path& path, const ScoreSeries& sc) {
    std::ofstream out(path);
    if (!out) throw Error("scoring", "cannot write '" + path.string() + "'");
    out << "t,s_mae,s_nf,s\n";
    for (Index t = 0; t < sc.s.size(); ++t)
        out << t << ',' << detail::format_double(sc.s_mae(t)) << ',' << detail::format_double(sc.s_nf(t)) << ','
            << detail::format_double(sc.s(t)) << '\n';
    if (!out) throw Error("scoring", "failed writing '" + path.string() + "'");
}

inline ScoreSeries read_scores_csv(const std::filesystem::path& path) {
    const SeriesMatrix m = load_csv(path);
    const auto& names = m.variable_names;
    auto col = [&](const std::string& name) {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw Error("scoring", "scores file lacks column '" + name + "'");
        return Vector(m.values.row(it - names.begin()).transpose());
    };
    ScoreSeries sc;
    sc.s_mae = col("s_mae");
    sc.s_nf = col("s_nf");
    sc.s = col("s");
    return sc;
}

}  // namespace vanad
