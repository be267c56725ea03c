#pragma once

#include "vanad/core.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace vanad {

enum class CurveKind { roc, pr };

namespace detail {

inline void check_lengths(std::size_t scores, std::size_t labels) {
    if (scores != labels)
        throw Error("metrics", "length mismatch: " + std::to_string(scores) + " scores, " +
                                   std::to_string(labels) + " labels");
    if (scores == 0) throw Error("metrics", "no scores");
}

/// Indices sorted by descending score; equal scores end up adjacent.
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

/// Sweeps thresholds over distinct scores (ties form one step) and calls
/// step(tp, fp, tp_prev, fp_prev) with cumulative positive/negative weight.
template <class Step>
void sweep(std::span<const double> scores, std::span<const double> weight, Step&& step) {
    const auto idx = descending_order(scores);
    double tp = 0.0, fp = 0.0;
    for (std::size_t k = 0; k < idx.size();) {
        const double tp_prev = tp, fp_prev = fp;
        const double s = scores[idx[k]];
        for (; k < idx.size() && scores[idx[k]] == s; ++k) {
            tp += weight[idx[k]];
            fp += 1.0 - weight[idx[k]];
        }
        step(tp, fp, tp_prev, fp_prev);
    }
}

}  // namespace detail

/// ROC area with per-point positive weight w (negative weight 1 - w).
/// Binary weights give the usual AUC-ROC with ties counted as one half.
inline double weighted_auc_roc(std::span<const double> scores, std::span<const double> weight) {
    detail::check_lengths(scores.size(), weight.size());
    const double pos = std::accumulate(weight.begin(), weight.end(), 0.0);
    const double neg = static_cast<double>(weight.size()) - pos;
    if (!(pos > 0.0) || !(neg > 0.0)) throw Error("metrics", "degenerate labels");
    double area = 0.0;
    detail::sweep(scores, weight, [&](double tp, double fp, double tp_prev, double fp_prev) {
        area += (fp - fp_prev) * (tp + tp_prev);
    });
    return std::clamp(area / (2.0 * pos * neg), 0.0, 1.0);
}

/// Average precision: sum over threshold steps of recall increment times precision.
inline double weighted_auc_pr(std::span<const double> scores, std::span<const double> weight) {
    detail::check_lengths(scores.size(), weight.size());
    const double pos = std::accumulate(weight.begin(), weight.end(), 0.0);
    if (!(pos > 0.0)) throw Error("metrics", "no positive labels");
    double ap = 0.0;
    detail::sweep(scores, weight, [&](double tp, double fp, double tp_prev, double) {
        if (tp > tp_prev) ap += (tp - tp_prev) * (tp / (tp + fp));
    });
    return std::clamp(ap / pos, 0.0, 1.0);
}

inline std::vector<double> to_weights(std::span<const int> labels) {
    std::vector<double> w(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw Error("metrics", "labels must be 0 or 1");
        w[i] = labels[i];
    }
    return w;
}

inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_lengths(scores.size(), labels.size());
    return weighted_auc_roc(scores, to_weights(labels));
}

inline double auc_pr(std::span<const double> scores, std::span<const int> labels) {
    detail::check_lengths(scores.size(), labels.size());
    return weighted_auc_pr(scores, to_weights(labels));
}

/// Linear decay of the binary labels over `buffer` steps on each side of every
/// anomaly range: soft(t) = max(0, 1 - d(t) / (buffer + 1)), d = distance to
/// the nearest anomalous step.
inline std::vector<double> soft_labels(std::span<const int> labels, int buffer) {
    if (buffer < 0) throw Error("metrics", "buffer must be non-negative");
    const std::size_t T = labels.size();
    constexpr std::size_t kFar = std::numeric_limits<std::size_t>::max() / 2;
    std::vector<std::size_t> dist(T, kFar);
    std::size_t last = kFar;
    for (std::size_t t = 0; t < T; ++t) {
        if (labels[t]) last = t;
        if (last != kFar) dist[t] = t - last;
    }
    last = kFar;
    for (std::size_t t = T; t-- > 0;) {
        if (labels[t]) last = t;
        if (last != kFar) dist[t] = std::min(dist[t], last - t);
    }
    std::vector<double> soft(T, 0.0);
    const double width = static_cast<double>(buffer) + 1.0;
    for (std::size_t t = 0; t < T; ++t)
        if (dist[t] != kFar) soft[t] = std::max(0.0, 1.0 - static_cast<double>(dist[t]) / width);
    return soft;
}

/// Range-aware volume: the weighted curve area averaged over buffer levels.
inline double vus(std::span<const double> scores, std::span<const int> labels,
                  std::span<const int> buffer_levels, CurveKind kind) {
    detail::check_lengths(scores.size(), labels.size());
    if (buffer_levels.empty()) throw Error("metrics", "no buffer levels");
    std::vector<double> per_level(buffer_levels.size());
    parallel_for(buffer_levels.size(), [&](std::size_t i) {
        const int level = buffer_levels[i];
        const auto soft = soft_labels(labels, level);
        const bool all_zero = std::all_of(soft.begin(), soft.end(), [](double v) { return v == 0.0; });
        const bool all_one = std::all_of(soft.begin(), soft.end(), [](double v) { return v == 1.0; });
        if (all_zero || all_one)
            throw Error("metrics", "degenerate soft labels at buffer " + std::to_string(level));
        per_level[i] = kind == CurveKind::roc ? weighted_auc_roc(scores, soft) : weighted_auc_pr(scores, soft);
    });
    double sum = 0.0;
    for (double v : per_level) sum += v;
    return sum / static_cast<double>(buffer_levels.size());
}

inline std::vector<int> default_buffer_levels() { return {0, 2, 4, 6, 8, 10, 12, 14, 16}; }

struct MetricsReport {
    double auc_roc = 0.0;
    double auc_pr = 0.0;
    double vus_roc = 0.0;
    double vus_pr = 0.0;
    std::vector<int> buffer_levels;

    /// key=value lines, one per metric.
    std::string to_text() const {
        auto num = [](double v) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        std::string levels;
        for (std::size_t i = 0; i < buffer_levels.size(); ++i)
            levels += (i ? "," : "") + std::to_string(buffer_levels[i]);
        return "auc_roc=" + num(auc_roc) + "\nauc_pr=" + num(auc_pr) + "\nvus_roc=" + num(vus_roc) +
               "\nvus_pr=" + num(vus_pr) + "\nbuffer_levels=" + levels + "\n";
    }
};

inline bool has_both_classes(std::span<const int> labels) {
    const bool pos = std::any_of(labels.begin(), labels.end(), [](int v) { return v == 1; });
    const bool neg = std::any_of(labels.begin(), labels.end(), [](int v) { return v == 0; });
    return pos && neg;
}

inline MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels,
                              std::vector<int> buffer_levels = default_buffer_levels()) {
    MetricsReport r;
    r.auc_roc = auc_roc(scores, labels);
    r.auc_pr = auc_pr(scores, labels);
    r.vus_roc = vus(scores, labels, buffer_levels, CurveKind::roc);
    r.vus_pr = vus(scores, labels, buffer_levels, CurveKind::pr);
    r.buffer_levels = std::move(buffer_levels);
    return r;
}

}  // namespace vanad
