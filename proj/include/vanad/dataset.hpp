#pragma once

#include "vanad/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace vanad {

/// C variables by T steps, optionally labeled per step.
struct SeriesMatrix {
    Matrix values;                               // C x T
    std::optional<std::vector<int>> labels;      // length T, 0/1
    std::vector<std::string> variable_names;     // empty or length C

    Index channels() const { return values.rows(); }
    Index length() const { return values.cols(); }
};

/// One C x L slice of a series with the per-variable range used for pixel scaling.
struct WindowView {
    Matrix data;  // C x L
    Index start = 0;
    Vector norm_lo;
    Vector norm_hi;

    Index channels() const { return data.rows(); }
    Index length() const { return data.cols(); }
};

enum class AnomalyKind { spike, level_shift, plateau };

inline AnomalyKind parse_anomaly_kind(std::string_view s) {
    if (s == "spike") return AnomalyKind::spike;
    if (s == "level_shift") return AnomalyKind::level_shift;
    if (s == "plateau") return AnomalyKind::plateau;
    throw Error("dataset", "unknown synthetic kind '" + std::string(s) + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        auto b = cell.find_first_not_of(" \t\r");
        auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::optional<double> parse_double(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || first == last) return std::nullopt;
    return v;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Reads a headed CSV. Every column except `label_column` becomes a variable.
/// When `label_column` is given but absent from the header, this is an error
/// unless `label_optional` is set.
inline SeriesMatrix load_csv(const std::filesystem::path& path,
                             const std::optional<std::string>& label_column = std::nullopt,
                             bool label_optional = false) {
    std::ifstream in(path);
    if (!in) throw Error("dataset", "cannot open file '" + path.string() + "'");

    std::string line;
    if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos)
        throw Error("dataset", "empty file '" + path.string() + "'");
    const auto header = detail::split_csv_line(line);

    std::optional<std::size_t> label_idx;
    if (label_column) {
        auto it = std::find(header.begin(), header.end(), *label_column);
        if (it != header.end())
            label_idx = static_cast<std::size_t>(it - header.begin());
        else if (!label_optional)
            throw Error("dataset", "label column '" + *label_column + "' not found");
    }

    SeriesMatrix series;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != label_idx) series.variable_names.push_back(header[j]);
    const std::size_t n_vars = series.variable_names.size();
    if (n_vars == 0 && !label_idx)
        throw Error("dataset", "no variable columns in '" + path.string() + "'");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++row;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw Error("dataset", "row " + std::to_string(row) + " has " +
                                       std::to_string(cells.size()) + " fields, expected " +
                                       std::to_string(header.size()));
        std::vector<double> values;
        values.reserve(n_vars);
        for (std::size_t j = 0; j < cells.size(); ++j) {
            auto v = detail::parse_double(cells[j]);
            if (j == label_idx) {
                if (!v || (*v != 0.0 && *v != 1.0))
                    throw Error("dataset", "label value '" + cells[j] + "' at row " +
                                               std::to_string(row) + " is not 0 or 1");
                labels.push_back(static_cast<int>(*v));
                continue;
            }
            if (!v)
                throw Error("dataset", "non-numeric value at row " + std::to_string(row) +
                                           ", column " + std::to_string(j + 1) + " ('" +
                                           header[j] + "')");
            if (!std::isfinite(*v))
                throw Error("dataset", "non-finite value at row " + std::to_string(row) +
                                           ", column " + std::to_string(j + 1) + " ('" +
                                           header[j] + "')");
            values.push_back(*v);
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw Error("dataset", "empty file '" + path.string() + "'");

    series.values.resize(static_cast<Index>(n_vars), static_cast<Index>(rows.size()));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t c = 0; c < n_vars; ++c)
            series.values(static_cast<Index>(c), static_cast<Index>(t)) = rows[t][c];
    if (label_idx) series.labels = std::move(labels);
    return series;
}

/// Writes variables (named x0.. when unnamed) and, if present, the labels.
inline void write_csv(const std::filesystem::path& path, const SeriesMatrix& series,
                      const std::string& label_column = "label") {
    std::ofstream out(path);
    if (!out) throw Error("dataset", "cannot write file '" + path.string() + "'");
    const Index C = series.channels();
    for (Index c = 0; c < C; ++c) {
        if (c) out << ',';
        out << (series.variable_names.size() == static_cast<std::size_t>(C)
                    ? series.variable_names[static_cast<std::size_t>(c)]
                    : "x" + std::to_string(c));
    }
    if (series.labels) out << ',' << label_column;
    out << '\n';
    for (Index t = 0; t < series.length(); ++t) {
        for (Index c = 0; c < C; ++c) {
            if (c) out << ',';
            out << detail::format_double(series.values(c, t));
        }
        if (series.labels) out << ',' << (*series.labels)[static_cast<std::size_t>(t)];
        out << '\n';
    }
    if (!out) throw Error("dataset", "failed writing '" + path.string() + "'");
}

/// Window start positions: 0, stride, 2*stride, ... plus a tail window anchored
/// at T - L when the regular grid leaves the end uncovered.
inline std::vector<Index> window_starts(Index T, Index L, Index stride) {
    if (L < 1) throw Error("dataset", "window length must be positive");
    if (stride < 1) throw Error("dataset", "stride must be positive");
    if (L > T)
        throw Error("dataset", "window length " + std::to_string(L) + " exceeds series length " +
                                   std::to_string(T));
    std::vector<Index> starts;
    Index s = 0;
    for (; s + L <= T; s += stride) starts.push_back(s);
    if (starts.back() + L < T) starts.push_back(T - L);
    return starts;
}

inline std::vector<WindowView> split_windows(const SeriesMatrix& series, Index L, Index stride) {
    std::vector<WindowView> windows;
    for (Index s : window_starts(series.length(), L, stride)) {
        WindowView w;
        w.data = series.values.middleCols(s, L);
        w.start = s;
        w.norm_lo = w.data.rowwise().minCoeff();
        w.norm_hi = w.data.rowwise().maxCoeff();
        windows.push_back(std::move(w));
    }
    return windows;
}

/// Averages overlapping per-window column blocks back onto a length-T axis.
inline Matrix stitch_columns(const std::vector<std::pair<Index, Matrix>>& blocks, Index T) {
    if (blocks.empty()) throw Error("dataset", "no windows to stitch");
    const Index rows = blocks.front().second.rows();
    Matrix sum = Matrix::Zero(rows, T);
    std::vector<int> count(static_cast<std::size_t>(T), 0);
    for (const auto& [start, block] : blocks) {
        if (block.rows() != rows || start < 0 || start + block.cols() > T)
            throw Error("dataset", "window at " + std::to_string(start) + " does not fit series");
        sum.middleCols(start, block.cols()) += block;
        for (Index t = start; t < start + block.cols(); ++t) ++count[static_cast<std::size_t>(t)];
    }
    for (Index t = 0; t < T; ++t) {
        const int n = count[static_cast<std::size_t>(t)];
        if (n == 0) throw Error("dataset", "timestep " + std::to_string(t) + " uncovered");
        if (n > 1) sum.col(t) /= static_cast<double>(n);
    }
    return sum;
}

inline Vector stitch_scores(const std::vector<std::pair<Index, Vector>>& windows, Index T) {
    std::vector<std::pair<Index, Matrix>> blocks;
    blocks.reserve(windows.size());
    for (const auto& [start, v] : windows) blocks.emplace_back(start, v.transpose());
    return stitch_columns(blocks, T).row(0).transpose();
}

struct SyntheticPair {
    SeriesMatrix train;  // anomaly-free, labels all zero
    SeriesMatrix test;   // injected anomalies, labeled
};

inline constexpr double kSynthPeriod = 50.0;
inline constexpr double kSynthNoise = 0.05;
inline constexpr double kSpikeHeight = 5.0;
inline constexpr int kSpikeCount = 5;
inline constexpr double kLevelShift = 3.0;
inline constexpr Index kLevelShiftLength = 30;
inline constexpr double kPlateauValue = 2.0;

/// Generates a train/test pair that continue the same sinusoids: the train
/// split is steps [0, T) and the test split is steps [T, 2T) of one signal.
/// `window` only matters for plateaus, which span 3 * window steps.
inline SyntheticPair gen_synthetic_pair(AnomalyKind kind, Index T, Index C, std::uint64_t seed,
                                        Index window = 196) {
    if (C < 1) throw Error("dataset", "synthetic series needs at least one variable");
    if (T < 200) throw Error("dataset", "synthetic length must be at least 200, got " + std::to_string(T));
    if (kind == AnomalyKind::plateau && T < 5 * window)
        throw Error("dataset", "T too small to host the injected range: plateau of " +
                                   std::to_string(3 * window) + " steps needs T >= " +
                                   std::to_string(5 * window));

    std::mt19937_64 rng(sub_seed(seed, "synth"));
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> noise(0.0, kSynthNoise);

    Vector phase(C);
    for (Index c = 0; c < C; ++c) phase(c) = phase_dist(rng);

    Matrix full(C, 2 * T);
    for (Index t = 0; t < 2 * T; ++t)
        for (Index c = 0; c < C; ++c)
            full(c, t) = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / kSynthPeriod +
                                  phase(c)) +
                         noise(rng);

    SyntheticPair pair;
    pair.train.values = full.leftCols(T);
    pair.train.labels = std::vector<int>(static_cast<std::size_t>(T), 0);
    pair.test.values = full.rightCols(T);
    std::vector<int> labels(static_cast<std::size_t>(T), 0);

    auto pick = [&](Index lo, Index hi) {  // inclusive
        return std::uniform_int_distribution<Index>(lo, hi)(rng);
    };

    switch (kind) {
    case AnomalyKind::spike: {
        const Index gap = 20;
        std::vector<Index> at;
        while (static_cast<int>(at.size()) < kSpikeCount) {
            Index t = pick(10, T - 11);
            bool isolated = std::all_of(at.begin(), at.end(),
                                        [&](Index u) { return std::abs(u - t) >= gap; });
            if (isolated) at.push_back(t);
        }
        for (Index t : at) {
            Index c = pick(0, C - 1);
            pair.test.values(c, t) += kSpikeHeight;
            labels[static_cast<std::size_t>(t)] = 1;
        }
        break;
    }
    case AnomalyKind::level_shift: {
        Index start = pick(T / 4, 3 * T / 4 - kLevelShiftLength);
        pair.test.values.middleCols(start, kLevelShiftLength).array() += kLevelShift;
        std::fill_n(labels.begin() + start, kLevelShiftLength, 1);
        break;
    }
    case AnomalyKind::plateau: {
        const Index len = 3 * window;
        Index start = pick(window, T - 4 * window);
        pair.test.values.middleCols(start, len).setConstant(kPlateauValue);
        std::fill_n(labels.begin() + start, len, 1);
        break;
    }
    }
    pair.test.labels = std::move(labels);
    return pair;
}

/// The labeled test half of gen_synthetic_pair.
inline SeriesMatrix gen_synthetic(AnomalyKind kind, Index T, Index C, std::uint64_t seed,
                                  Index window = 196) {
    return gen_synthetic_pair(kind, T, C, seed, window).test;
}

}  // namespace vanad
