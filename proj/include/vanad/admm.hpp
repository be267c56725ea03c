#pragma once

#include "vanad/core.hpp"

#include <cmath>
#include <string_view>

namespace vanad {

/// Per-variable mean and eps-regularised population standard deviation.
struct VariableStats {
    Vector mu;
    Vector sigma;
};

enum class AdmmMode {
    self_standardize,  // standardise the reconstruction by its own stats first
    literal,           // x_hat * sigma + mu as written
};

inline AdmmMode parse_admm_mode(std::string_view s) {
    if (s == "default") return AdmmMode::self_standardize;
    if (s == "literal") return AdmmMode::literal;
    throw Error("admm", "unknown mode '" + std::string(s) + "' (expected default or literal)");
}

inline std::string_view to_string(AdmmMode m) {
    return m == AdmmMode::literal ? "literal" : "default";
}

inline constexpr double kDefaultAdmmEps = 1e-5;

inline VariableStats window_stats(const Matrix& x, double eps = kDefaultAdmmEps) {
    if (x.cols() < 1) throw Error("admm", "statistics of an empty window");
    if (!(eps > 0.0)) throw Error("admm", "eps must be positive");
    VariableStats s;
    s.mu = x.rowwise().mean();
    s.sigma.resize(x.rows());
    for (Index c = 0; c < x.rows(); ++c) {
        const double var = (x.row(c).array() - s.mu(c)).square().mean();
        s.sigma(c) = std::sqrt(var + eps);
    }
    return s;
}

/// Moves the reconstruction into the mean/std space of the original window.
inline Matrix map_distribution(const Matrix& x_hat, const VariableStats& original,
                               AdmmMode mode = AdmmMode::self_standardize,
                               double eps = kDefaultAdmmEps) {
    if (x_hat.rows() != original.mu.size() || x_hat.rows() != original.sigma.size())
        throw Error("admm", "reconstruction has " + std::to_string(x_hat.rows()) +
                                " variables, statistics have " + std::to_string(original.mu.size()));
    Matrix out(x_hat.rows(), x_hat.cols());
    if (mode == AdmmMode::literal) {
        for (Index c = 0; c < x_hat.rows(); ++c)
            out.row(c) = (x_hat.row(c).array() * original.sigma(c) + original.mu(c)).matrix();
        return out;
    }
    const VariableStats own = window_stats(x_hat, eps);
    for (Index c = 0; c < x_hat.rows(); ++c)
        out.row(c) = (((x_hat.row(c).array() - own.mu(c)) / own.sigma(c)) * original.sigma(c) +
                      original.mu(c))
                         .matrix();
    return out;
}

}  // namespace vanad
