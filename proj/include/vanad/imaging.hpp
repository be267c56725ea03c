#pragma once

#include "vanad/core.hpp"
#include "vanad/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace vanad {

/// Square single-channel raster split into (side / patch_size)^2 patches.
struct PixelGrid {
    Matrix pixels;
    Index patch_size = 1;

    Index side() const { return pixels.rows(); }
    Index grid_side() const { return pixels.rows() / patch_size; }

    auto patch(Index i, Index j) { return pixels.block(i * patch_size, j * patch_size, patch_size, patch_size); }
    auto patch(Index i, Index j) const {
        return pixels.block(i * patch_size, j * patch_size, patch_size, patch_size);
    }
};

/// Per-variable min-max scaling into [0, 1]; degenerate rows become 0.5.
inline Matrix normalize_window(const WindowView& w) {
    Matrix out(w.data.rows(), w.data.cols());
    for (Index c = 0; c < w.data.rows(); ++c) {
        const double lo = w.norm_lo(c);
        const double span = w.norm_hi(c) - lo;
        if (span <= 0.0) {
            out.row(c).setConstant(0.5);
            continue;
        }
        for (Index t = 0; t < w.data.cols(); ++t)
            out(c, t) = std::clamp((w.data(c, t) - lo) / span, 0.0, 1.0);
    }
    return out;
}

/// Align-corners bilinear resampling. Output index i samples source coordinate
/// i * (h - 1) / (dst_h - 1), so equal sizes are an exact copy.
inline Matrix resize_bilinear(const Matrix& src, Index dst_h, Index dst_w) {
    const Index h = src.rows();
    const Index w = src.cols();
    if (h < 1 || w < 1 || dst_h < 1 || dst_w < 1) throw Error("imaging", "resize with empty shape");
    if (h == dst_h && w == dst_w) return src;

    auto coords = [](Index n_src, Index n_dst) {
        std::vector<std::pair<Index, double>> out(static_cast<std::size_t>(n_dst));
        for (Index i = 0; i < n_dst; ++i) {
            double x = n_dst == 1 ? 0.0
                                  : static_cast<double>(i) * static_cast<double>(n_src - 1) /
                                        static_cast<double>(n_dst - 1);
            Index x0 = std::min<Index>(static_cast<Index>(std::floor(x)), n_src - 1);
            out[static_cast<std::size_t>(i)] = {x0, x - static_cast<double>(x0)};
        }
        return out;
    };
    const auto ys = coords(h, dst_h);
    const auto xs = coords(w, dst_w);

    Matrix out(dst_h, dst_w);
    for (Index i = 0; i < dst_h; ++i) {
        const auto [y0, fy] = ys[static_cast<std::size_t>(i)];
        const Index y1 = std::min(y0 + 1, h - 1);
        for (Index j = 0; j < dst_w; ++j) {
            const auto [x0, fx] = xs[static_cast<std::size_t>(j)];
            const Index x1 = std::min(x0 + 1, w - 1);
            const double top = std::lerp(src(y0, x0), src(y0, x1), fx);
            const double bottom = std::lerp(src(y1, x0), src(y1, x1), fx);
            out(i, j) = std::lerp(top, bottom, fy);
        }
    }
    return out;
}

inline PixelGrid window_to_image(const WindowView& w, Index resolution, Index patch_size) {
    if (patch_size < 1 || resolution < 1 || resolution % patch_size != 0)
        throw Error("imaging", "resolution " + std::to_string(resolution) +
                                   " is not divisible by patch size " + std::to_string(patch_size));
    return PixelGrid{resize_bilinear(normalize_window(w), resolution, resolution), patch_size};
}

/// Resamples back to C x L, clamps to [0, 1] and undoes the min-max scaling.
inline Matrix image_to_window(const PixelGrid& img, const WindowView& w) {
    Matrix p = resize_bilinear(img.pixels, w.channels(), w.length()).cwiseMax(0.0).cwiseMin(1.0);
    for (Index c = 0; c < p.rows(); ++c) {
        const double lo = w.norm_lo(c);
        const double span = w.norm_hi(c) - lo;
        if (span <= 0.0)
            p.row(c).setConstant(lo);
        else
            p.row(c) = (p.row(c).array() * span + lo).matrix();
    }
    return p;
}

}  // namespace vanad
