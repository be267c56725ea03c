#pragma once

#include "vanad/core.hpp"
#include "vanad/dataset.hpp"
#include "vanad/imaging.hpp"

#include <algorithm>
#include <memory>
#include <utility>
#include <vector>

namespace vanad {

/// N x N patch visibility grid (true = visible to the backbone).
class CheckerboardMask {
public:
    CheckerboardMask() = default;
    explicit CheckerboardMask(Index side, bool fill = false)
        : side_(side), cells_(static_cast<std::size_t>(side * side), fill ? 1 : 0) {}

    Index side() const { return side_; }
    bool visible(Index i, Index j) const { return cells_[index(i, j)] != 0; }
    void set(Index i, Index j, bool v) { cells_[index(i, j)] = v ? 1 : 0; }

    Index visible_count() const {
        return static_cast<Index>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
    }

    CheckerboardMask complement() const {
        CheckerboardMask out = *this;
        for (auto& c : out.cells_) c = c ? 0 : 1;
        return out;
    }

    friend bool operator==(const CheckerboardMask&, const CheckerboardMask&) = default;

private:
    std::size_t index(Index i, Index j) const { return static_cast<std::size_t>(i * side_ + j); }

    Index side_ = 0;
    std::vector<std::uint8_t> cells_;
};

/// (M, complement of M) with M(i, j) visible iff i + j is even.
inline std::pair<CheckerboardMask, CheckerboardMask> make_checkerboard(Index n) {
    if (n < 1) throw Error("reconstruction", "checkerboard side must be positive");
    CheckerboardMask m(n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) m.set(i, j, (i + j) % 2 == 0);
    return {m, m.complement()};
}

/// Zeroes every patch that the mask hides.
inline PixelGrid apply_mask(const PixelGrid& img, const CheckerboardMask& mask) {
    if (img.side() % img.patch_size != 0 || img.grid_side() != mask.side())
        throw Error("reconstruction", "mask side " + std::to_string(mask.side()) +
                                          " does not match image grid side " +
                                          std::to_string(img.grid_side()));
    PixelGrid out = img;
    for (Index i = 0; i < mask.side(); ++i)
        for (Index j = 0; j < mask.side(); ++j)
            if (!mask.visible(i, j)) out.patch(i, j).setZero();
    return out;
}

/// Anything that fills in the hidden patches of a masked image. Implementations
/// return a full image of the same shape; only hidden patches are read back.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual PixelGrid reconstruct(const PixelGrid& masked, const CheckerboardMask& visible) = 0;
    virtual std::string name() const = 0;
};

/// Deterministic in-process stand-in for a pretrained masked autoencoder: each
/// hidden pixel is the mean of the co-located pixels of its visible 4-neighbour
/// patches. Stateless, so safe to call concurrently.
class ReferenceBackbone final : public Backbone {
public:
    PixelGrid reconstruct(const PixelGrid& masked, const CheckerboardMask& visible) override {
        const Index n = visible.side();
        if (masked.grid_side() != n)
            throw Error("reconstruction", "mask side does not match image grid side");
        PixelGrid out = masked;
        bool warned = false;
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < n; ++j) {
                if (visible.visible(i, j)) continue;
                auto dst = out.patch(i, j);
                // Mean taken as first neighbour plus mean offset, exact on flat regions.
                Matrix anchor;
                Matrix offset = Matrix::Zero(masked.patch_size, masked.patch_size);
                int count = 0;
                const Index di[] = {-1, 1, 0, 0};
                const Index dj[] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const Index a = i + di[k];
                    const Index b = j + dj[k];
                    if (a < 0 || b < 0 || a >= n || b >= n || !visible.visible(a, b)) continue;
                    if (count == 0) anchor = masked.patch(a, b);
                    offset += masked.patch(a, b) - anchor;
                    ++count;
                }
                if (count > 0) {
                    dst = anchor + offset / static_cast<double>(count);
                    continue;
                }
                dst.setZero();
                if (!warned) {
                    warn("reconstruction", "hidden patch has no visible neighbours; filled with 0");
                    warned = true;
                }
            }
        }
        return out;
    }

    std::string name() const override { return "reference"; }
};

/// Takes each patch from the reconstruction whose input had it hidden:
/// r1 where `m` hides the patch, r2 where `m` shows it.
inline PixelGrid fuse(const PixelGrid& r1, const PixelGrid& r2, const CheckerboardMask& m) {
    if (r1.pixels.rows() != r2.pixels.rows() || r1.pixels.cols() != r2.pixels.cols() ||
        r1.patch_size != r2.patch_size || r1.grid_side() != m.side())
        throw Error("reconstruction", "fuse inputs have mismatched shapes");
    PixelGrid out = r2;
    for (Index i = 0; i < m.side(); ++i)
        for (Index j = 0; j < m.side(); ++j)
            if (!m.visible(i, j)) out.patch(i, j) = r1.patch(i, j);
    return out;
}

namespace detail {

inline void check_response(const PixelGrid& request, const PixelGrid& response, Index start) {
    if (response.pixels.rows() != request.pixels.rows() ||
        response.pixels.cols() != request.pixels.cols())
        throw Error("reconstruction", "backbone returned " + std::to_string(response.pixels.rows()) +
                                          "x" + std::to_string(response.pixels.cols()) +
                                          " image, expected " + std::to_string(request.side()) +
                                          "x" + std::to_string(request.side()) +
                                          " (window start " + std::to_string(start) + ")");
    if (!response.pixels.allFinite())
        throw Error("reconstruction",
                    "backbone returned non-finite pixels (window start " + std::to_string(start) + ")");
}

}  // namespace detail

/// Image the window, reconstruct both checkerboard halves, fuse, and map back
/// to series values.
inline Matrix reconstruct_window(const WindowView& w, Backbone& backbone, Index resolution,
                                 Index patch_size) {
    const PixelGrid image = window_to_image(w, resolution, patch_size);
    const auto [m, m_bar] = make_checkerboard(image.grid_side());
    const PixelGrid in1 = apply_mask(image, m);
    const PixelGrid in2 = apply_mask(image, m_bar);

    auto call = [&](const PixelGrid& in, const CheckerboardMask& mask) {
        PixelGrid r;
        try {
            r = backbone.reconstruct(in, mask);
        } catch (const Error& e) {
            throw Error(e.module(), std::string(e.what()).substr(e.module().size() + 2) +
                                        " (window start " + std::to_string(w.start) + ")");
        } catch (const std::exception& e) {
            throw Error("reconstruction", std::string("backbone failure: ") + e.what() +
                                              " (window start " + std::to_string(w.start) + ")");
        }
        detail::check_response(in, r, w.start);
        r.patch_size = in.patch_size;
        return r;
    };
    const PixelGrid r1 = call(in1, m);
    const PixelGrid r2 = call(in2, m_bar);
    return image_to_window(fuse(r1, r2, m), w);
}

}  // namespace vanad
