#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "vase/networks.hpp"

namespace vase {

// Minimal binary PGM (P5, maxval 255).
inline void write_pgm(const std::string& path, const ArrX<double>& pixels, Index h, Index w) {
    check(pixels.size() == h * w, "write_pgm: size mismatch");
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "write_pgm: cannot open " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (Index i = 0; i < pixels.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, pixels(i)));
        os.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
    }
    check(os.good(), "write_pgm: write failed for " + path);
}

struct PgmImage {
    Index h = 0;
    Index w = 0;
    ArrX<double> pixels;
};

inline PgmImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "read_pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    check(magic == "P5", "read_pgm: not a binary PGM: " + path);
    long w, h, maxval;
    is >> w >> h >> maxval;
    is.get();
    PgmImage img;
    img.h = h;
    img.w = w;
    img.pixels = ArrX<double>(h * w);
    for (Index i = 0; i < h * w; ++i) img.pixels(i) = is.get() / static_cast<double>(maxval);
    check(is.good() || is.eof(), "read_pgm: truncated " + path);
    return img;
}

struct TraversalGrid {
    Index rows = 0;       // latent dims
    Index cols = 0;       // sweep points
    Index tile_h = 0;
    Index tile_w = 0;
    ArrX<double> pixels;  // (rows*tile_h) x (cols*tile_w)
};

// For each latent dim, sweeps that dim across [lo, hi] while holding the
// others at the seed image's posterior mean, and decodes under the given
// environment. Layout: one row per latent, one column per sweep value.
template <typename S>
TraversalGrid render_traversals(const VaseNetworks<S>& nets, const TensorT<S>& seed_image,
                                int env, double lo = -2.0, double hi = 2.0, Index steps = 11) {
    check(seed_image.rank() == 2 && seed_image.dim(0) == 1,
          "render_traversals: expected a single seed image row");
    NoGradGuard ng;
    const auto& mc = nets.config();
    const Index n = mc.latent_dim;
    const Index th = mc.image_h, tw = mc.image_w;

    auto enc = nets.encode(seed_image);
    VecX<S> base(n);
    for (Index i = 0; i < n; ++i) base(i) = enc.mu.values()(i);

    TraversalGrid grid;
    grid.rows = n;
    grid.cols = steps;
    grid.tile_h = th;
    grid.tile_w = tw;
    grid.pixels = ArrX<double>::Zero(n * th * steps * tw);

    TensorT<S> z = TensorT<S>::zeros({steps, n});
    for (Index dim = 0; dim < n; ++dim) {
        for (Index c = 0; c < steps; ++c) {
            for (Index j = 0; j < n; ++j) z.values()(c * n + j) = base(j);
            z.values()(c * n + dim) =
                static_cast<S>(lo + (hi - lo) * static_cast<double>(c) /
                                        static_cast<double>(steps - 1));
        }
        TensorT<S> out = nets.decode(z, env);
        for (Index c = 0; c < steps; ++c) {
            for (Index i = 0; i < th; ++i) {
                for (Index j = 0; j < tw; ++j) {
                    const double v = static_cast<double>(out.values()(c * th * tw + i * tw + j));
                    const Index gi = dim * th + i;
                    const Index gj = c * tw + j;
                    grid.pixels(gi * (steps * tw) + gj) = v;
                }
            }
        }
    }
    return grid;
}

inline void save_traversal_grid(const std::string& path, const TraversalGrid& g) {
    write_pgm(path, g.pixels, g.rows * g.tile_h, g.cols * g.tile_w);
}

// Tiles a batch of images into a roughly square grid (for dream dumps).
template <typename S>
ArrX<double> tile_batch(const TensorT<S>& images, Index h, Index w, Index& out_h, Index& out_w) {
    const Index b = images.dim(0);
    Index cols = 1;
    while (cols * cols < b) ++cols;
    const Index rows = (b + cols - 1) / cols;
    out_h = rows * h;
    out_w = cols * w;
    ArrX<double> grid = ArrX<double>::Zero(out_h * out_w);
    for (Index k = 0; k < b; ++k) {
        const Index r = k / cols, c = k % cols;
        for (Index i = 0; i < h; ++i)
            for (Index j = 0; j < w; ++j)
                grid((r * h + i) * out_w + c * w + j) =
                    static_cast<double>(images.values()(k * h * w + i * w + j));
    }
    return grid;
}

}  // namespace vase
