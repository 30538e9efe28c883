#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "vase/rng.hpp"
#include "vase/tensor.hpp"

namespace vase {

// ---------------------------------------------------------------------------
// IDX file format (big-endian dimensions, magic 0x803 images / 0x801 labels)
// ---------------------------------------------------------------------------

struct IdxImages {
    Index count = 0;
    Index rows = 0;
    Index cols = 0;
    std::vector<std::uint8_t> pixels;  // count * rows * cols
    std::vector<std::uint8_t> labels;  // empty when no label file was given
};

namespace idx {

inline std::uint32_t read_be32(std::istream& is, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    check(is.good(), "idx: truncated file " + path + " at byte offset " + std::to_string(offset));
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>((v >> 24) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>(v & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace idx

inline IdxImages load_idx(const std::string& image_path, const std::string& label_path = "") {
    std::ifstream is(image_path, std::ios::binary);
    check(is.good(), "idx: cannot open " + image_path);
    const std::uint32_t magic = idx::read_be32(is, image_path, 0);
    check(magic == 0x00000803u, "idx: bad magic 0x" + std::to_string(magic) + " in " +
                                    image_path + " at byte offset 0 (expected 0x803)");
    IdxImages out;
    out.count = static_cast<Index>(idx::read_be32(is, image_path, 4));
    out.rows = static_cast<Index>(idx::read_be32(is, image_path, 8));
    out.cols = static_cast<Index>(idx::read_be32(is, image_path, 12));
    const std::size_t need = static_cast<std::size_t>(out.count * out.rows * out.cols);
    out.pixels.resize(need);
    is.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(need));
    check(static_cast<std::size_t>(is.gcount()) == need,
          "idx: truncated pixel data in " + image_path + " at byte offset " +
              std::to_string(16 + is.gcount()));

    if (!label_path.empty()) {
        std::ifstream ls(label_path, std::ios::binary);
        check(ls.good(), "idx: cannot open " + label_path);
        const std::uint32_t lmagic = idx::read_be32(ls, label_path, 0);
        check(lmagic == 0x00000801u, "idx: bad magic in " + label_path +
                                         " at byte offset 0 (expected 0x801)");
        const Index n = static_cast<Index>(idx::read_be32(ls, label_path, 4));
        check(n == out.count, "idx: label count " + std::to_string(n) +
                                  " does not match image count " + std::to_string(out.count));
        out.labels.resize(static_cast<std::size_t>(n));
        ls.read(reinterpret_cast<char*>(out.labels.data()), n);
        check(ls.gcount() == n, "idx: truncated label data in " + label_path +
                                    " at byte offset " + std::to_string(8 + ls.gcount()));
    }
    return out;
}

inline void save_idx(const std::string& image_path, const IdxImages& data,
                     const std::string& label_path = "") {
    std::ofstream os(image_path, std::ios::binary);
    check(os.good(), "idx: cannot open " + image_path + " for writing");
    idx::write_be32(os, 0x00000803u);
    idx::write_be32(os, static_cast<std::uint32_t>(data.count));
    idx::write_be32(os, static_cast<std::uint32_t>(data.rows));
    idx::write_be32(os, static_cast<std::uint32_t>(data.cols));
    os.write(reinterpret_cast<const char*>(data.pixels.data()),
             static_cast<std::streamsize>(data.pixels.size()));
    if (!label_path.empty()) {
        std::ofstream ls(label_path, std::ios::binary);
        idx::write_be32(ls, 0x00000801u);
        idx::write_be32(ls, static_cast<std::uint32_t>(data.labels.size()));
        ls.write(reinterpret_cast<const char*>(data.labels.data()),
                 static_cast<std::streamsize>(data.labels.size()));
    }
}

// ---------------------------------------------------------------------------
// Procedural sprites
// ---------------------------------------------------------------------------

inline constexpr int kSpritePalette = 8;

// Indicator of shape `id` on the unit box [-1,1]^2.
inline bool sprite_inside(int id, double u, double v) {
    const double r = std::sqrt(u * u + v * v);
    switch (id) {
        case 0: return r <= 0.82;                                        // disc
        case 1: return std::max(std::abs(u), std::abs(v)) <= 0.72;       // square
        case 2: return v >= -0.75 && std::abs(u) <= 0.75 * (0.85 - v) / 1.6;  // triangle
        case 3: return (std::abs(u) <= 0.28 && std::abs(v) <= 0.85) ||
                       (std::abs(v) <= 0.28 && std::abs(u) <= 0.85);     // plus
        case 4: return std::abs(u) + std::abs(v) <= 0.95;                // diamond
        case 5: return r <= 0.82 && r >= 0.45;                           // ring
        case 6: return (std::abs(u - v) <= 0.3 || std::abs(u + v) <= 0.3) &&
                       std::max(std::abs(u), std::abs(v)) <= 0.8;        // saltire
        case 7: return std::abs(v) <= 0.35 && std::abs(u) <= 0.85;       // bar
        default: throw std::invalid_argument("sprite: shape id " + std::to_string(id) +
                                             " exceeds the palette of " +
                                             std::to_string(kSpritePalette));
    }
}

// Anti-aliased rendering by 3x3 supersampling into a px-by-px tile.
inline ArrX<double> render_sprite(int shape_id, int px, double size_scale, double intensity) {
    check(px >= 2, "sprite: tile extent too small");
    check(size_scale > 0, "sprite: size must be positive");
    ArrX<double> img = ArrX<double>::Zero(px * px);
    const double half = px / 2.0;
    for (int i = 0; i < px; ++i) {
        for (int j = 0; j < px; ++j) {
            int hits = 0;
            for (int si = 0; si < 3; ++si) {
                for (int sj = 0; sj < 3; ++sj) {
                    const double y = (i + (si + 0.5) / 3.0 - half) / (half * size_scale);
                    const double x = (j + (sj + 0.5) / 3.0 - half) / (half * size_scale);
                    if (sprite_inside(shape_id, x, -y)) ++hits;
                }
            }
            img(i * px + j) = intensity * hits / 9.0;
        }
    }
    return img;
}

// Pastes `content` (h x w) onto a zero canvas (ch x cw) displaced from the
// centred position by integer (dx, dy); out-of-frame content is clipped.
inline ArrX<double> moving_transform(const ArrX<double>& content, Index h, Index w, int dx,
                                     int dy, Index ch, Index cw) {
    check(content.size() == h * w, "moving_transform: content size mismatch");
    ArrX<double> canvas = ArrX<double>::Zero(ch * cw);
    const Index top = (ch - h) / 2 + dy;
    const Index left = (cw - w) / 2 + dx;
    for (Index i = 0; i < h; ++i) {
        const Index ci = top + i;
        if (ci < 0 || ci >= ch) continue;
        for (Index j = 0; j < w; ++j) {
            const Index cj = left + j;
            if (cj < 0 || cj >= cw) continue;
            canvas(ci * cw + cj) = content(i * w + j);
        }
    }
    return canvas;
}

inline void invert_transform(ArrX<double>& image) {
    check(image.minCoeff() >= 0.0 && image.maxCoeff() <= 1.0,
          "invert_transform: pixels must lie in [0,1]");
    image = 1.0 - image;
}

// ---------------------------------------------------------------------------
// Piecewise-stationary schedule
// ---------------------------------------------------------------------------

enum class SourceKind { Sprites, Idx };

struct SegmentSpec {
    SourceKind source = SourceKind::Sprites;
    std::vector<int> sprite_shapes;  // sprites: palette subset
    std::string idx_images;          // idx: file paths
    std::string idx_labels;
    bool move = false;    // uniform integer offsets instead of a centred paste
    bool invert = false;  // x -> 1 - x after pasting
    long budget = 0;      // training steps in this segment
    bool augment = false; // imagination-driven augmentation requested
};

struct StreamSchedule {
    Index canvas_h = 32;
    Index canvas_w = 32;
    Index sprite_px = 14;
    std::vector<SegmentSpec> segments;

    long total_steps() const {
        long t = 0;
        for (const auto& s : segments) t += s.budget;
        return t;
    }

    // Segment active at `step`, or -1 past the end.
    int segment_at(long step) const {
        long acc = 0;
        for (size_t i = 0; i < segments.size(); ++i) {
            acc += segments[i].budget;
            if (step < acc) return static_cast<int>(i);
        }
        return -1;
    }

    long segment_start(int seg) const {
        long acc = 0;
        for (int i = 0; i < seg; ++i) acc += segments[static_cast<size_t>(i)].budget;
        return acc;
    }
};

struct FactorRecord {
    int shape_id = 0;     // object identity (sprite id or idx label)
    double x = 0.0;       // position, normalized to [-1,1]
    double y = 0.0;
    double size = 1.0;    // sprite-only nuisance factors
    double intensity = 1.0;
    int segment = 0;
};

template <typename S>
struct LabeledBatch {
    TensorT<S> images;  // [B, canvas_h * canvas_w]
    std::vector<FactorRecord> factors;
    int segment = 0;
};

// Deterministic stream over the schedule: (seed, step) fully determines a
// batch, and segment changes are abrupt. Evaluation draws use a separate
// substream so they never collide with training batches.
template <typename S>
class StreamGenerator {
public:
    StreamGenerator(StreamSchedule schedule, std::uint64_t seed)
        : sched_(std::move(schedule)), seed_(seed) {
        idx_cache_.resize(sched_.segments.size());
        for (size_t i = 0; i < sched_.segments.size(); ++i) {
            auto& seg = sched_.segments[i];
            if (seg.source == SourceKind::Idx)
                idx_cache_[i] = load_idx(seg.idx_images, seg.idx_labels);
            else
                for (int id : seg.sprite_shapes)
                    check(id >= 0 && id < kSpritePalette,
                          "schedule: sprite id " + std::to_string(id) + " exceeds the palette");
        }
    }

    const StreamSchedule& schedule() const { return sched_; }

    // Largest legal offsets for a content box inside the canvas.
    std::pair<int, int> max_offsets(Index content_h, Index content_w) const {
        return {static_cast<int>((sched_.canvas_w - content_w) / 2),
                static_cast<int>((sched_.canvas_h - content_h) / 2)};
    }

    std::optional<LabeledBatch<S>> next_batch(long step, Index batch) const {
        const int seg = sched_.segment_at(step);
        if (seg < 0) return std::nullopt;  // stream exhausted
        Rng rng = Rng::for_stream(seed_, 0x7261696eULL ^ static_cast<std::uint64_t>(step));
        return draw(seg, batch, rng);
    }

    // IID draw from one segment's distribution, independent of the
    // training stream (for probes and renders).
    LabeledBatch<S> segment_batch(int segment, long draw_key, Index batch) const {
        check(segment >= 0 && segment < static_cast<int>(sched_.segments.size()),
              "segment_batch: segment out of range");
        Rng rng = Rng::for_stream(seed_ ^ 0x65766131ULL,
                                  static_cast<std::uint64_t>(draw_key) * 31 +
                                      static_cast<std::uint64_t>(segment));
        return draw(segment, batch, rng);
    }

private:
    LabeledBatch<S> draw(int seg_index, Index batch, Rng& rng) const {
        const SegmentSpec& seg = sched_.segments[static_cast<size_t>(seg_index)];
        LabeledBatch<S> out;
        out.segment = seg_index;
        out.images = TensorT<S>::zeros({batch, sched_.canvas_h * sched_.canvas_w});
        out.factors.resize(static_cast<size_t>(batch));
        for (Index b = 0; b < batch; ++b) {
            FactorRecord f;
            f.segment = seg_index;
            ArrX<double> content;
            Index content_h = 0, content_w = 0;
            if (seg.source == SourceKind::Sprites) {
                const int pick = static_cast<int>(
                    rng.uniform_int(0, static_cast<long>(seg.sprite_shapes.size()) - 1));
                f.shape_id = seg.sprite_shapes[static_cast<size_t>(pick)];
                f.size = rng.uniform(0.75, 1.15);
                f.intensity = rng.uniform(0.55, 1.0);
                content = render_sprite(f.shape_id, static_cast<int>(sched_.sprite_px), f.size,
                                        f.intensity);
                content_h = content_w = sched_.sprite_px;
            } else {
                const auto& data = *idx_cache_[static_cast<size_t>(seg_index)];
                const Index pick = rng.uniform_int(0, data.count - 1);
                content_h = data.rows;
                content_w = data.cols;
                content = ArrX<double>::Zero(content_h * content_w);
                for (Index i = 0; i < content_h * content_w; ++i)
                    content(i) =
                        data.pixels[static_cast<size_t>(pick * content_h * content_w + i)] / 255.0;
                f.shape_id = data.labels.empty() ? 0
                                                 : static_cast<int>(
                                                       data.labels[static_cast<size_t>(pick)]);
            }

            auto [mx, my] = max_offsets(content_h, content_w);
            int dx = 0, dy = 0;
            if (seg.move) {
                dx = static_cast<int>(rng.uniform_int(-mx, mx));
                dy = static_cast<int>(rng.uniform_int(-my, my));
            }
            f.x = mx > 0 ? static_cast<double>(dx) / mx : 0.0;
            f.y = my > 0 ? static_cast<double>(dy) / my : 0.0;

            ArrX<double> canvas = moving_transform(content, content_h, content_w, dx, dy,
                                                   sched_.canvas_h, sched_.canvas_w);
            if (seg.invert) invert_transform(canvas);
            out.images.values().segment(b * canvas.size(), canvas.size()) =
                canvas.cast<S>();
            out.factors[static_cast<size_t>(b)] = f;
        }
        return out;
    }

    StreamSchedule sched_;
    std::uint64_t seed_;
    std::vector<std::optional<IdxImages>> idx_cache_;
};

// Named schedule presets. The synthetic presets keep the repository
// runnable with no downloads; idx-based variants are built from explicit
// file paths in the config.
inline StreamSchedule make_preset(const std::string& name, Index canvas, long steps_per_segment) {
    StreamSchedule s;
    s.canvas_h = s.canvas_w = canvas;
    s.sprite_px = std::max<Index>(8, (canvas * 7) / 16);
    auto seg = [&](std::vector<int> shapes, bool move, bool invert, bool augment = false) {
        SegmentSpec sp;
        sp.source = SourceKind::Sprites;
        sp.sprite_shapes = std::move(shapes);
        sp.move = move;
        sp.invert = invert;
        sp.budget = steps_per_segment;
        sp.augment = augment;
        return sp;
    };
    if (name == "ablation3") {
        // moving set A -> static set B -> moving set B
        s.segments = {seg({0, 1, 2}, true, false), seg({3, 4, 5}, false, false),
                      seg({3, 4, 5}, true, false)};
    } else if (name == "five-seq") {
        // moving B -> static A -> inverted static A -> static B -> moving A
        s.segments = {seg({3, 4, 5}, true, false), seg({0, 1, 2}, false, false),
                      seg({0, 1, 2}, false, true), seg({3, 4, 5}, false, false),
                      seg({0, 1, 2}, true, false)};
    } else if (name == "imagine2") {
        // moving set A (policy learns to act) -> static set B with augmentation
        s.segments = {seg({0, 1, 2}, true, false), seg({3, 4, 5}, false, false, true)};
    } else if (name == "single-moving") {
        s.segments = {seg({0, 1, 2}, true, false)};
    } else if (name == "single-static") {
        s.segments = {seg({0, 1, 2}, false, false)};
    } else {
        throw std::invalid_argument("unknown schedule preset '" + name + "'");
    }
    return s;
}

}  // namespace vase
