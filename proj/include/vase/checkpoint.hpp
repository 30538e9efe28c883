#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vase/tensor.hpp"

namespace vase {

template <typename S>
struct NamedParam {
    std::string name;
    TensorT<S> tensor;
};

// Flat binary checkpoint: magic "VASE1", then per-parameter records of
// (u32 name length, name bytes, u32 rank, u32 dims..., float32 LE data).
namespace ckpt {

inline constexpr char kMagic[5] = {'V', 'A', 'S', 'E', '1'};

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
    std::uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace ckpt

template <typename S>
void save_checkpoint(const std::string& path, const std::vector<NamedParam<S>>& params) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "checkpoint: cannot open " + path + " for writing");
    os.write(ckpt::kMagic, 5);
    for (const auto& p : params) {
        ckpt::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        ckpt::write_u32(os, static_cast<std::uint32_t>(p.tensor.rank()));
        for (size_t d = 0; d < p.tensor.rank(); ++d)
            ckpt::write_u32(os, static_cast<std::uint32_t>(p.tensor.shape()[d]));
        for (Index i = 0; i < p.tensor.size(); ++i)
            ckpt::write_f32(os, static_cast<float>(p.tensor.values()(i)));
    }
    check(os.good(), "checkpoint: write to " + path + " failed");
}

// Loads values into matching names; every parameter in `params` must be
// present in the file with an identical shape.
template <typename S>
void load_checkpoint(const std::string& path, std::vector<NamedParam<S>>& params) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "checkpoint: cannot open " + path);
    char magic[5];
    is.read(magic, 5);
    check(is.good() && std::memcmp(magic, ckpt::kMagic, 5) == 0,
          "checkpoint: bad magic in " + path);
    std::vector<bool> loaded(params.size(), false);
    while (true) {
        const std::uint32_t name_len = ckpt::read_u32(is);
        if (is.eof()) break;
        check(is.good() && name_len < 4096, "checkpoint: corrupt record header in " + path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = ckpt::read_u32(is);
        check(is.good() && rank <= 8, "checkpoint: corrupt rank in " + path);
        Shape shape(rank);
        Index n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<Index>(ckpt::read_u32(is));
            n *= shape[d];
        }
        ArrX<S> data(n);
        for (Index i = 0; i < n; ++i) data(i) = static_cast<S>(ckpt::read_f32(is));
        check(is.good() || is.eof(), "checkpoint: truncated data in " + path);
        for (size_t i = 0; i < params.size(); ++i) {
            if (params[i].name != name) continue;
            check(params[i].tensor.shape() == shape,
                  "checkpoint: shape mismatch for '" + name + "': file has " + shape_str(shape) +
                      ", model has " + shape_str(params[i].tensor.shape()));
            params[i].tensor.values() = data;
            loaded[i] = true;
        }
    }
    for (size_t i = 0; i < params.size(); ++i)
        check(loaded[i], "checkpoint: parameter '" + params[i].name + "' missing from " + path);
}

}  // namespace vase
