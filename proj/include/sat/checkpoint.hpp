#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sat/optim.hpp"
#include "sat/tensor.hpp"

namespace sat {

// Checkpoint payload: "SATM" magic, format version, name/shape table, then
// one little-endian float32 array per parameter in table order. The exact
// byte layout is documented in docs/checkpoint_format.md.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }
inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

} // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(const std::string& path, const ParamList<S>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write("SATM", 4);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        detail::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(p.tensor.rank()));
        for (std::size_t d : p.tensor.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
    }
    for (const auto& p : params)
        for (S v : p.tensor.data()) detail::write_f32(os, static_cast<float>(v));
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

/// Loads values into an existing parameter list; names and shapes must match
/// the file's table exactly (same order).
template <typename S>
void load_checkpoint(const std::string& path, ParamList<S>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "SATM")
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    const std::uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = detail::read_u32(is);
    if (count != params.size())
        throw std::runtime_error("checkpoint: file has " + std::to_string(count) +
                                 " tensors, model has " + std::to_string(params.size()));
    for (auto& p : params) {
        const std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (name != p.name)
            throw std::runtime_error("checkpoint: expected parameter '" + p.name + "', file has '" +
                                     name + "'");
        const std::uint32_t rank = detail::read_u32(is);
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_u32(is);
        if (shape != p.tensor.shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + p.name + "': file " +
                                     shape_str(shape) + ", model " + shape_str(p.tensor.shape()));
    }
    for (auto& p : params)
        for (S& v : p.tensor.data()) v = static_cast<S>(detail::read_f32(is));
    if (!is) throw std::runtime_error("checkpoint: truncated payload in '" + path + "'");
}

} // namespace sat
