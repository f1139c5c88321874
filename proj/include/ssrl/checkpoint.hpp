#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssrl/tensor.hpp"

namespace ssrl {

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline constexpr std::array<char, 7> kCheckpointMagic = {'S', 'S', 'R', 'L', 'W', '1', '\0'};

inline void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    is.read(reinterpret_cast<char*>(b.data()), 8);
    if (!is) throw CheckpointError("checkpoint truncated while reading integer");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline float get_f32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    is.read(reinterpret_cast<char*>(b.data()), 4);
    if (!is) throw CheckpointError("checkpoint truncated while reading data");
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | b[static_cast<std::size_t>(i)];
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace detail

/// Named float32 tensors, the on-disk currency for model parameters and for
/// dataset containers. All integers are 64-bit little-endian; values are
/// 32-bit little-endian IEEE reals in row-major order.
using TensorMap = std::map<std::string, Tensor<float>>;

inline void save_checkpoint(const std::string& path, const TensorMap& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    os.write(detail::kCheckpointMagic.data(), detail::kCheckpointMagic.size());
    detail::put_u64(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        detail::put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u64(os, t.rank());
        for (std::size_t d = 0; d < t.rank(); ++d) detail::put_u64(os, t.extent(d));
        if constexpr (std::endian::native == std::endian::little) {
            os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
        } else {
            for (std::size_t i = 0; i < t.size(); ++i) detail::put_f32(os, t[i]);
        }
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

inline TensorMap load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    std::array<char, 7> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != detail::kCheckpointMagic)
        throw CheckpointError("bad checkpoint magic in " + path);
    const std::uint64_t count = detail::get_u64(is);
    TensorMap out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = detail::get_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw CheckpointError("checkpoint truncated while reading name");
        const std::uint64_t rank = detail::get_u64(is);
        Shape shape(rank);
        for (auto& e : shape) e = detail::get_u64(is);
        Tensor<float> t(shape);
        if constexpr (std::endian::native == std::endian::little) {
            is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
            if (!is) throw CheckpointError("checkpoint truncated while reading data");
        } else {
            for (std::size_t k = 0; k < t.size(); ++k) t[k] = detail::get_f32(is);
        }
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

} // namespace ssrl
