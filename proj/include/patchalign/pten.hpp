#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchalign/tensor.hpp"

namespace patchalign {

/// Unreadable or malformed file. The message always names the file.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * PTEN container:
 *
 *   bytes 0-3   magic "PTEN"
 *   byte  4     version (1)
 *   byte  5     dtype: 1 = uint8, 2 = float32 little-endian
 *   byte  6     rank r
 *   then        r x uint32 little-endian dims
 *   then        row-major payload
 */
namespace pten {

inline constexpr std::array<char, 4> kMagic = {'P', 'T', 'E', 'N'};
inline constexpr std::uint8_t kVersion = 1;

enum class DType : std::uint8_t { u8 = 1, f32 = 2 };

struct Array {
    DType dtype = DType::f32;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> u8;
    std::vector<float> f32;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Array& a) {
    if (a.dims.size() > 255) throw std::invalid_argument("PTEN rank exceeds 255");
    const std::size_t n = a.count();
    if ((a.dtype == DType::u8 && a.u8.size() != n) || (a.dtype == DType::f32 && a.f32.size() != n))
        throw ShapeError("PTEN payload length does not match dims");
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(a.dtype));
    out.push_back(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) detail::put_u32(out, d);
    if (a.dtype == DType::u8) {
        out.insert(out.end(), a.u8.begin(), a.u8.end());
    } else {
        out.reserve(out.size() + 4 * n);
        for (float f : a.f32) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

/// `name` only labels error messages.
inline Array decode(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    auto fail = [&](const std::string& why) { return ParseError(name + ": " + why); };
    if (bytes.size() < 7) throw fail("truncated header (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kMagic.data(), 4) != 0) throw fail("bad magic, not a PTEN file");
    if (bytes[4] != kVersion) throw fail("unsupported version " + std::to_string(bytes[4]));
    Array a;
    if (bytes[5] == 1) {
        a.dtype = DType::u8;
    } else if (bytes[5] == 2) {
        a.dtype = DType::f32;
    } else {
        throw fail("unknown dtype code " + std::to_string(bytes[5]));
    }
    const std::size_t rank = bytes[6];
    std::size_t offset = 7;
    if (bytes.size() < offset + 4 * rank) throw fail("truncated dims");
    for (std::size_t i = 0; i < rank; ++i, offset += 4) a.dims.push_back(detail::get_u32(bytes.data() + offset));
    const std::size_t n = a.count();
    const std::size_t width = a.dtype == DType::u8 ? 1 : 4;
    if (n != 0 && (bytes.size() - offset) / width < n) throw fail("truncated payload");
    if (bytes.size() - offset != n * width) throw fail("payload length does not match dims");
    if (a.dtype == DType::u8) {
        a.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    } else {
        a.f32.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            a.f32[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + offset + 4 * i));
    }
    return a;
}

inline void write_file(const std::filesystem::path& path, const Array& a) {
    const auto bytes = encode(a);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

inline Array read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode(bytes, path.string());
}

template <typename T>
Array from_tensor(const Tensor<T>& t) {
    Array a;
    a.dtype = DType::f32;
    for (auto d : t.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
    a.f32.assign(t.data().begin(), t.data().end());
    return a;
}

template <typename T>
Tensor<T> to_tensor(const Array& a, const std::string& name) {
    if (a.dtype != DType::f32) throw ParseError(name + ": expected float32 payload");
    Shape shape(a.dims.begin(), a.dims.end());
    for (auto d : shape)
        if (d == 0) throw ParseError(name + ": zero-sized dimension");
    return Tensor<T>::from_data(std::move(shape), std::vector<T>(a.f32.begin(), a.f32.end()));
}

}  // namespace pten

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    pten::write_file(path, pten::from_tensor(t));
}

template <typename T = float>
Tensor<T> read_tensor(const std::filesystem::path& path) {
    return pten::to_tensor<T>(pten::read_file(path), path.string());
}

}  // namespace patchalign
