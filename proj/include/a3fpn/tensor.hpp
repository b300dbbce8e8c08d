#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "a3fpn/common.hpp"

namespace a3fpn {

// Dense row-major array, rank 1..4. Rank-4 tensors are interpreted as
// (batch N, channels C, height H, width W), N-major / W-minor. The engine's
// value type is float32 (see Tensor below); the double instantiation exists
// for high-precision finite differencing.
template <typename T>
struct BasicTensor {
    std::vector<int> shape;
    std::vector<T> data;

    BasicTensor() = default;

    explicit BasicTensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        validate_shape(shape);
        data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    }

    BasicTensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape(shape);
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw ConfigError("tensor data length does not match shape");
    }

    static BasicTensor zeros(std::vector<int> s) { return BasicTensor(std::move(s)); }
    static BasicTensor full(std::vector<int> s, T v) { return BasicTensor(std::move(s), v); }

    static BasicTensor random_uniform(std::vector<int> s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
        BasicTensor t(std::move(s));
        for (T& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t numel() const { return numel_of(shape); }

    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    bool same_shape(const BasicTensor& o) const { return shape == o.shape; }

    // Rank-4 accessors.
    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }

    std::int64_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::int64_t>(in) * c() + ic) * h() + iy) * w() + ix;
    }

    T& at(int in, int ic, int iy, int ix) { return data[static_cast<std::size_t>(index(in, ic, iy, ix))]; }
    T at(int in, int ic, int iy, int ix) const { return data[static_cast<std::size_t>(index(in, ic, iy, ix))]; }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    T operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static void validate_shape(const std::vector<int>& s) {
        if (s.empty() || s.size() > 4) throw ConfigError("tensor rank must be 1..4");
        for (int d : s)
            if (d < 1) throw ConfigError("tensor extents must be >= 1");
    }
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
    BasicTensor<To> out(t.shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<To>(t[i]);
    return out;
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(T)) == 0;
}

// --- A3T binary format -------------------------------------------------------
// magic "A3TF", u32 rank, rank x u32 extents, raw little-endian f32 data.
// No alignment padding anywhere.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("unexpected end of stream while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

inline void write_a3t(std::ostream& os, const Tensor& t) {
    os.write("A3TF", 4);
    detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!os) throw IoError("failed to write A3T stream");
}

inline Tensor read_a3t(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "A3TF", 4) != 0) throw IoError("bad A3T magic");
    const std::uint32_t rank = detail::read_u32(is);
    if (rank < 1 || rank > 4) throw IoError("A3T rank must be 1..4");
    std::vector<int> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = detail::read_u32(is);
        if (d == 0 || d > (1u << 24)) throw IoError("A3T extent out of range");
        shape[i] = static_cast<int>(d);
    }
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw IoError("A3T data truncated");
    return t;
}

inline void save_a3t(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_a3t(os, t);
}

inline Tensor load_a3t(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return read_a3t(is);
}

} // namespace a3fpn
