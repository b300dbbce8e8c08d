#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "a3fpn/tensor.hpp"

namespace a3fpn {

// Min-max normalizes a plane to 8-bit; an all-equal plane maps to mid-gray 128.
inline std::vector<unsigned char> heatmap_bytes(const std::vector<float>& plane) {
    float lo = plane[0], hi = plane[0];
    for (float v : plane) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<unsigned char> bytes(plane.size());
    if (hi == lo) {
        for (auto& b : bytes) b = 128;
        return bytes;
    }
    for (std::size_t i = 0; i < plane.size(); ++i) {
        const double t = (plane[i] - lo) / static_cast<double>(hi - lo);
        bytes[i] = static_cast<unsigned char>(std::lround(t * 255.0));
    }
    return bytes;
}

// channel == -1 selects the channel mean. Batch item 0 is exported.
inline std::vector<unsigned char> extract_heatmap(const Tensor& t, int channel) {
    if (t.rank() != 4) throw UsageError("export-heatmap: input must be a rank-4 tensor");
    if (channel >= t.c()) throw UsageError("export-heatmap: channel index out of range");
    std::vector<float> plane(static_cast<std::size_t>(t.h()) * t.w());
    for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * t.w() + x;
            if (channel >= 0) {
                plane[i] = t.at(0, channel, y, x);
            } else {
                double acc = 0.0;
                for (int c = 0; c < t.c(); ++c) acc += t.at(0, c, y, x);
                plane[i] = static_cast<float>(acc / t.c());
            }
        }
    return heatmap_bytes(plane);
}

// Binary PGM (P5), 8-bit.
inline void write_pgm(const std::string& path, int width, int height,
                      const std::vector<unsigned char>& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed to write PGM: " + path);
}

inline void export_heatmap(const Tensor& t, int channel, const std::string& path) {
    write_pgm(path, t.w(), t.h(), extract_heatmap(t, channel));
}

} // namespace a3fpn
