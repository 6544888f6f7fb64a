#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgen/box.hpp"

namespace lgen {

struct PointCloud {
    struct Point {
        double x = 0, y = 0, z = 0;
        double intensity = 0;
        int instance = -1;  // optional per-point tag
        std::string cls;
    };
    std::vector<Point> points;

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    void append(const PointCloud& other) {
        points.insert(points.end(), other.points.begin(), other.points.end());
    }
};

struct RangeImage {
    int h = 0, w = 0;
    double f_up = 0, f_down = 0;      // radians
    std::vector<double> depth;        // h*w, 0 = empty
    std::vector<double> intensity;    // h*w

    RangeImage() = default;
    RangeImage(int h_, int w_, double fup, double fdown)
        : h(h_), w(w_), f_up(fup), f_down(fdown),
          depth(static_cast<size_t>(h_) * static_cast<size_t>(w_), 0.0),
          intensity(static_cast<size_t>(h_) * static_cast<size_t>(w_), 0.0) {
        if (h_ < 1 || w_ < 1 || fup + fdown <= 0)
            throw std::invalid_argument("RangeImage: invalid dims or fov");
    }

    double& d(int v, int u) { return depth[static_cast<size_t>(v * w + u)]; }
    double d(int v, int u) const { return depth[static_cast<size_t>(v * w + u)]; }
    double& inten(int v, int u) { return intensity[static_cast<size_t>(v * w + u)]; }
    double inten(int v, int u) const { return intensity[static_cast<size_t>(v * w + u)]; }
    bool valid(int v, int u) const { return d(v, u) > 0; }

    std::vector<uint8_t> valid_mask() const {
        std::vector<uint8_t> m(depth.size());
        for (size_t i = 0; i < depth.size(); ++i) m[i] = depth[i] > 0 ? 1 : 0;
        return m;
    }
};

inline constexpr double kDefaultFovUp = 10.0 * kPi / 180.0;
inline constexpr double kDefaultFovDown = 30.0 * kPi / 180.0;

struct ProjectionStats {
    int64_t skipped_origin = 0;   // points at d == 0
    int64_t dropped_by_depth = 0; // lost a collision to a nearer point
};

// Spherical projection:
//   u = (1/2)(1 - atan2(y,x)/pi) W
//   v = (1 - (asin(z/d) + f_up)/f) H
// floored and clamped; pixel collisions keep the nearer point.
inline RangeImage project(const PointCloud& pc, int h, int w,
                          double f_up = kDefaultFovUp, double f_down = kDefaultFovDown,
                          ProjectionStats* stats = nullptr) {
    RangeImage img(h, w, f_up, f_down);
    double f = f_up + f_down;
    for (const auto& p : pc.points) {
        double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
        if (d <= 0) {
            if (stats) stats->skipped_origin++;
            continue;
        }
        double uf = 0.5 * (1.0 - std::atan2(p.y, p.x) / kPi) * w;
        double vf = (1.0 - (std::asin(p.z / d) + f_up) / f) * h;
        int u = std::clamp(static_cast<int>(std::floor(uf)), 0, w - 1);
        int v = std::clamp(static_cast<int>(std::floor(vf)), 0, h - 1);
        if (img.d(v, u) > 0 && img.d(v, u) <= d) {
            if (stats) stats->dropped_by_depth++;
            continue;
        }
        if (img.d(v, u) > 0 && stats) stats->dropped_by_depth++;
        img.d(v, u) = d;
        img.inten(v, u) = p.intensity;
    }
    return img;
}

// One point per valid pixel, on the pixel-center ray at the stored depth.
inline PointCloud unproject(const RangeImage& img) {
    PointCloud out;
    double f = img.f_up + img.f_down;
    for (int v = 0; v < img.h; ++v)
        for (int u = 0; u < img.w; ++u) {
            double d = img.d(v, u);
            if (d <= 0) continue;
            double az = kPi * (1.0 - 2.0 * (u + 0.5) / img.w);
            double el = (1.0 - (v + 0.5) / img.h) * f - img.f_up;
            PointCloud::Point p;
            p.x = d * std::cos(el) * std::cos(az);
            p.y = d * std::cos(el) * std::sin(az);
            p.z = d * std::sin(el);
            p.intensity = img.inten(v, u);
            out.points.push_back(p);
        }
    return out;
}

// Binary foreground mask plus 2x2 max-pooled pyramid levels.
inline std::vector<uint8_t> foreground_mask(const RangeImage& fg) {
    return fg.valid_mask();
}

inline std::vector<uint8_t> downsample_mask(const std::vector<uint8_t>& mask, int h,
                                            int w) {
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("downsample_mask: dims must be even");
    std::vector<uint8_t> out(static_cast<size_t>(h / 2) * (w / 2), 0);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            if (mask[static_cast<size_t>(v * w + u)])
                out[static_cast<size_t>((v / 2) * (w / 2) + u / 2)] = 1;
    return out;
}

inline std::vector<std::vector<uint8_t>> mask_pyramid(const RangeImage& fg,
                                                      int levels) {
    std::vector<std::vector<uint8_t>> out;
    out.push_back(foreground_mask(fg));
    int h = fg.h, w = fg.w;
    for (int i = 1; i < levels; ++i) {
        out.push_back(downsample_mask(out.back(), h, w));
        h /= 2;
        w /= 2;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary file format: "LLRI" | version u32 | H u32 | W u32 | f_up f32 |
// f_down f32 | H*W f32 depth | H*W f32 intensity (little-endian).
// ---------------------------------------------------------------------------

inline constexpr uint32_t kRangeImageVersion = 1;

inline void save_range_image(const std::string& path, const RangeImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_range_image: cannot open " + path);
    os.write("LLRI", 4);
    auto w32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto wf = [&](float v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    w32(kRangeImageVersion);
    w32(static_cast<uint32_t>(img.h));
    w32(static_cast<uint32_t>(img.w));
    wf(static_cast<float>(img.f_up));
    wf(static_cast<float>(img.f_down));
    for (double d : img.depth) wf(static_cast<float>(d));
    for (double i : img.intensity) wf(static_cast<float>(i));
    if (!os) throw std::runtime_error("save_range_image: write failed for " + path);
}

inline RangeImage load_range_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_range_image: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LLRI", 4) != 0)
        throw std::runtime_error("load_range_image: bad magic in " + path);
    auto r32 = [&]() {
        uint32_t v;
        is.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto rf = [&]() {
        float v;
        is.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    uint32_t version = r32();
    if (version != kRangeImageVersion)
        throw std::runtime_error("load_range_image: unsupported version");
    int h = static_cast<int>(r32());
    int w = static_cast<int>(r32());
    double fu = rf(), fd = rf();
    RangeImage img(h, w, fu, fd);
    for (double& d : img.depth) d = rf();
    for (double& i : img.intensity) i = rf();
    if (!is) throw std::runtime_error("load_range_image: truncated file " + path);
    return img;
}

}  // namespace lgen
