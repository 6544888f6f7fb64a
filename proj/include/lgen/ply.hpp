#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "lgen/range_image.hpp"

namespace lgen {

namespace detail {

// Stable instance palette via golden-ratio hue stepping; -1 (background) is
// gray.
inline void instance_color(int instance, uint8_t& r, uint8_t& g, uint8_t& b) {
    if (instance < 0) {
        r = g = b = 128;
        return;
    }
    double hue = std::fmod(0.618033988749895 * (instance + 1), 1.0) * 6.0;
    int i = static_cast<int>(hue);
    double f = hue - i;
    double q = 1.0 - f;
    double rr = 0, gg = 0, bb = 0;
    switch (i % 6) {
        case 0: rr = 1; gg = f; break;
        case 1: rr = q; gg = 1; break;
        case 2: gg = 1; bb = f; break;
        case 3: gg = q; bb = 1; break;
        case 4: rr = f; bb = 1; break;
        default: rr = 1; bb = q; break;
    }
    r = static_cast<uint8_t>(55 + 200 * rr);
    g = static_cast<uint8_t>(55 + 200 * gg);
    b = static_cast<uint8_t>(55 + 200 * bb);
}

}  // namespace detail

inline void export_ply(const PointCloud& pc, const std::string& path,
                       bool with_colors = true) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("export_ply: cannot open " + path);
    os << "ply\nformat ascii 1.0\n";
    os << "element vertex " << pc.points.size() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    os << "property float intensity\n";
    if (with_colors)
        os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    os << "end_header\n";
    os.precision(9);
    for (const auto& p : pc.points) {
        os << static_cast<float>(p.x) << " " << static_cast<float>(p.y) << " "
           << static_cast<float>(p.z) << " " << static_cast<float>(p.intensity);
        if (with_colors) {
            uint8_t r, g, b;
            detail::instance_color(p.instance, r, g, b);
            os << " " << int(r) << " " << int(g) << " " << int(b);
        }
        os << "\n";
    }
    if (!os) throw std::runtime_error("export_ply: write failed for " + path);
}

}  // namespace lgen
