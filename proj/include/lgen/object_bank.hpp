#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgen/box.hpp"
#include "lgen/range_image.hpp"
#include "lgen/rng.hpp"
#include "lgen/scene_graph.hpp"

namespace lgen {

// ---------------------------------------------------------------------------
// Point-cloud binary format: "LLPC" | N u64 | N x 4 f32 rows (x,y,z,intensity)
// ---------------------------------------------------------------------------

inline void save_point_cloud(const std::string& path, const PointCloud& pc) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_point_cloud: cannot open " + path);
    os.write("LLPC", 4);
    uint64_t n = pc.points.size();
    os.write(reinterpret_cast<const char*>(&n), 8);
    for (const auto& p : pc.points) {
        float row[4] = {static_cast<float>(p.x), static_cast<float>(p.y),
                        static_cast<float>(p.z), static_cast<float>(p.intensity)};
        os.write(reinterpret_cast<const char*>(row), 16);
    }
    if (!os) throw std::runtime_error("save_point_cloud: write failed for " + path);
}

inline PointCloud load_point_cloud(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_point_cloud: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LLPC", 4) != 0)
        throw std::runtime_error("load_point_cloud: bad magic in " + path);
    uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 8);
    PointCloud pc;
    pc.points.resize(n);
    for (auto& p : pc.points) {
        float row[4];
        is.read(reinterpret_cast<char*>(row), 16);
        p.x = row[0];
        p.y = row[1];
        p.z = row[2];
        p.intensity = row[3];
    }
    if (!is) throw std::runtime_error("load_point_cloud: truncated file " + path);
    return pc;
}

// ---------------------------------------------------------------------------
// Canonical frame helpers: l along x, w along y, h along z, yaw about z.
// ---------------------------------------------------------------------------

inline PointCloud::Point to_box_frame(const PointCloud::Point& p,
                                      const OrientedBox3D& box) {
    double dx = p.x - box.center.x, dy = p.y - box.center.y;
    double c = std::cos(box.yaw), s = std::sin(box.yaw);
    PointCloud::Point q = p;
    q.x = c * dx + s * dy;
    q.y = -s * dx + c * dy;
    q.z = p.z - box.center.z;
    return q;
}

inline PointCloud::Point from_box_frame(const PointCloud::Point& p,
                                        const OrientedBox3D& box) {
    double c = std::cos(box.yaw), s = std::sin(box.yaw);
    PointCloud::Point q = p;
    q.x = c * p.x - s * p.y + box.center.x;
    q.y = s * p.x + c * p.y + box.center.y;
    q.z = p.z + box.center.z;
    return q;
}

inline bool point_in_box(const PointCloud::Point& p, const OrientedBox3D& box,
                         double slack = 0.0) {
    PointCloud::Point q = to_box_frame(p, box);
    return std::fabs(q.x) <= box.l / 2 * (1 + slack) &&
           std::fabs(q.y) <= box.w / 2 * (1 + slack) &&
           std::fabs(q.z) <= box.h / 2 * (1 + slack);
}

// ---------------------------------------------------------------------------
// ObjectBank
// ---------------------------------------------------------------------------

inline constexpr int kMinBankPoints = 10;

struct ObjectBank {
    struct Entry {
        std::string cls;
        PointCloud cloud;  // canonical: centered, yaw 0
        double l = 0, h = 0, w = 0;
    };
    std::vector<Entry> entries;
    int64_t skipped_sparse = 0;  // boxes with too few interior points

    bool has_class(const std::string& cls) const {
        for (const auto& e : entries)
            if (e.cls == cls) return true;
        return false;
    }
};

// Annotation schema matches build_sg_dataset, with a per-scene "points_file"
// naming an LLPC cloud in the same directory as the annotation file.
inline ObjectBank build_bank(const std::string& annotation_file) {
    std::ifstream is(annotation_file);
    if (!is) throw std::runtime_error("build_bank: cannot open " + annotation_file);
    nlohmann::json j;
    is >> j;
    std::filesystem::path base = std::filesystem::path(annotation_file).parent_path();
    ObjectBank bank;
    for (const auto& js : j.at("scenes")) {
        if (!js.contains("points_file")) continue;
        PointCloud pc =
            load_point_cloud((base / js.at("points_file").get<std::string>()).string());
        for (const auto& jb : js.at("boxes")) {
            OrientedBox3D box = box_from_json(jb);
            ObjectBank::Entry e;
            e.cls = jb.at("class").get<std::string>();
            e.l = box.l;
            e.h = box.h;
            e.w = box.w;
            for (const auto& p : pc.points)
                if (point_in_box(p, box)) e.cloud.points.push_back(to_box_frame(p, box));
            if (static_cast<int>(e.cloud.points.size()) < kMinBankPoints) {
                bank.skipped_sparse++;
                continue;
            }
            bank.entries.push_back(std::move(e));
        }
    }
    return bank;
}

inline void save_bank(const std::string& dir, const ObjectBank& bank) {
    std::filesystem::create_directories(dir);
    nlohmann::json index = nlohmann::json::array();
    for (size_t i = 0; i < bank.entries.size(); ++i) {
        const auto& e = bank.entries[i];
        std::string file = "entry_" + std::to_string(i) + ".llpc";
        save_point_cloud((std::filesystem::path(dir) / file).string(), e.cloud);
        index.push_back(
            {{"class", e.cls}, {"size", {e.l, e.h, e.w}}, {"file", file}});
    }
    std::ofstream os((std::filesystem::path(dir) / "index.json").string());
    os << nlohmann::json{{"entries", index},
                         {"skipped_sparse", bank.skipped_sparse}};
    if (!os) throw std::runtime_error("save_bank: write failed in " + dir);
}

inline ObjectBank load_bank(const std::string& dir) {
    std::ifstream is((std::filesystem::path(dir) / "index.json").string());
    if (!is) throw std::runtime_error("load_bank: cannot open index in " + dir);
    nlohmann::json j;
    is >> j;
    ObjectBank bank;
    bank.skipped_sparse = j.value("skipped_sparse", 0);
    for (const auto& je : j.at("entries")) {
        ObjectBank::Entry e;
        e.cls = je.at("class").get<std::string>();
        e.l = je.at("size").at(0);
        e.h = je.at("size").at(1);
        e.w = je.at("size").at(2);
        e.cloud = load_point_cloud(
            (std::filesystem::path(dir) / je.at("file").get<std::string>()).string());
        bank.entries.push_back(std::move(e));
    }
    return bank;
}

// Entry minimizing the L2 norm of log size ratios; ties broken by lowest index.
inline const ObjectBank::Entry& retrieve(const ObjectBank& bank, const std::string& cls,
                                         double l, double h, double w) {
    if (l <= 0 || h <= 0 || w <= 0)
        throw std::invalid_argument("retrieve: target size must be positive");
    const ObjectBank::Entry* best = nullptr;
    double best_d = 0;
    for (const auto& e : bank.entries) {
        if (e.cls != cls) continue;
        double dl = std::log(e.l / l), dh = std::log(e.h / h), dw = std::log(e.w / w);
        double d = dl * dl + dh * dh + dw * dw;
        if (!best || d < best_d) {
            best = &e;
            best_d = d;
        }
    }
    if (!best)
        throw std::invalid_argument("retrieve: no bank entry for class '" + cls + "'");
    return *best;
}

// ---------------------------------------------------------------------------
// Procedural sampler (stand-in for a learned object generator)
// ---------------------------------------------------------------------------

inline bool class_is_cylindrical(const std::string& cls) {
    return cls == "Pedestrian" || cls == "Pole" || cls == "Cyclist";
}

inline constexpr double kProceduralDensity = 60.0;  // points per square meter

// Deterministic surface sampling: box shell for vehicle-like classes, capped
// cylinder for pedestrian/pole-like ones. Counts scale with surface area.
inline PointCloud procedural_sample(const std::string& cls, double l, double h, double w,
                                    uint64_t seed, double density = kProceduralDensity) {
    if (l <= 0 || h <= 0 || w <= 0)
        throw std::invalid_argument("procedural_sample: size must be positive");
    Rng rng(seed);
    PointCloud pc;
    if (class_is_cylindrical(cls)) {
        double r = (l + w) / 4.0;
        double side = 2 * kPi * r * h;
        double caps = 2 * kPi * r * r;
        int64_t n = std::max<int64_t>(1, std::llround(density * (side + caps)));
        for (int64_t i = 0; i < n; ++i) {
            PointCloud::Point p;
            if (rng.uniform() < side / (side + caps)) {
                double a = rng.uniform(0, 2 * kPi);
                p.x = r * std::cos(a) * (l / (2 * r));  // elliptical footprint
                p.y = r * std::sin(a) * (w / (2 * r));
                p.z = rng.uniform(-h / 2, h / 2);
            } else {
                double a = rng.uniform(0, 2 * kPi);
                double rr = r * std::sqrt(rng.uniform());
                p.x = rr * std::cos(a) * (l / (2 * r));
                p.y = rr * std::sin(a) * (w / (2 * r));
                p.z = rng.uniform() < 0.5 ? -h / 2 : h / 2;
            }
            p.intensity = rng.uniform(0.2, 0.8);
            pc.points.push_back(p);
        }
    } else {
        double a_xy = l * w, a_xz = l * h, a_yz = w * h;
        double total = 2 * (a_xy + a_xz + a_yz);
        int64_t n = std::max<int64_t>(1, std::llround(density * total));
        for (int64_t i = 0; i < n; ++i) {
            double pick = rng.uniform(0, total);
            double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
            PointCloud::Point p;
            if (pick < 2 * a_xy) {
                p.x = rng.uniform(-l / 2, l / 2);
                p.y = rng.uniform(-w / 2, w / 2);
                p.z = sgn * h / 2;
            } else if (pick < 2 * (a_xy + a_xz)) {
                p.x = rng.uniform(-l / 2, l / 2);
                p.z = rng.uniform(-h / 2, h / 2);
                p.y = sgn * w / 2;
            } else {
                p.y = rng.uniform(-w / 2, w / 2);
                p.z = rng.uniform(-h / 2, h / 2);
                p.x = sgn * l / 2;
            }
            p.intensity = rng.uniform(0.2, 0.8);
            pc.points.push_back(p);
        }
    }
    return pc;
}

// ---------------------------------------------------------------------------
// Foreground composition
// ---------------------------------------------------------------------------

// Anisotropic scale from canonical size, rotate by yaw, translate to center.
inline void place_object(const PointCloud& canonical, double cl, double ch, double cw,
                         const std::string& cls, const OrientedBox3D& box, int instance,
                         PointCloud& out) {
    double sx = box.l / cl, sy = box.w / cw, sz = box.h / ch;
    for (const auto& p : canonical.points) {
        PointCloud::Point q = p;
        q.x *= sx;
        q.y *= sy;
        q.z *= sz;
        q = from_box_frame(q, box);
        q.instance = instance;
        q.cls = cls;
        out.points.push_back(q);
    }
}

inline PointCloud compose_foreground(
    const std::vector<std::pair<std::string, OrientedBox3D>>& layout,
    const ObjectBank& bank) {
    if (layout.empty())
        throw std::invalid_argument("compose_foreground: empty layout");
    PointCloud out;
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& [cls, box] = layout[i];
        const ObjectBank::Entry& e = retrieve(bank, cls, box.l, box.h, box.w);
        place_object(e.cloud, e.l, e.h, e.w, cls, box, static_cast<int>(i), out);
    }
    return out;
}

inline PointCloud compose_foreground_procedural(
    const std::vector<std::pair<std::string, OrientedBox3D>>& layout, uint64_t seed,
    double density = kProceduralDensity) {
    if (layout.empty())
        throw std::invalid_argument("compose_foreground: empty layout");
    PointCloud out;
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& [cls, box] = layout[i];
        uint64_t obj_seed = seed ^ (0x9e3779b97f4a7c15ull * (i + 1));
        PointCloud canonical =
            procedural_sample(cls, box.l, box.h, box.w, obj_seed, density);
        place_object(canonical, box.l, box.h, box.w, cls, box, static_cast<int>(i), out);
    }
    return out;
}

}  // namespace lgen
