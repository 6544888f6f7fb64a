#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lgen/box.hpp"
#include "lgen/range_image.hpp"
#include "lgen/rng.hpp"
#include "lgen/scene_graph.hpp"

namespace lgen {

// Sensor sits ~2 m above the road surface.
inline constexpr double kGroundZ = -2.0;

struct SyntheticCorpusSpec {
    int scene_count = 100;
    int min_objects = 2, max_objects = 6;
    std::vector<std::pair<std::string, double>> class_mix = {{"Car", 0.50},
                                                             {"Truck", 0.15},
                                                             {"Pedestrian", 0.20},
                                                             {"Cyclist", 0.10},
                                                             {"Pole", 0.05}};
    int lanes = 3;
    double lane_spacing = 3.5;
    double lane_jitter = 0.5;
    double x_extent = 40.0;       // objects placed with |x| below this
    double collision_iou = 0.05;  // rejection-sampling threshold
    int max_attempts = 1000;
    double ground_radius = 50.0;
    int ground_points = 6000;
    int max_walls = 4;
    double wall_density = 12.0;  // points per square meter

    void validate() const {
        if (scene_count < 1 || min_objects < 1 || max_objects < min_objects)
            throw std::invalid_argument("SyntheticCorpusSpec: bad object counts");
        double total = 0;
        for (const auto& [cls, w] : class_mix) {
            if (w < 0) throw std::invalid_argument("SyntheticCorpusSpec: negative mix");
            total += w;
        }
        if (class_mix.empty() || total <= 0)
            throw std::invalid_argument("SyntheticCorpusSpec: empty class mix");
        if (lanes < 1 || lane_spacing <= 0 || x_extent <= 0 || ground_radius <= 0)
            throw std::invalid_argument("SyntheticCorpusSpec: bad geometry");
    }
};

struct SynthScene {
    std::string id;
    std::vector<std::pair<std::string, OrientedBox3D>> boxes;
    SceneGraph graph;
};

namespace detail {

struct SizeRange {
    double l_lo, l_hi, h_lo, h_hi, w_lo, w_hi;
};

inline SizeRange class_size_range(const std::string& cls) {
    if (cls == "Car") return {3.8, 4.9, 1.4, 1.8, 1.7, 2.1};
    if (cls == "Truck") return {6.0, 10.0, 2.5, 3.8, 2.3, 2.9};
    if (cls == "Pedestrian") return {0.5, 0.8, 1.5, 1.9, 0.5, 0.8};
    if (cls == "Cyclist") return {1.5, 1.9, 1.5, 1.9, 0.5, 0.8};
    if (cls == "Pole") return {0.2, 0.4, 3.0, 6.0, 0.2, 0.4};
    return {1.0, 2.0, 1.0, 2.0, 1.0, 2.0};
}

inline bool class_on_lane(const std::string& cls) {
    return cls == "Car" || cls == "Truck" || cls == "Cyclist";
}

}  // namespace detail

inline std::string sample_class(const SyntheticCorpusSpec& spec, Rng& rng) {
    double total = 0;
    for (const auto& [cls, w] : spec.class_mix) total += w;
    double u = rng.uniform(0, total);
    for (const auto& [cls, w] : spec.class_mix) {
        if (u < w) return cls;
        u -= w;
    }
    return spec.class_mix.back().first;
}

// One placement proposal: vehicles sit in lanes heading along +-x, pedestrians
// and poles go to the road sides with free yaw.
inline std::pair<std::string, OrientedBox3D> propose_object(
    const SyntheticCorpusSpec& spec, const std::string& cls, Rng& rng) {
    auto sr = detail::class_size_range(cls);
    double l = rng.uniform(sr.l_lo, sr.l_hi);
    double h = rng.uniform(sr.h_lo, sr.h_hi);
    double w = rng.uniform(sr.w_lo, sr.w_hi);
    double half_road = (spec.lanes - 1) * 0.5 * spec.lane_spacing;
    double x, y, yaw;
    if (detail::class_on_lane(cls)) {
        int lane = static_cast<int>(rng.uniform_int(0, spec.lanes - 1));
        y = (lane - (spec.lanes - 1) * 0.5) * spec.lane_spacing +
            rng.uniform(-spec.lane_jitter, spec.lane_jitter);
        x = rng.uniform(-spec.x_extent, spec.x_extent);
        yaw = (rng.uniform() < 0.5 ? 0.0 : kPi) + rng.uniform(-0.1, 0.1);
    } else {
        double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
        y = side * rng.uniform(half_road + 2.0, half_road + 10.0);
        x = rng.uniform(-spec.x_extent, spec.x_extent);
        yaw = rng.uniform(-kPi, kPi);
    }
    return {cls, OrientedBox3D({x, y, kGroundZ + h * 0.5}, l, h, w, yaw)};
}

// Rejection sampling keeps the layout collision-free; an object that cannot be
// placed within max_attempts is dropped (counted in *fallbacks).
inline std::vector<std::pair<std::string, OrientedBox3D>> synth_layout(
    const SyntheticCorpusSpec& spec, Rng& rng, int* fallbacks = nullptr) {
    int target = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
    std::vector<std::pair<std::string, OrientedBox3D>> out;
    for (int i = 0; i < target; ++i) {
        std::string cls = sample_class(spec, rng);
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            auto cand = propose_object(spec, cls, rng);
            bool clear = std::hypot(cand.second.center.x, cand.second.center.y) > 3.0;
            for (const auto& [c, b] : out)
                if (clear && iou_3d(cand.second, b) > spec.collision_iou) clear = false;
            if (clear) {
                out.push_back(std::move(cand));
                placed = true;
            }
        }
        if (!placed && fallbacks) (*fallbacks)++;
    }
    if (out.empty()) {
        // a scene must hold at least one object; retry from scratch
        return synth_layout(spec, rng, fallbacks);
    }
    return out;
}

// Ground disc plus a few vertical wall patches; the static part of a scene.
inline PointCloud synth_background(const SyntheticCorpusSpec& spec, Rng& rng) {
    PointCloud pc;
    for (int i = 0; i < spec.ground_points; ++i) {
        double r = std::sqrt(rng.uniform()) * spec.ground_radius;
        if (r < 2.0) continue;
        double a = rng.uniform(-kPi, kPi);
        PointCloud::Point p;
        p.x = r * std::cos(a);
        p.y = r * std::sin(a);
        p.z = kGroundZ + rng.normal() * 0.02;
        p.intensity = 0.25 + 0.1 * rng.uniform();
        pc.points.push_back(p);
    }
    int walls = static_cast<int>(rng.uniform_int(1, spec.max_walls));
    for (int k = 0; k < walls; ++k) {
        double dist = rng.uniform(12.0, 0.8 * spec.ground_radius);
        double angle = rng.uniform(-kPi, kPi);
        double cx = dist * std::cos(angle), cy = dist * std::sin(angle);
        double width = rng.uniform(4.0, 14.0), height = rng.uniform(2.5, 5.0);
        double yaw = angle + kPi / 2 + rng.uniform(-0.3, 0.3);  // roughly facing ego
        int n = std::max(1, static_cast<int>(width * height * spec.wall_density));
        for (int i = 0; i < n; ++i) {
            double u = rng.uniform(-0.5, 0.5) * width;
            double v = rng.uniform(0.0, height);
            PointCloud::Point p;
            p.x = cx + u * std::cos(yaw);
            p.y = cy + u * std::sin(yaw);
            p.z = kGroundZ + v;
            p.intensity = 0.5 + 0.2 * rng.uniform();
            pc.points.push_back(p);
        }
    }
    return pc;
}

inline std::vector<SynthScene> synth_corpus(const SyntheticCorpusSpec& spec,
                                            uint64_t seed, int* fallbacks = nullptr,
                                            const RelationRuleSet& rules = {}) {
    spec.validate();
    std::vector<SynthScene> out;
    out.reserve(static_cast<size_t>(spec.scene_count));
    for (int s = 0; s < spec.scene_count; ++s) {
        Rng rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(s + 1)));
        SynthScene sc;
        sc.id = "scene_" + std::to_string(s);
        sc.boxes = synth_layout(spec, rng, fallbacks);
        sc.graph = extract_relations(sc.boxes, rules);
        out.push_back(std::move(sc));
    }
    return out;
}

}  // namespace lgen
