#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgen {

inline constexpr double kPi = 3.14159265358979323846;

inline double normalize_angle(double a) {
    // into (-pi, pi]
    a = std::fmod(a, 2 * kPi);
    if (a <= -kPi) a += 2 * kPi;
    if (a > kPi) a -= 2 * kPi;
    return a;
}

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

// 7-DoF box in the ego frame: center (x,y,z), size (l,h,w), yaw about +z.
// l extends along the box's heading, w across, h vertically.
struct OrientedBox3D {
    Vec3 center;
    double l = 1, h = 1, w = 1;
    double yaw = 0;

    OrientedBox3D() = default;
    OrientedBox3D(Vec3 c, double l_, double h_, double w_, double yaw_)
        : center(c), l(l_), h(h_), w(w_), yaw(normalize_angle(yaw_)) {
        if (l <= 0 || h <= 0 || w <= 0)
            throw std::invalid_argument("OrientedBox3D: non-positive size (" +
                                        std::to_string(l_) + "," + std::to_string(h_) +
                                        "," + std::to_string(w_) + ")");
    }

    double volume() const { return l * h * w; }
    double z_min() const { return center.z - h / 2; }
    double z_max() const { return center.z + h / 2; }

    // BEV corners, counter-clockwise.
    std::array<std::array<double, 2>, 4> bev_corners() const {
        double c = std::cos(yaw), s = std::sin(yaw);
        double hl = l / 2, hw = w / 2;
        std::array<std::array<double, 2>, 4> out;
        const double lx[4] = {hl, -hl, -hl, hl};
        const double ly[4] = {hw, hw, -hw, -hw};
        for (int i = 0; i < 4; ++i) {
            out[i][0] = center.x + c * lx[i] - s * ly[i];
            out[i][1] = center.y + s * lx[i] + c * ly[i];
        }
        return out;
    }
};

// Normalized 8-dim diffusion encoding: (x, y, z, l, h, w, sin yaw, cos yaw),
// all in [-1,1] for in-range boxes.
using LayoutVector = std::array<double, 8>;

struct NormalizationSpec {
    double range_xy = 50.0;  // x,y in [-R, R]
    double z_min = -4.0, z_max = 4.0;
    double size_max = 20.0;  // l,h,w in (0, s_max]

    NormalizationSpec() = default;
    NormalizationSpec(double r, double zmin, double zmax, double smax)
        : range_xy(r), z_min(zmin), z_max(zmax), size_max(smax) {
        if (r <= 0 || smax <= 0 || zmax <= zmin)
            throw std::invalid_argument("NormalizationSpec: empty range");
    }
};

inline constexpr double kMinBoxSize = 0.05;

inline LayoutVector encode_layout(const OrientedBox3D& box,
                                  const NormalizationSpec& spec) {
    auto check = [](double v, double lo, double hi, const char* field) {
        if (v < lo || v > hi)
            throw std::invalid_argument(std::string("encode_layout: field '") + field +
                                        "' = " + std::to_string(v) + " outside [" +
                                        std::to_string(lo) + "," + std::to_string(hi) +
                                        "]");
    };
    check(box.center.x, -spec.range_xy, spec.range_xy, "x");
    check(box.center.y, -spec.range_xy, spec.range_xy, "y");
    check(box.center.z, spec.z_min, spec.z_max, "z");
    check(box.l, 0, spec.size_max, "l");
    check(box.h, 0, spec.size_max, "h");
    check(box.w, 0, spec.size_max, "w");
    auto to_unit = [](double v, double lo, double hi) {
        return 2 * (v - lo) / (hi - lo) - 1;
    };
    return {to_unit(box.center.x, -spec.range_xy, spec.range_xy),
            to_unit(box.center.y, -spec.range_xy, spec.range_xy),
            to_unit(box.center.z, spec.z_min, spec.z_max),
            to_unit(box.l, 0, spec.size_max),
            to_unit(box.h, 0, spec.size_max),
            to_unit(box.w, 0, spec.size_max),
            std::sin(box.yaw),
            std::cos(box.yaw)};
}

inline OrientedBox3D decode_layout(const LayoutVector& v,
                                   const NormalizationSpec& spec) {
    auto from_unit = [](double u, double lo, double hi) {
        u = std::clamp(u, -1.0, 1.0);
        return lo + (u + 1) / 2 * (hi - lo);
    };
    double x = from_unit(v[0], -spec.range_xy, spec.range_xy);
    double y = from_unit(v[1], -spec.range_xy, spec.range_xy);
    double z = from_unit(v[2], spec.z_min, spec.z_max);
    double l = std::max(from_unit(v[3], 0, spec.size_max), kMinBoxSize);
    double h = std::max(from_unit(v[4], 0, spec.size_max), kMinBoxSize);
    double w = std::max(from_unit(v[5], 0, spec.size_max), kMinBoxSize);
    double s = v[6], c = v[7];
    double norm = std::hypot(s, c);
    double yaw = norm < 1e-12 ? 0.0 : std::atan2(s / norm, c / norm);
    return OrientedBox3D({x, y, z}, l, h, w, yaw);
}

// ---------------------------------------------------------------------------
// Rotated IoU via Sutherland-Hodgman clipping + shoelace area
// ---------------------------------------------------------------------------

namespace detail {

using Poly = std::vector<std::array<double, 2>>;

inline double shoelace(const Poly& p) {
    double a = 0;
    size_t n = p.size();
    for (size_t i = 0; i < n; ++i) {
        const auto& u = p[i];
        const auto& v = p[(i + 1) % n];
        a += u[0] * v[1] - v[0] * u[1];
    }
    return std::fabs(a) / 2;
}

// Clip subject polygon against the half-plane left of edge a->b (CCW clip poly).
inline Poly clip_halfplane(const Poly& subject, const std::array<double, 2>& a,
                           const std::array<double, 2>& b) {
    Poly out;
    size_t n = subject.size();
    auto side = [&](const std::array<double, 2>& p) {
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    };
    for (size_t i = 0; i < n; ++i) {
        const auto& cur = subject[i];
        const auto& nxt = subject[(i + 1) % n];
        double sc = side(cur), sn = side(nxt);
        if (sc >= 0) out.push_back(cur);
        if ((sc > 0 && sn < 0) || (sc < 0 && sn > 0)) {
            double t = sc / (sc - sn);
            out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
        }
    }
    return out;
}

inline double convex_intersection_area(const Poly& p, const Poly& q) {
    Poly cur = p;
    size_t n = q.size();
    for (size_t i = 0; i < n && !cur.empty(); ++i)
        cur = clip_halfplane(cur, q[i], q[(i + 1) % n]);
    return cur.empty() ? 0.0 : shoelace(cur);
}

}  // namespace detail

inline double bev_intersection_area(const OrientedBox3D& a, const OrientedBox3D& b) {
    auto ca = a.bev_corners();
    auto cb = b.bev_corners();
    detail::Poly pa(ca.begin(), ca.end()), pb(cb.begin(), cb.end());
    return detail::convex_intersection_area(pa, pb);
}

inline double iou_bev(const OrientedBox3D& a, const OrientedBox3D& b) {
    double inter = bev_intersection_area(a, b);
    double uni = a.l * a.w + b.l * b.w - inter;
    return uni <= 0 ? 0.0 : std::clamp(inter / uni, 0.0, 1.0);
}

inline double iou_3d(const OrientedBox3D& a, const OrientedBox3D& b) {
    double zo = std::min(a.z_max(), b.z_max()) - std::max(a.z_min(), b.z_min());
    if (zo <= 0) return 0.0;
    double inter = bev_intersection_area(a, b) * zo;
    double uni = a.volume() + b.volume() - inter;
    return uni <= 0 ? 0.0 : std::clamp(inter / uni, 0.0, 1.0);
}

// (1/M) sum over ordered pairs i != j of max(IoU(b_i, b_j) - delta, 0).
inline double collision_loss(const std::vector<OrientedBox3D>& boxes, double delta,
                             bool use_bev = false) {
    if (delta < 0) throw std::invalid_argument("collision_loss: delta must be >= 0");
    size_t m = boxes.size();
    if (m <= 1) return 0.0;
    double s = 0;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            double iou = use_bev ? iou_bev(boxes[i], boxes[j]) : iou_3d(boxes[i], boxes[j]);
            s += std::max(iou - delta, 0.0);
        }
    return s / static_cast<double>(m);
}

// (1/M) sum_i (1 - IoU(pred_i, gt_i)); pairs are index-aligned.
inline double iou_alignment_loss(const std::vector<OrientedBox3D>& pred,
                                 const std::vector<OrientedBox3D>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("iou_alignment_loss: length mismatch (" +
                                    std::to_string(pred.size()) + " vs " +
                                    std::to_string(gt.size()) + ")");
    double s = 0;
    for (size_t i = 0; i < pred.size(); ++i) s += 1.0 - iou_3d(pred[i], gt[i]);
    return s / static_cast<double>(pred.size());
}

}  // namespace lgen
