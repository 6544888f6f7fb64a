#pragma once

#include <vector>

#include "lgen/box.hpp"
#include "lgen/tensor.hpp"

namespace lgen {

namespace detail {

struct AxisHull {
    Tensor cx, cy, cz;  // centers, [M,1]
    Tensor ex, ey, ez;  // half extents, [M,1]
};

// Axis-aligned bounding hull of the decoded box, computed from the 8-dim
// encoding without hard range clamps so gradients survive out-of-range
// predictions. Exact when yaw = 0.
inline AxisHull axis_hull(const Tensor& vecs, const NormalizationSpec& spec) {
    if (vecs.rank() != 2 || vecs.dim(1) != 8)
        throw std::invalid_argument("axis_hull: expected [M,8], got " +
                                    shape_str(vecs.shape()));
    auto col = [&](int i) { return narrow(vecs, 1, i, 1); };
    auto affine = [&](const Tensor& u, double lo, double hi) {
        return scalar_add(scalar_mul(scalar_add(u, 1.0), (hi - lo) / 2), lo);
    };
    Tensor min_size = Tensor::scalar(kMinBoxSize);
    Tensor l = maximum(affine(col(3), 0, spec.size_max), min_size);
    Tensor h = maximum(affine(col(4), 0, spec.size_max), min_size);
    Tensor w = maximum(affine(col(5), 0, spec.size_max), min_size);
    Tensor s = col(6), c = col(7);
    Tensor norm = sqrt_t(scalar_add(add(mul(s, s), mul(c, c)), 1e-12));
    Tensor as = div(abs_t(s), norm);
    Tensor ac = div(abs_t(c), norm);
    AxisHull hull;
    hull.cx = affine(col(0), -spec.range_xy, spec.range_xy);
    hull.cy = affine(col(1), -spec.range_xy, spec.range_xy);
    hull.cz = affine(col(2), spec.z_min, spec.z_max);
    hull.ex = scalar_mul(add(mul(ac, l), mul(as, w)), 0.5);
    hull.ey = scalar_mul(add(mul(as, l), mul(ac, w)), 0.5);
    hull.ez = scalar_mul(h, 0.5);
    return hull;
}

inline Tensor hull_volume(const AxisHull& h) {
    return scalar_mul(mul(mul(h.ex, h.ey), h.ez), 8.0);
}

inline Tensor overlap_1d(const Tensor& ca, const Tensor& ea, const Tensor& cb,
                         const Tensor& eb) {
    Tensor lo = maximum(sub(ca, ea), sub(cb, eb));
    Tensor hi = minimum(add(ca, ea), add(cb, eb));
    return maximum(sub(hi, lo), Tensor::scalar(0.0));
}

inline Tensor hull_iou(const AxisHull& a, const AxisHull& b) {
    Tensor inter = mul(mul(overlap_1d(a.cx, a.ex, b.cx, b.ex),
                           overlap_1d(a.cy, a.ey, b.cy, b.ey)),
                       overlap_1d(a.cz, a.ez, b.cz, b.ez));
    // union >= each hull volume >= 8*(kMinBoxSize/2)^3, so no epsilon needed
    Tensor uni = sub(add(hull_volume(a), hull_volume(b)), inter);
    return div(inter, uni);
}

inline AxisHull gather_hull(const AxisHull& h, const std::vector<int64_t>& idx) {
    return {embedding_lookup(h.cx, idx), embedding_lookup(h.cy, idx),
            embedding_lookup(h.cz, idx), embedding_lookup(h.ex, idx),
            embedding_lookup(h.ey, idx), embedding_lookup(h.ez, idx)};
}

}  // namespace detail

struct GeomLossTerms {
    Tensor collision;  // scalar
    Tensor alignment;  // scalar
};

// Differentiable surrogates for the pairwise-overlap penalty and the
// ground-truth alignment loss, computed on axis-aligned hulls of the decoded
// boxes. Evaluation-time metrics use the exact rotated IoU in box.hpp instead.
inline GeomLossTerms differentiable_geom_loss_terms(const Tensor& pred_vectors,
                                                    const Tensor& gt_vectors,
                                                    const NormalizationSpec& spec,
                                                    double delta) {
    if (pred_vectors.shape() != gt_vectors.shape())
        throw std::invalid_argument("geom losses: shape mismatch " +
                                    shape_str(pred_vectors.shape()) + " vs " +
                                    shape_str(gt_vectors.shape()));
    int64_t m = pred_vectors.dim(0);
    detail::AxisHull pred = detail::axis_hull(pred_vectors, spec);
    detail::AxisHull gt = detail::axis_hull(gt_vectors, spec);

    GeomLossTerms out;
    out.alignment = mean(sub(Tensor::scalar(1.0), detail::hull_iou(pred, gt)));

    if (m <= 1) {
        out.collision = Tensor::scalar(0.0);
        return out;
    }
    std::vector<int64_t> li, rj;
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < m; ++j)
            if (i != j) {
                li.push_back(i);
                rj.push_back(j);
            }
    detail::AxisHull a = detail::gather_hull(pred, li);
    detail::AxisHull b = detail::gather_hull(pred, rj);
    Tensor excess = maximum(scalar_add(detail::hull_iou(a, b), -delta),
                            Tensor::scalar(0.0));
    out.collision = scalar_mul(sum(excess), 1.0 / static_cast<double>(m));
    return out;
}

inline Tensor differentiable_geom_losses(const Tensor& pred_vectors,
                                         const Tensor& gt_vectors,
                                         const NormalizationSpec& spec,
                                         double delta) {
    GeomLossTerms t = differentiable_geom_loss_terms(pred_vectors, gt_vectors, spec, delta);
    return add(t.collision, t.alignment);
}

}  // namespace lgen
