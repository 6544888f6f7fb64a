#include <gtest/gtest.h>

#include <cmath>

#include "lgen/box.hpp"
#include "lgen/geom_losses.hpp"
#include "lgen/rng.hpp"

using namespace lgen;

namespace {

bool point_in_box_bev(double x, double y, const OrientedBox3D& b) {
    double c = std::cos(-b.yaw), s = std::sin(-b.yaw);
    double lx = c * (x - b.center.x) - s * (y - b.center.y);
    double ly = s * (x - b.center.x) + c * (y - b.center.y);
    return std::fabs(lx) <= b.l / 2 && std::fabs(ly) <= b.w / 2;
}

bool point_in_box_3d(double x, double y, double z, const OrientedBox3D& b) {
    return point_in_box_bev(x, y, b) && z >= b.z_min() && z <= b.z_max();
}

// Monte-Carlo IoU oracle: sample uniformly over the union's bounding volume.
double mc_iou_bev(const OrientedBox3D& a, const OrientedBox3D& b, int n, Rng& rng) {
    double diag = std::hypot(std::max(a.l, a.w), std::max(a.l, a.w)) +
                  std::hypot(std::max(b.l, b.w), std::max(b.l, b.w));
    double x0 = std::min(a.center.x, b.center.x) - diag;
    double x1 = std::max(a.center.x, b.center.x) + diag;
    double y0 = std::min(a.center.y, b.center.y) - diag;
    double y1 = std::max(a.center.y, b.center.y) + diag;
    int64_t inter = 0, uni = 0;
    for (int i = 0; i < n; ++i) {
        double x = rng.uniform(x0, x1);
        double y = rng.uniform(y0, y1);
        bool ia = point_in_box_bev(x, y, a);
        bool ib = point_in_box_bev(x, y, b);
        if (ia && ib) inter++;
        if (ia || ib) uni++;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mc_iou_3d(const OrientedBox3D& a, const OrientedBox3D& b, int n, Rng& rng) {
    double diag = std::max({a.l, a.w, a.h}) + std::max({b.l, b.w, b.h});
    double x0 = std::min(a.center.x, b.center.x) - diag;
    double x1 = std::max(a.center.x, b.center.x) + diag;
    double y0 = std::min(a.center.y, b.center.y) - diag;
    double y1 = std::max(a.center.y, b.center.y) + diag;
    double z0 = std::min(a.z_min(), b.z_min()) - 0.1;
    double z1 = std::max(a.z_max(), b.z_max()) + 0.1;
    int64_t inter = 0, uni = 0;
    for (int i = 0; i < n; ++i) {
        double x = rng.uniform(x0, x1);
        double y = rng.uniform(y0, y1);
        double z = rng.uniform(z0, z1);
        bool ia = point_in_box_3d(x, y, z, a);
        bool ib = point_in_box_3d(x, y, z, b);
        if (ia && ib) inter++;
        if (ia || ib) uni++;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

OrientedBox3D random_box(Rng& rng) {
    return OrientedBox3D({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1)},
                         rng.uniform(0.5, 4), rng.uniform(0.5, 3), rng.uniform(0.5, 4),
                         rng.uniform(-kPi, kPi));
}

}  // namespace

TEST(EncodeDecode, OriginMidpointSizes) {
    NormalizationSpec spec;
    OrientedBox3D b({0, 0, 0}, spec.size_max / 2, spec.size_max / 2, spec.size_max / 2,
                    0.0);
    LayoutVector v = encode_layout(b, spec);
    EXPECT_NEAR(v[0], 0, 1e-12);
    EXPECT_NEAR(v[1], 0, 1e-12);
    EXPECT_NEAR(v[2], 0, 1e-12);
    EXPECT_NEAR(v[3], 0, 1e-12);
    EXPECT_NEAR(v[6], 0, 1e-12);  // sin
    EXPECT_NEAR(v[7], 1, 1e-12);  // cos
}

TEST(EncodeDecode, YawHalfPi) {
    NormalizationSpec spec;
    OrientedBox3D b({0, 0, 0}, 2, 2, 2, kPi / 2);
    LayoutVector v = encode_layout(b, spec);
    EXPECT_NEAR(v[6], 1, 1e-12);
    EXPECT_NEAR(v[7], 0, 1e-12);
}

TEST(EncodeDecode, RoundTrip1000RandomBoxes) {
    NormalizationSpec spec;
    Rng rng(21);
    for (int i = 0; i < 1000; ++i) {
        OrientedBox3D b({rng.uniform(-49, 49), rng.uniform(-49, 49), rng.uniform(-3.9, 3.9)},
                        rng.uniform(0.1, 19), rng.uniform(0.1, 19), rng.uniform(0.1, 19),
                        rng.uniform(-kPi + 1e-6, kPi));
        OrientedBox3D r = decode_layout(encode_layout(b, spec), spec);
        EXPECT_NEAR(r.center.x, b.center.x, 1e-9);
        EXPECT_NEAR(r.center.y, b.center.y, 1e-9);
        EXPECT_NEAR(r.center.z, b.center.z, 1e-9);
        EXPECT_NEAR(r.l, b.l, 1e-9);
        EXPECT_NEAR(r.h, b.h, 1e-9);
        EXPECT_NEAR(r.w, b.w, 1e-9);
        EXPECT_NEAR(r.yaw, b.yaw, 1e-9);
    }
}

TEST(EncodeDecode, OutOfRangeRejectedWithField) {
    NormalizationSpec spec;
    OrientedBox3D b({100, 0, 0}, 2, 2, 2, 0);
    try {
        encode_layout(b, spec);
        FAIL() << "expected throw";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos) << e.what();
    }
}

TEST(EncodeDecode, SizesClampedOnDecode) {
    NormalizationSpec spec;
    LayoutVector v{0, 0, 0, -2, -2, -2, 0, 1};  // sizes map below zero
    OrientedBox3D b = decode_layout(v, spec);
    EXPECT_DOUBLE_EQ(b.l, 0.05);
    EXPECT_DOUBLE_EQ(b.h, 0.05);
    EXPECT_DOUBLE_EQ(b.w, 0.05);
}

TEST(EncodeDecode, SinCosRenormalized) {
    NormalizationSpec spec;
    LayoutVector v{0, 0, 0, 0, 0, 0, 2, 0};
    EXPECT_NEAR(decode_layout(v, spec).yaw, kPi / 2, 1e-12);
}

TEST(EncodeDecode, DegenerateAngleDefaultsToZero) {
    NormalizationSpec spec;
    LayoutVector v{0, 0, 0, 0, 0, 0, 0, 0};
    EXPECT_DOUBLE_EQ(decode_layout(v, spec).yaw, 0.0);
}

TEST(Iou, IdenticalBoxes) {
    OrientedBox3D b({1, 2, 0}, 4, 2, 2, 0.3);
    EXPECT_DOUBLE_EQ(iou_bev(b, b), 1.0);
    EXPECT_DOUBLE_EQ(iou_3d(b, b), 1.0);
}

TEST(Iou, FarApartIsZero) {
    OrientedBox3D a({0, 0, 0}, 4, 2, 2, 0.3);
    OrientedBox3D b({100, 0, 0}, 4, 2, 2, 1.0);
    EXPECT_DOUBLE_EQ(iou_bev(a, b), 0.0);
    EXPECT_DOUBLE_EQ(iou_3d(a, b), 0.0);
}

TEST(Iou, UnitSquaresOffsetHalf) {
    OrientedBox3D a({0, 0, 0}, 1, 1, 1, 0);
    OrientedBox3D b({0.5, 0, 0}, 1, 1, 1, 0);
    EXPECT_NEAR(iou_bev(a, b), 1.0 / 3.0, 1e-12);
}

TEST(Iou, DisjointZRanges) {
    OrientedBox3D a({0, 0, 0}, 2, 1, 2, 0.5);
    OrientedBox3D b({0, 0, 5}, 2, 1, 2, 0.5);
    EXPECT_DOUBLE_EQ(iou_3d(a, b), 0.0);
}

TEST(Iou, MonteCarloOracleBev) {
    Rng rng(31);
    for (int i = 0; i < 30; ++i) {
        OrientedBox3D a = random_box(rng);
        OrientedBox3D b = random_box(rng);
        double mc = mc_iou_bev(a, b, 200000, rng);
        EXPECT_NEAR(iou_bev(a, b), mc, 2e-2) << "pair " << i;
    }
}

TEST(Iou, MonteCarloOracle3d) {
    Rng rng(37);
    for (int i = 0; i < 30; ++i) {
        OrientedBox3D a = random_box(rng);
        OrientedBox3D b = random_box(rng);
        double mc = mc_iou_3d(a, b, 200000, rng);
        EXPECT_NEAR(iou_3d(a, b), mc, 2e-2) << "pair " << i;
    }
}

TEST(Iou, Symmetry) {
    Rng rng(41);
    for (int i = 0; i < 100; ++i) {
        OrientedBox3D a = random_box(rng);
        OrientedBox3D b = random_box(rng);
        EXPECT_NEAR(iou_3d(a, b), iou_3d(b, a), 1e-12);
        EXPECT_NEAR(iou_bev(a, b), iou_bev(b, a), 1e-12);
    }
}

TEST(Iou, YawInvariance) {
    Rng rng(43);
    for (int i = 0; i < 50; ++i) {
        OrientedBox3D a = random_box(rng);
        OrientedBox3D b = random_box(rng);
        double phi = rng.uniform(-kPi, kPi);
        double c = std::cos(phi), s = std::sin(phi);
        auto rot = [&](const OrientedBox3D& x) {
            return OrientedBox3D({c * x.center.x - s * x.center.y,
                                  s * x.center.x + c * x.center.y, x.center.z},
                                 x.l, x.h, x.w, x.yaw + phi);
        };
        EXPECT_NEAR(iou_bev(rot(a), rot(b)), iou_bev(a, b), 1e-9);
    }
}

TEST(CollisionLoss, DisjointBoxesZero) {
    OrientedBox3D a({0, 0, 0}, 1, 1, 1, 0);
    OrientedBox3D b({10, 0, 0}, 1, 1, 1, 0);
    EXPECT_DOUBLE_EQ(collision_loss({a, b}, 0.05), 0.0);
}

TEST(CollisionLoss, IdenticalPair) {
    OrientedBox3D a({0, 0, 0}, 1, 1, 1, 0);
    // ordered pairs i != j: 2 terms of (1 - 0.05), prefactor 1/2
    EXPECT_NEAR(collision_loss({a, a}, 0.05), 0.95, 1e-12);
}

TEST(CollisionLoss, ThreeBoxHandSummation) {
    OrientedBox3D a({0, 0, 0}, 2, 2, 2, 0);
    OrientedBox3D b({1, 0, 0}, 2, 2, 2, 0);  // overlaps a
    OrientedBox3D c({50, 0, 0}, 2, 2, 2, 0);
    double iou_ab = iou_3d(a, b);
    double expected = (2 * std::max(iou_ab - 0.05, 0.0)) / 3.0;
    EXPECT_NEAR(collision_loss({a, b, c}, 0.05), expected, 1e-12);
}

TEST(CollisionLoss, EmptyOrSingleIsZero) {
    EXPECT_DOUBLE_EQ(collision_loss({}, 0.05), 0.0);
    OrientedBox3D a({0, 0, 0}, 1, 1, 1, 0);
    EXPECT_DOUBLE_EQ(collision_loss({a}, 0.05), 0.0);
}

TEST(AlignmentLoss, IdenticalZeroAndDisjointOne) {
    OrientedBox3D a({0, 0, 0}, 1, 1, 1, 0.2);
    OrientedBox3D far({30, 0, 0}, 1, 1, 1, 0.2);
    EXPECT_NEAR(iou_alignment_loss({a}, {a}), 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(iou_alignment_loss({a}, {far}), 1.0);
}

TEST(AlignmentLoss, MixedIsMeanOfPerPair) {
    Rng rng(47);
    std::vector<OrientedBox3D> pred, gt;
    for (int i = 0; i < 5; ++i) {
        pred.push_back(random_box(rng));
        gt.push_back(random_box(rng));
    }
    double manual = 0;
    for (int i = 0; i < 5; ++i) manual += 1.0 - iou_3d(pred[i], gt[i]);
    manual /= 5;
    EXPECT_NEAR(iou_alignment_loss(pred, gt), manual, 1e-12);
}

TEST(AlignmentLoss, LengthMismatchRejected) {
    OrientedBox3D a({0, 0, 0}, 1, 1, 1, 0);
    EXPECT_THROW(iou_alignment_loss({a, a}, {a}), std::invalid_argument);
}

// --------------------------------------------------------------------------
// Differentiable surrogate
// --------------------------------------------------------------------------

TEST(GeomSurrogate, IdenticalNoOverlapIsZero) {
    NormalizationSpec spec;
    OrientedBox3D a({0, 0, 0}, 2, 2, 2, 0);
    OrientedBox3D b({20, 0, 0}, 2, 2, 2, 0);
    std::vector<double> data;
    for (const auto& box : {a, b}) {
        LayoutVector v = encode_layout(box, spec);
        data.insert(data.end(), v.begin(), v.end());
    }
    Tensor pred = Tensor::from_data({2, 8}, data);
    Tensor loss = differentiable_geom_losses(pred, pred, spec, 0.05);
    EXPECT_NEAR(loss.value(), 0.0, 1e-9);
}

TEST(GeomSurrogate, MatchesExactAtYawZero) {
    NormalizationSpec spec;
    Rng rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<OrientedBox3D> pred_boxes, gt_boxes;
        int m = 3;
        std::vector<double> pdata, gdata;
        for (int i = 0; i < m; ++i) {
            OrientedBox3D p({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-1, 1)},
                            rng.uniform(1, 5), rng.uniform(1, 3), rng.uniform(1, 5), 0.0);
            OrientedBox3D g({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-1, 1)},
                            rng.uniform(1, 5), rng.uniform(1, 3), rng.uniform(1, 5), 0.0);
            pred_boxes.push_back(p);
            gt_boxes.push_back(g);
            LayoutVector pv = encode_layout(p, spec), gv = encode_layout(g, spec);
            pdata.insert(pdata.end(), pv.begin(), pv.end());
            gdata.insert(gdata.end(), gv.begin(), gv.end());
        }
        GeomLossTerms terms = differentiable_geom_loss_terms(
            Tensor::from_data({m, 8}, pdata), Tensor::from_data({m, 8}, gdata), spec,
            0.05);
        EXPECT_NEAR(terms.collision.value(), collision_loss(pred_boxes, 0.05), 1e-9);
        EXPECT_NEAR(terms.alignment.value(), iou_alignment_loss(pred_boxes, gt_boxes),
                    1e-9);
    }
}

TEST(GeomSurrogate, GradCheck) {
    NormalizationSpec spec;
    Rng rng(59);
    Tensor gt = Tensor::randn({3, 8}, rng, 0.3);
    auto f = [&](const Tensor& x) {
        return differentiable_geom_losses(x, gt, spec, 0.05);
    };
    Tensor point = Tensor::randn({3, 8}, rng, 0.3);
    EXPECT_TRUE(grad_check(f, point, 1e-3));
}
