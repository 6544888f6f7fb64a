#include <gtest/gtest.h>

#include <cmath>

#include "lgen/metrics.hpp"
#include "lgen/rng.hpp"

using namespace lgen;

namespace {

OrientedBox3D box_at(double x, double y, double l = 4, double h = 1.5, double w = 2,
                     double yaw = 0) {
    return OrientedBox3D({x, y, 0}, l, h, w, yaw);
}

Layout random_separated_layout(Rng& rng, int n) {
    // boxes on a coarse grid so each overlaps at most one perturbed copy
    Layout out;
    const char* classes[] = {"Car", "Truck"};
    for (int i = 0; i < n; ++i)
        out.emplace_back(classes[i % 2],
                         box_at(10.0 * i - 20, (i % 2) * 12.0 - 6, rng.uniform(3, 5),
                                rng.uniform(1, 2), rng.uniform(1.5, 2.5),
                                rng.uniform(-0.4, 0.4)));
    return out;
}

PointCloud cloud_at(Rng& rng, double cx, double cy, int n, double spread = 3) {
    PointCloud pc;
    for (int i = 0; i < n; ++i)
        pc.points.push_back({cx + rng.normal() * spread, cy + rng.normal() * spread,
                             rng.normal() * 0.5, 0.5});
    return pc;
}

}  // namespace

TEST(RelationAcc, GroundTruthIsFixedPoint) {
    Rng rng(801);
    for (int trial = 0; trial < 20; ++trial) {
        Layout boxes;
        int n = static_cast<int>(rng.uniform_int(2, 6));
        for (int i = 0; i < n; ++i)
            boxes.emplace_back("Car", box_at(rng.uniform(-30, 30), rng.uniform(-30, 30),
                                             rng.uniform(1, 6), rng.uniform(1, 3),
                                             rng.uniform(1, 3)));
        SceneGraph g = extract_relations(boxes);
        auto acc = relation_accuracy(g, boxes);
        ASSERT_TRUE(acc.rae.has_value());
        EXPECT_DOUBLE_EQ(*acc.rae, 1.0);
        if (acc.rad) EXPECT_DOUBLE_EQ(*acc.rad, 1.0);
    }
}

TEST(RelationAcc, MirrorViolatesLeftRightOnly) {
    Layout lr{{"Car", box_at(0, 10)}, {"Car", box_at(0, -10)}};  // left/right pair
    SceneGraph g = extract_relations(lr);
    Layout mirrored{{"Car", box_at(0, -10)}, {"Car", box_at(0, 10)}};
    auto acc = relation_accuracy(g, mirrored);
    ASSERT_TRUE(acc.rae.has_value());
    EXPECT_DOUBLE_EQ(*acc.rae, 0.0);

    Layout fb{{"Car", box_at(10, 0)}, {"Car", box_at(-10, 0)}};  // front/behind pair
    SceneGraph g2 = extract_relations(fb);
    Layout fb_mirrored{{"Car", box_at(10, 0)}, {"Car", box_at(-10, 0)}};
    for (auto& [c, b] : fb_mirrored) b.center.y = -b.center.y;
    auto acc2 = relation_accuracy(g2, fb_mirrored);
    EXPECT_DOUBLE_EQ(*acc2.rae, 1.0);
}

TEST(RelationAcc, AbsentTagsOmitted) {
    // identical sizes and > 5 m apart: no difficult edges at all
    Layout boxes{{"Car", box_at(20, 0)}, {"Car", box_at(-20, 0)}};
    SceneGraph g = extract_relations(boxes);
    auto acc = relation_accuracy(g, boxes);
    EXPECT_TRUE(acc.rae.has_value());
    EXPECT_FALSE(acc.rad.has_value());
}

TEST(RelationAcc, CountMismatchRejected) {
    Layout boxes{{"Car", box_at(5, 0)}, {"Car", box_at(-5, 0)}};
    SceneGraph g = extract_relations(boxes);
    boxes.pop_back();
    EXPECT_THROW(relation_accuracy(g, boxes), std::invalid_argument);
}

TEST(CollisionRate, DisjointZeroIdenticalOne) {
    Layout disjoint{{"Car", box_at(0, 0)}, {"Car", box_at(20, 0)}};
    EXPECT_DOUBLE_EQ(collision_rate({disjoint}), 0.0);
    Layout same{{"Car", box_at(0, 0)}, {"Car", box_at(0, 0)}};
    EXPECT_DOUBLE_EQ(collision_rate({same}), 1.0);
    EXPECT_DOUBLE_EQ(collision_rate({disjoint, same}), 0.5);
}

TEST(CollisionRate, MatchesBruteForceEnumeration) {
    Rng rng(809);
    std::vector<Layout> scenes;
    for (int s = 0; s < 15; ++s) {
        Layout sc;
        int n = static_cast<int>(rng.uniform_int(2, 6));
        for (int i = 0; i < n; ++i)
            sc.emplace_back("Car", box_at(rng.uniform(-8, 8), rng.uniform(-8, 8),
                                          rng.uniform(2, 5), rng.uniform(1, 3),
                                          rng.uniform(1, 3), rng.uniform(-kPi, kPi)));
        scenes.push_back(sc);
    }
    double got = collision_rate(scenes, 0.05);
    double want = 0;
    for (const auto& sc : scenes) {
        int64_t hits = 0, pairs = 0;
        for (size_t i = 0; i < sc.size(); ++i)
            for (size_t j = 0; j < sc.size(); ++j) {
                if (j <= i) continue;
                pairs++;
                if (iou_3d(sc[i].second, sc[j].second) > 0.05) hits++;
            }
        want += static_cast<double>(hits) / static_cast<double>(pairs);
    }
    want /= static_cast<double>(scenes.size());
    EXPECT_NEAR(got, want, 1e-12);
}

TEST(Precision, PerfectAndDisplaced) {
    Rng rng(811);
    std::vector<Layout> gt;
    for (int s = 0; s < 5; ++s) gt.push_back(random_separated_layout(rng, 4));
    EXPECT_DOUBLE_EQ(precision_at_iou(gt, gt, 0.5), 100.0);
    EXPECT_DOUBLE_EQ(mean_layout_iou(gt, gt), 100.0);
    std::vector<Layout> far = gt;
    for (auto& sc : far)
        for (auto& [c, b] : sc) b.center.x += 100;
    // displaced beyond the normalization range entirely misses ground truth
    EXPECT_DOUBLE_EQ(precision_at_iou(far, gt, 0.3), 0.0);
    EXPECT_DOUBLE_EQ(mean_layout_iou(far, gt), 0.0);
}

TEST(Precision, GreedyEqualsExhaustiveOnSeparatedScenes) {
    Rng rng(813);
    std::vector<Layout> gt, pred;
    for (int s = 0; s < 10; ++s) {
        Layout g = random_separated_layout(rng, 5);
        Layout p = g;
        for (auto& [c, b] : p) {
            b.center.x += rng.uniform(-0.5, 0.5);
            b.center.y += rng.uniform(-0.5, 0.5);
        }
        gt.push_back(g);
        pred.push_back(p);
    }
    for (double tau : {0.3, 0.5}) {
        EXPECT_NEAR(precision_at_iou(pred, gt, tau, false),
                    precision_at_iou(pred, gt, tau, true), 1e-12);
    }
    EXPECT_NEAR(mean_layout_iou(pred, gt, false), mean_layout_iou(pred, gt, true),
                1e-12);
    EXPECT_GT(mean_layout_iou(pred, gt), 30.0);
}

TEST(Precision, ClassConstraintBlocksCrossClassMatch) {
    std::vector<Layout> gt{{{"Car", box_at(0, 0)}}};
    std::vector<Layout> pred{{{"Truck", box_at(0, 0)}}};
    EXPECT_DOUBLE_EQ(precision_at_iou(pred, gt, 0.3), 0.0);
    EXPECT_DOUBLE_EQ(mean_layout_iou(pred, gt), 0.0);
}

TEST(Precision, UnmatchedCountsInDenominator) {
    // two identical preds compete for one gt: one matches, one cannot
    std::vector<Layout> gt{{{"Car", box_at(0, 0)}}};
    std::vector<Layout> pred{{{"Car", box_at(0, 0)}, {"Car", box_at(0.1, 0)}}};
    EXPECT_DOUBLE_EQ(precision_at_iou(pred, gt, 0.5), 50.0);
    // mean IoU divides by max(|pred|, |gt|) = 2
    EXPECT_NEAR(mean_layout_iou(pred, gt), 50.0, 1e-9);
}

TEST(Jsd, IdenticalZeroAndSymmetric) {
    Rng rng(821);
    std::vector<PointCloud> a{cloud_at(rng, 5, 5, 500), cloud_at(rng, -10, 3, 400)};
    EXPECT_NEAR(jsd_bev(a, a), 0.0, 1e-15);
    std::vector<PointCloud> b{cloud_at(rng, -5, -5, 300), cloud_at(rng, 12, -8, 350)};
    EXPECT_DOUBLE_EQ(jsd_bev(a, b), jsd_bev(b, a));
    EXPECT_GT(jsd_bev(a, b), 0.0);
    EXPECT_LE(jsd_bev(a, b), 1.0);
}

TEST(Jsd, DisjointSupportsReachOne) {
    Rng rng(823);
    std::vector<PointCloud> a{cloud_at(rng, 30, 30, 400, 2),
                              cloud_at(rng, 25, 35, 300, 2)};
    std::vector<PointCloud> b{cloud_at(rng, -30, -30, 400, 2),
                              cloud_at(rng, -25, -35, 300, 2)};
    EXPECT_NEAR(jsd_bev(a, b), 1.0, 1e-9);
}

// Independent formula: JSD = H(m) - (H(p) + H(q)) / 2 with base-2 entropies.
TEST(Jsd, MatchesEntropyFormOracle) {
    Rng rng(827);
    std::vector<PointCloud> a{cloud_at(rng, 5, 0, 600), cloud_at(rng, -8, 4, 500)};
    std::vector<PointCloud> b{cloud_at(rng, 2, -6, 700), cloud_at(rng, 10, 9, 400)};
    double got = jsd_bev(a, b);
    auto agg = [&](const std::vector<PointCloud>& set) {
        std::vector<double> h(static_cast<size_t>(kBevBins) * kBevBins, 0.0);
        for (const auto& pc : set) {
            auto hh = bev_histogram(pc, 50.0);
            for (size_t i = 0; i < h.size(); ++i) h[i] += hh[i];
        }
        normalize_hist(h);
        return h;
    };
    auto p = agg(a), q = agg(b);
    auto entropy = [](const std::vector<double>& d) {
        double s = 0;
        for (double v : d)
            if (v > 0) s -= v * std::log2(v);
        return s;
    };
    std::vector<double> m(p.size());
    for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    double want = entropy(m) - 0.5 * (entropy(p) + entropy(q));
    EXPECT_NEAR(got, want, 1e-12);
}

TEST(Mmd, IdenticalSetsCancelExactly) {
    Rng rng(829);
    std::vector<PointCloud> a;
    for (int i = 0; i < 5; ++i)
        a.push_back(cloud_at(rng, rng.uniform(-20, 20), rng.uniform(-20, 20), 200));
    EXPECT_NEAR(mmd_point(a, a), 0.0, 1e-9);
}

TEST(Mmd, PositiveForSeparatedDistributions) {
    Rng rng(831);
    std::vector<PointCloud> a, b;
    for (int i = 0; i < 6; ++i) {
        a.push_back(cloud_at(rng, 25, 25, 200, 2));
        b.push_back(cloud_at(rng, -25, -25, 200, 2));
    }
    EXPECT_GT(mmd_point(a, b), 1e-4);
}

TEST(Mmd, MatchesNaiveDoubleLoopOracle) {
    Rng rng(833);
    std::vector<PointCloud> a, b;
    for (int i = 0; i < 4; ++i) a.push_back(cloud_at(rng, i * 5.0, 0, 100));
    for (int i = 0; i < 3; ++i) b.push_back(cloud_at(rng, 0, i * 6.0, 100));
    double sigma = 0.5;
    double got = mmd_point(a, b, sigma);
    auto feat = [&](const PointCloud& pc) {
        auto h = bev_histogram(pc, 50.0);
        normalize_hist(h);
        return h;
    };
    auto kern = [&](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0;
        for (size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
        return std::exp(-s / (2 * sigma * sigma));
    };
    std::vector<std::vector<double>> fa, fb;
    for (const auto& pc : a) fa.push_back(feat(pc));
    for (const auto& pc : b) fb.push_back(feat(pc));
    double xx = 0, yy = 0, xy = 0;
    for (size_t i = 0; i < fa.size(); ++i)
        for (size_t j = 0; j < fa.size(); ++j)
            if (i != j) xx += kern(fa[i], fa[j]);
    for (size_t i = 0; i < fb.size(); ++i)
        for (size_t j = 0; j < fb.size(); ++j)
            if (i != j) yy += kern(fb[i], fb[j]);
    for (const auto& x : fa)
        for (const auto& y : fb) xy += kern(x, y);
    double want = xx / (4 * 3) + yy / (3 * 2) - 2 * xy / (4 * 3);
    EXPECT_NEAR(got, want, 1e-12);
}

TEST(Mmd, TooFewCloudsRejected) {
    Rng rng(839);
    std::vector<PointCloud> one{cloud_at(rng, 0, 0, 50)};
    std::vector<PointCloud> two{cloud_at(rng, 0, 0, 50), cloud_at(rng, 5, 5, 50)};
    EXPECT_THROW(mmd_point(one, two), std::invalid_argument);
    EXPECT_THROW(mmd_point(two, one), std::invalid_argument);
}

TEST(Features, RoundTripAndBadMagic) {
    Rng rng(841);
    std::vector<std::vector<double>> rows(20, std::vector<double>(5));
    for (auto& r : rows)
        for (double& v : r) v = rng.uniform(-2, 2);
    std::string path = testing::TempDir() + "/ft_rt.llft";
    save_features(path, rows);
    auto back = load_features(path);
    ASSERT_EQ(back.size(), rows.size());
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < 5; ++j) EXPECT_NEAR(back[i][j], rows[i][j], 1e-6);
    std::string bad = testing::TempDir() + "/ft_bad.llft";
    std::ofstream(bad, std::ios::binary) << "NOPE0000000000000000";
    EXPECT_THROW(load_features(bad), std::runtime_error);
}

TEST(Frechet, IdenticalSetsNearZero) {
    Rng rng(843);
    std::vector<std::vector<double>> f(50, std::vector<double>(3));
    for (auto& r : f)
        for (double& v : r) v = rng.normal();
    auto res = frechet_distance(f, f);
    EXPECT_FALSE(res.regularized);
    EXPECT_NEAR(res.value, 0.0, 1e-9);
}

TEST(Frechet, OneDimensionalGaussianGapIsNine) {
    Rng rng(847);
    const int n = 100000;
    std::vector<std::vector<double>> a, b;
    for (int i = 0; i < n; ++i) {
        a.push_back({rng.normal()});
        b.push_back({rng.normal() + 3.0});
    }
    auto res = frechet_distance(a, b);
    EXPECT_NEAR(res.value, 9.0, 9.0 * 0.05);
}

TEST(Frechet, RotationInvariance) {
    Rng rng(853);
    std::vector<std::vector<double>> a, b;
    for (int i = 0; i < 400; ++i) {
        a.push_back({rng.normal(), 2 * rng.normal(), rng.normal() + 1});
        b.push_back({rng.normal() + 0.5, rng.normal(), 0.5 * rng.normal()});
    }
    double base = frechet_distance(a, b).value;
    // rotation about axis pairs
    double th = 0.7;
    auto rot = [&](std::vector<std::vector<double>> f) {
        for (auto& r : f) {
            double x = r[0] * std::cos(th) - r[1] * std::sin(th);
            double y = r[0] * std::sin(th) + r[1] * std::cos(th);
            r[0] = x;
            r[1] = y;
        }
        return f;
    };
    double rotated = frechet_distance(rot(a), rot(b)).value;
    EXPECT_NEAR(rotated, base, 1e-6 * std::max(1.0, base));
}

TEST(Frechet, AnalyticDiagonalCase) {
    // construct exact empirical moments: mean 0, covariance diag via symmetric
    // two-point placement per axis
    auto make = [](double s0, double s1) {
        std::vector<std::vector<double>> f;
        double a0 = s0, a1 = s1;
        f.push_back({a0, 0.0});
        f.push_back({-a0, 0.0});
        f.push_back({0.0, a1});
        f.push_back({0.0, -a1});
        return f;  // cov = diag(2 a0^2 / 3, 2 a1^2 / 3), mean 0
    };
    auto fa = make(3.0, 1.5), fb = make(1.5, 3.0);
    double va0 = 2 * 9.0 / 3, va1 = 2 * 2.25 / 3;
    double want = std::pow(std::sqrt(va0) - std::sqrt(va1), 2) * 2;  // symmetric swap
    auto res = frechet_distance(fa, fb);
    EXPECT_NEAR(res.value, want, 1e-9);
}

TEST(Frechet, DegenerateCovarianceRegularized) {
    std::vector<std::vector<double>> a, b;
    for (int i = 0; i < 10; ++i) {
        a.push_back({static_cast<double>(i), 2.0 * i});  // rank-1
        b.push_back({static_cast<double>(i), 2.0 * i});
    }
    auto res = frechet_distance(a, b);
    EXPECT_TRUE(res.regularized);
    EXPECT_NEAR(res.value, 0.0, 1e-6);
}

TEST(Frechet, DimensionAndSizeValidation) {
    std::vector<std::vector<double>> a(5, std::vector<double>(2, 0.0));
    std::vector<std::vector<double>> b(5, std::vector<double>(3, 0.0));
    EXPECT_THROW(frechet_distance(a, b), std::invalid_argument);
    std::vector<std::vector<double>> tiny(2, std::vector<double>(3, 0.0));
    EXPECT_THROW(frechet_distance(tiny, tiny), std::invalid_argument);
}

TEST(Reports, JsonFieldPresence) {
    LayoutEvalReport r;
    r.rae = 0.9;
    r.cr = 0.1;
    auto j = r.to_json();
    EXPECT_TRUE(j.contains("rae"));
    EXPECT_FALSE(j.contains("rad"));
    SceneEvalReport s;
    s.jsd = 0.2;
    auto js = s.to_json();
    EXPECT_FALSE(js.contains("frd"));
    EXPECT_TRUE(js.contains("mmd"));
}
