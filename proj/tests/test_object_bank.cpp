#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "lgen/object_bank.hpp"
#include "lgen/rng.hpp"

using namespace lgen;

namespace {

PointCloud box_interior_cloud(Rng& rng, const OrientedBox3D& box, int n) {
    PointCloud pc;
    for (int i = 0; i < n; ++i) {
        PointCloud::Point p;
        p.x = rng.uniform(-box.l / 2 * 0.95, box.l / 2 * 0.95);
        p.y = rng.uniform(-box.w / 2 * 0.95, box.w / 2 * 0.95);
        p.z = rng.uniform(-box.h / 2 * 0.95, box.h / 2 * 0.95);
        p.intensity = rng.uniform(0, 1);
        pc.points.push_back(from_box_frame(p, box));
    }
    return pc;
}

std::string write_bank_inputs(Rng& rng,
                              const std::vector<std::pair<std::string, OrientedBox3D>>&
                                  boxes,
                              int points_per_box = 50) {
    std::string dir = testing::TempDir() + "/bank_in_" + std::to_string(rng.raw());
    std::filesystem::create_directories(dir);
    PointCloud all;
    nlohmann::json jb = nlohmann::json::array();
    for (const auto& [cls, box] : boxes) {
        all.append(box_interior_cloud(rng, box, points_per_box));
        jb.push_back({{"class", cls},
                      {"center", {box.center.x, box.center.y, box.center.z}},
                      {"size", {box.l, box.h, box.w}},
                      {"yaw", box.yaw}});
    }
    save_point_cloud(dir + "/scene0.llpc", all);
    std::ofstream(dir + "/ann.json") << nlohmann::json{
        {"scenes",
         {{{"scene_id", "s0"}, {"points_file", "scene0.llpc"}, {"boxes", jb}}}}};
    return dir + "/ann.json";
}

}  // namespace

TEST(PointCloudIo, RoundTripWithinFloatPrecision) {
    Rng rng(701);
    PointCloud pc;
    for (int i = 0; i < 200; ++i)
        pc.points.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50),
                             rng.uniform(-3, 3), rng.uniform(0, 1)});
    std::string path = testing::TempDir() + "/pc_rt.llpc";
    save_point_cloud(path, pc);
    PointCloud back = load_point_cloud(path);
    ASSERT_EQ(back.size(), pc.size());
    for (size_t i = 0; i < pc.size(); ++i) {
        EXPECT_NEAR(back.points[i].x, pc.points[i].x, 1e-4);
        EXPECT_NEAR(back.points[i].intensity, pc.points[i].intensity, 1e-6);
    }
}

TEST(PointCloudIo, BadMagicRejected) {
    std::string path = testing::TempDir() + "/pc_bad.llpc";
    std::ofstream(path, std::ios::binary) << "XXXX12345678";
    EXPECT_THROW(load_point_cloud(path), std::runtime_error);
}

TEST(BoxFrame, RoundTrip) {
    Rng rng(703);
    for (int i = 0; i < 100; ++i) {
        OrientedBox3D box({rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 2)},
                          rng.uniform(1, 5), rng.uniform(1, 3), rng.uniform(1, 3),
                          rng.uniform(-kPi, kPi));
        PointCloud::Point p{rng.uniform(-30, 30), rng.uniform(-30, 30),
                            rng.uniform(-5, 5), 0};
        PointCloud::Point q = from_box_frame(to_box_frame(p, box), box);
        EXPECT_NEAR(q.x, p.x, 1e-12);
        EXPECT_NEAR(q.y, p.y, 1e-12);
        EXPECT_NEAR(q.z, p.z, 1e-12);
    }
}

TEST(BuildBank, SingleBoxProducesCanonicalEntry) {
    Rng rng(707);
    OrientedBox3D box({10, -5, 0.3}, 4, 1.6, 2, 0.7);
    std::string ann = write_bank_inputs(rng, {{"Car", box}});
    ObjectBank bank = build_bank(ann);
    ASSERT_EQ(bank.entries.size(), 1u);
    const auto& e = bank.entries[0];
    EXPECT_EQ(e.cls, "Car");
    EXPECT_EQ(e.cloud.size(), 50u);
    for (const auto& p : e.cloud.points) {
        EXPECT_LE(std::fabs(p.x), box.l / 2 + 1e-4);
        EXPECT_LE(std::fabs(p.y), box.w / 2 + 1e-4);
        EXPECT_LE(std::fabs(p.z), box.h / 2 + 1e-4);
    }
}

TEST(BuildBank, CanonicalizationInvertsToSourcePose) {
    Rng rng(709);
    OrientedBox3D box({-7, 12, -0.5}, 5, 2, 2.2, -1.1);
    std::string ann = write_bank_inputs(rng, {{"Truck", box}});
    ObjectBank bank = build_bank(ann);
    ASSERT_EQ(bank.entries.size(), 1u);
    // re-place at the source pose (no rescale: sizes match) and compare against
    // the original interior points, reloaded through the same f32 file
    std::filesystem::path dir = std::filesystem::path(ann).parent_path();
    PointCloud original = load_point_cloud((dir / "scene0.llpc").string());
    PointCloud replaced;
    place_object(bank.entries[0].cloud, box.l, box.h, box.w, "Truck", box, 0, replaced);
    ASSERT_EQ(replaced.size(), original.size());
    for (size_t i = 0; i < original.size(); ++i) {
        EXPECT_NEAR(replaced.points[i].x, original.points[i].x, 1e-9);
        EXPECT_NEAR(replaced.points[i].y, original.points[i].y, 1e-9);
        EXPECT_NEAR(replaced.points[i].z, original.points[i].z, 1e-9);
    }
}

TEST(BuildBank, SparseBoxesSkippedWithCount) {
    Rng rng(711);
    OrientedBox3D full({5, 0, 0}, 4, 1.5, 2, 0);
    OrientedBox3D empty({40, 40, 0}, 4, 1.5, 2, 0);  // no points written inside
    std::string dir = testing::TempDir() + "/bank_sparse";
    std::filesystem::create_directories(dir);
    PointCloud pc = box_interior_cloud(rng, full, 30);
    save_point_cloud(dir + "/scene0.llpc", pc);
    nlohmann::json jb = nlohmann::json::array();
    for (const auto& b : {full, empty})
        jb.push_back({{"class", "Car"},
                      {"center", {b.center.x, b.center.y, b.center.z}},
                      {"size", {b.l, b.h, b.w}},
                      {"yaw", b.yaw}});
    std::ofstream(dir + "/ann.json") << nlohmann::json{
        {"scenes",
         {{{"scene_id", "s0"}, {"points_file", "scene0.llpc"}, {"boxes", jb}}}}};
    ObjectBank bank = build_bank(dir + "/ann.json");
    EXPECT_EQ(bank.entries.size(), 1u);
    EXPECT_EQ(bank.skipped_sparse, 1);
}

TEST(BankIo, SaveLoadRoundTrip) {
    Rng rng(713);
    std::string ann = write_bank_inputs(
        rng, {{"Car", OrientedBox3D({5, 0, 0}, 4, 1.5, 2, 0.3)},
              {"Pedestrian", OrientedBox3D({-3, 4, 0}, 0.6, 1.8, 0.6, 0)}});
    ObjectBank bank = build_bank(ann);
    std::string dir = testing::TempDir() + "/bank_out";
    save_bank(dir, bank);
    ObjectBank back = load_bank(dir);
    ASSERT_EQ(back.entries.size(), bank.entries.size());
    for (size_t i = 0; i < bank.entries.size(); ++i) {
        EXPECT_EQ(back.entries[i].cls, bank.entries[i].cls);
        EXPECT_NEAR(back.entries[i].l, bank.entries[i].l, 1e-12);
        EXPECT_EQ(back.entries[i].cloud.size(), bank.entries[i].cloud.size());
    }
}

TEST(Retrieve, BruteForceArgminOracle) {
    Rng rng(717);
    ObjectBank bank;
    for (int i = 0; i < 40; ++i) {
        ObjectBank::Entry e;
        e.cls = i % 2 == 0 ? "Car" : "Truck";
        e.l = rng.uniform(2, 8);
        e.h = rng.uniform(1, 4);
        e.w = rng.uniform(1, 3);
        e.cloud.points.resize(12);
        bank.entries.push_back(e);
    }
    for (int trial = 0; trial < 50; ++trial) {
        std::string cls = trial % 2 == 0 ? "Car" : "Truck";
        double l = rng.uniform(2, 8), h = rng.uniform(1, 4), w = rng.uniform(1, 3);
        const auto& got = retrieve(bank, cls, l, h, w);
        const ObjectBank::Entry* want = nullptr;
        double best = 1e18;
        for (const auto& e : bank.entries) {
            if (e.cls != cls) continue;
            double d = std::pow(std::log(e.l / l), 2) + std::pow(std::log(e.h / h), 2) +
                       std::pow(std::log(e.w / w), 2);
            if (d < best) {
                best = d;
                want = &e;
            }
        }
        EXPECT_EQ(&got, want);
    }
}

TEST(Retrieve, ExactMatchAndTies) {
    ObjectBank bank;
    for (int i = 0; i < 3; ++i) {
        ObjectBank::Entry e;
        e.cls = "Car";
        e.l = 4;
        e.h = 1.5;
        e.w = 2;
        bank.entries.push_back(e);
    }
    // all identical: tie broken by lowest index
    EXPECT_EQ(&retrieve(bank, "Car", 4, 1.5, 2), &bank.entries[0]);
    EXPECT_THROW(retrieve(bank, "Bicycle", 1, 1, 1), std::invalid_argument);
    EXPECT_THROW(retrieve(bank, "Car", 0, 1, 1), std::invalid_argument);
}

TEST(Procedural, DeterministicAndContained) {
    PointCloud a = procedural_sample("Car", 4, 1.5, 2, 99);
    PointCloud b = procedural_sample("Car", 4, 1.5, 2, 99);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_DOUBLE_EQ(a.points[i].x, b.points[i].x);
        EXPECT_LE(std::fabs(a.points[i].x), 2 + 1e-12);
        EXPECT_LE(std::fabs(a.points[i].y), 1 + 1e-12);
        EXPECT_LE(std::fabs(a.points[i].z), 0.75 + 1e-12);
    }
    PointCloud c = procedural_sample("Car", 4, 1.5, 2, 100);
    bool differs = a.size() != c.size();
    for (size_t i = 0; !differs && i < a.size(); ++i)
        differs = a.points[i].x != c.points[i].x;
    EXPECT_TRUE(differs);
}

TEST(Procedural, CountScalesWithSurfaceArea) {
    double area1 = 2 * (4.0 * 2 + 4.0 * 1.5 + 2.0 * 1.5);
    double area2 = 2 * (8.0 * 2.5 + 8.0 * 3 + 2.5 * 3);
    PointCloud a = procedural_sample("Car", 4, 1.5, 2, 1);
    PointCloud b = procedural_sample("Truck", 8, 3, 2.5, 1);
    double ratio = static_cast<double>(b.size()) / static_cast<double>(a.size());
    EXPECT_NEAR(ratio, area2 / area1, 0.2 * area2 / area1);
}

TEST(Procedural, CylinderClassesStayInsideBox) {
    PointCloud p = procedural_sample("Pedestrian", 0.6, 1.8, 0.6, 5);
    EXPECT_GT(p.size(), 10u);
    for (const auto& q : p.points) {
        EXPECT_LE(std::fabs(q.x), 0.3 + 1e-12);
        EXPECT_LE(std::fabs(q.y), 0.3 + 1e-12);
        EXPECT_LE(std::fabs(q.z), 0.9 + 1e-12);
    }
}

TEST(Compose, TranslationMovesPointsExactly) {
    std::vector<std::pair<std::string, OrientedBox3D>> l1{
        {"Car", OrientedBox3D({0, 0, 0}, 4, 1.5, 2, 0.4)}};
    std::vector<std::pair<std::string, OrientedBox3D>> l2{
        {"Car", OrientedBox3D({7, -3, 1}, 4, 1.5, 2, 0.4)}};
    PointCloud a = compose_foreground_procedural(l1, 42);
    PointCloud b = compose_foreground_procedural(l2, 42);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(b.points[i].x - a.points[i].x, 7, 1e-12);
        EXPECT_NEAR(b.points[i].y - a.points[i].y, -3, 1e-12);
        EXPECT_NEAR(b.points[i].z - a.points[i].z, 1, 1e-12);
    }
}

TEST(Compose, GlobalRotationEquivariance) {
    double phi = 0.8;
    OrientedBox3D box({10, 4, 0}, 4, 1.5, 2, 0.3);
    double c = std::cos(phi), s = std::sin(phi);
    OrientedBox3D rotated({c * 10 - s * 4, s * 10 + c * 4, 0}, 4, 1.5, 2,
                          normalize_angle(0.3 + phi));
    PointCloud a = compose_foreground_procedural({{"Car", box}}, 7);
    PointCloud b = compose_foreground_procedural({{"Car", rotated}}, 7);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(b.points[i].x, c * a.points[i].x - s * a.points[i].y, 1e-9);
        EXPECT_NEAR(b.points[i].y, s * a.points[i].x + c * a.points[i].y, 1e-9);
        EXPECT_NEAR(b.points[i].z, a.points[i].z, 1e-12);
    }
}

TEST(Compose, InstanceTagsPartitionCloud) {
    Rng rng(719);
    std::string ann = write_bank_inputs(
        rng, {{"Car", OrientedBox3D({5, 0, 0}, 4, 1.5, 2, 0)},
              {"Car", OrientedBox3D({-5, 3, 0}, 4.5, 1.4, 2.1, 0.5)}});
    ObjectBank bank = build_bank(ann);
    std::vector<std::pair<std::string, OrientedBox3D>> layout{
        {"Car", OrientedBox3D({12, 1, 0}, 4.2, 1.5, 2, 1.2)},
        {"Car", OrientedBox3D({-8, -6, 0}, 3.9, 1.6, 1.9, -0.3)}};
    PointCloud out = compose_foreground(layout, bank);
    std::vector<size_t> counts(2, 0);
    for (const auto& p : out.points) {
        ASSERT_GE(p.instance, 0);
        ASSERT_LT(p.instance, 2);
        counts[static_cast<size_t>(p.instance)]++;
        // containment with 5% slack after anisotropic rescale
        EXPECT_TRUE(point_in_box(p, layout[static_cast<size_t>(p.instance)].second, 0.05));
    }
    EXPECT_GT(counts[0], 0u);
    EXPECT_GT(counts[1], 0u);
    EXPECT_EQ(counts[0] + counts[1], out.size());
}

TEST(Compose, EmptyLayoutRejected) {
    ObjectBank bank;
    EXPECT_THROW(compose_foreground({}, bank), std::invalid_argument);
    EXPECT_THROW(compose_foreground_procedural({}, 1), std::invalid_argument);
}
