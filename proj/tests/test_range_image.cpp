#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "lgen/range_image.hpp"
#include "lgen/rng.hpp"

using namespace lgen;

namespace {

PointCloud random_cloud(Rng& rng, int n, double rmin = 2, double rmax = 60) {
    PointCloud pc;
    for (int i = 0; i < n; ++i) {
        double az = rng.uniform(-kPi, kPi);
        double el = rng.uniform(-kDefaultFovDown * 0.95, kDefaultFovUp * 0.95);
        double d = rng.uniform(rmin, rmax);
        PointCloud::Point p;
        p.x = d * std::cos(el) * std::cos(az);
        p.y = d * std::cos(el) * std::sin(az);
        p.z = d * std::sin(el);
        p.intensity = rng.uniform(0, 1);
        pc.points.push_back(p);
    }
    return pc;
}

}  // namespace

TEST(Project, ForwardAxisLandsAtThreeQuarterHeight) {
    PointCloud pc;
    pc.points.push_back({10, 0, 0, 0.5});
    RangeImage img = project(pc, 32, 256);
    // u = (1/2)(1 - 0) W = 128; v = (1 - (0 + 10deg)/40deg) H = 0.75 * 32 = 24
    EXPECT_NEAR(img.d(24, 128), 10.0, 1e-12);
    EXPECT_NEAR(img.inten(24, 128), 0.5, 1e-12);
    int valid = 0;
    for (double d : img.depth)
        if (d > 0) valid++;
    EXPECT_EQ(valid, 1);
}

TEST(Project, RearAxisWrapsToImageEdge) {
    PointCloud pc;
    pc.points.push_back({-10, 0, 0, 0});   // atan2 = pi -> u = 0
    pc.points.push_back({0, 10, 0, 0});    // atan2 = pi/2 -> u = W/4
    pc.points.push_back({0, -10, 0, 0});   // atan2 = -pi/2 -> u = 3W/4
    RangeImage img = project(pc, 32, 256);
    EXPECT_GT(img.d(24, 0), 0.0);
    EXPECT_GT(img.d(24, 64), 0.0);
    EXPECT_GT(img.d(24, 192), 0.0);
}

// Independent per-point recomputation, including nearer-wins resolution.
TEST(Project, BruteForceOracleWithCollisions) {
    Rng rng(401);
    for (int trial = 0; trial < 10; ++trial) {
        PointCloud pc = random_cloud(rng, 3000, 2, 30);
        ProjectionStats stats;
        RangeImage img = project(pc, 16, 64, kDefaultFovUp, kDefaultFovDown, &stats);
        std::map<std::pair<int, int>, double> best;
        double f = kDefaultFovUp + kDefaultFovDown;
        int64_t collisions = 0;
        for (const auto& p : pc.points) {
            double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
            int u = std::clamp(
                static_cast<int>(std::floor(0.5 * (1 - std::atan2(p.y, p.x) / kPi) * 64)),
                0, 63);
            int v = std::clamp(
                static_cast<int>(
                    std::floor((1 - (std::asin(p.z / d) + kDefaultFovUp) / f) * 16)),
                0, 15);
            auto it = best.find({v, u});
            if (it == best.end())
                best[{v, u}] = d;
            else {
                collisions++;
                it->second = std::min(it->second, d);
            }
        }
        EXPECT_EQ(stats.dropped_by_depth, collisions);
        EXPECT_EQ(stats.skipped_origin, 0);
        int64_t valid = 0;
        for (int v = 0; v < 16; ++v)
            for (int u = 0; u < 64; ++u)
                if (img.valid(v, u)) {
                    valid++;
                    EXPECT_NEAR(img.d(v, u), best.at({v, u}), 1e-12);
                }
        EXPECT_EQ(valid, static_cast<int64_t>(best.size()));
    }
}

TEST(Project, OriginPointsSkippedAndCounted) {
    PointCloud pc;
    pc.points.push_back({0, 0, 0, 1});
    pc.points.push_back({5, 0, 0, 1});
    ProjectionStats stats;
    RangeImage img = project(pc, 8, 32, kDefaultFovUp, kDefaultFovDown, &stats);
    EXPECT_EQ(stats.skipped_origin, 1);
    int valid = 0;
    for (double d : img.depth)
        if (d > 0) valid++;
    EXPECT_EQ(valid, 1);
}

TEST(Unproject, PointsHaveStoredRange) {
    Rng rng(409);
    RangeImage img = project(random_cloud(rng, 500), 32, 256);
    PointCloud pc = unproject(img);
    size_t valid = 0;
    for (double d : img.depth)
        if (d > 0) valid++;
    ASSERT_EQ(pc.size(), valid);
    size_t k = 0;
    for (int v = 0; v < img.h; ++v)
        for (int u = 0; u < img.w; ++u) {
            if (!img.valid(v, u)) continue;
            const auto& p = pc.points[k++];
            double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
            EXPECT_NEAR(d, img.d(v, u), 1e-12);
        }
}

// Pixel-center rays re-project onto the same pixels with the same depth, so a
// second projection pass is an exact fixed point.
TEST(Unproject, ReprojectionIsFixedPoint) {
    Rng rng(419);
    RangeImage img = project(random_cloud(rng, 4000), 32, 256);
    RangeImage img2 = project(unproject(img), 32, 256, img.f_up, img.f_down);
    for (size_t i = 0; i < img.depth.size(); ++i) {
        EXPECT_NEAR(img2.depth[i], img.depth[i], 1e-9);
        EXPECT_NEAR(img2.intensity[i], img.intensity[i], 1e-12);
    }
}

TEST(Unproject, AngularErrorBoundedByPixelPitch) {
    Rng rng(421);
    // elevations below -f_up fall off the image bottom and clamp to the last
    // row, so restrict the cloud to the band rows can represent exactly
    PointCloud pc;
    for (int i = 0; i < 200; ++i) {
        double az = rng.uniform(-kPi, kPi);
        double el = rng.uniform(-kDefaultFovUp * 0.9, kDefaultFovUp * 0.9);
        double d = rng.uniform(5, 50);
        PointCloud::Point p;
        p.x = d * std::cos(el) * std::cos(az);
        p.y = d * std::cos(el) * std::sin(az);
        p.z = d * std::sin(el);
        pc.points.push_back(p);
    }
    RangeImage img = project(pc, 64, 1024);
    PointCloud rec = unproject(img);
    // each reconstructed point should be close to some original point; with a
    // fine grid the offset is bounded by depth * pixel angular pitch
    double max_pitch = std::max(2 * kPi / 1024, (img.f_up + img.f_down) / 64);
    for (const auto& q : rec.points) {
        double dq = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
        double best = 1e18;
        for (const auto& p : pc.points) {
            double e = std::hypot(std::hypot(p.x - q.x, p.y - q.y), p.z - q.z);
            best = std::min(best, e);
        }
        EXPECT_LT(best, dq * max_pitch * 1.5);
    }
}

TEST(Masks, DownsampleMatchesBruteForce) {
    Rng rng(431);
    int h = 16, w = 32;
    std::vector<uint8_t> mask(static_cast<size_t>(h * w));
    for (auto& m : mask) m = rng.uniform() < 0.3 ? 1 : 0;
    auto down = downsample_mask(mask, h, w);
    for (int v = 0; v < h / 2; ++v)
        for (int u = 0; u < w / 2; ++u) {
            uint8_t any = 0;
            for (int dv = 0; dv < 2; ++dv)
                for (int du = 0; du < 2; ++du)
                    any |= mask[static_cast<size_t>((2 * v + dv) * w + 2 * u + du)];
            EXPECT_EQ(down[static_cast<size_t>(v * (w / 2) + u)], any);
        }
}

TEST(Masks, PyramidShapesAndOccupancyMonotone) {
    Rng rng(433);
    RangeImage img = project(random_cloud(rng, 800), 32, 256);
    auto pyr = mask_pyramid(img, 3);
    ASSERT_EQ(pyr.size(), 3u);
    EXPECT_EQ(pyr[0].size(), 32u * 256u);
    EXPECT_EQ(pyr[1].size(), 16u * 128u);
    EXPECT_EQ(pyr[2].size(), 8u * 64u);
    auto frac = [](const std::vector<uint8_t>& m) {
        double s = 0;
        for (auto v : m) s += v;
        return s / static_cast<double>(m.size());
    };
    EXPECT_GE(frac(pyr[1]), frac(pyr[0]));
    EXPECT_GE(frac(pyr[2]), frac(pyr[1]));
}

TEST(Masks, OddDimensionsRejected) {
    EXPECT_THROW(downsample_mask(std::vector<uint8_t>(15), 3, 5), std::invalid_argument);
}

TEST(RangeImageIo, RoundTripWithinFloatPrecision) {
    Rng rng(439);
    RangeImage img = project(random_cloud(rng, 1500), 32, 256);
    std::string path = testing::TempDir() + "/ri_roundtrip.bin";
    save_range_image(path, img);
    RangeImage back = load_range_image(path);
    EXPECT_EQ(back.h, img.h);
    EXPECT_EQ(back.w, img.w);
    EXPECT_NEAR(back.f_up, img.f_up, 1e-7);
    for (size_t i = 0; i < img.depth.size(); ++i) {
        EXPECT_NEAR(back.depth[i], img.depth[i], 1e-5 * std::max(1.0, img.depth[i]));
        EXPECT_NEAR(back.intensity[i], img.intensity[i], 1e-6);
    }
}

TEST(RangeImageIo, BadMagicRejected) {
    std::string path = testing::TempDir() + "/ri_bad.bin";
    std::ofstream(path, std::ios::binary) << "NOPExxxxxxxxxxxxxxxx";
    EXPECT_THROW(load_range_image(path), std::runtime_error);
}

TEST(RangeImageIo, TruncatedFileRejected) {
    RangeImage img(4, 8, kDefaultFovUp, kDefaultFovDown);
    std::string path = testing::TempDir() + "/ri_trunc.bin";
    save_range_image(path, img);
    std::ifstream is(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), {});
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 10);
    EXPECT_THROW(load_range_image(path), std::runtime_error);
}

TEST(RangeImage, InvalidConstructionRejected) {
    EXPECT_THROW(RangeImage(0, 8, kDefaultFovUp, kDefaultFovDown),
                 std::invalid_argument);
    EXPECT_THROW(RangeImage(4, 8, -0.1, 0.1), std::invalid_argument);
}
