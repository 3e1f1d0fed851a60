#include "coplanar/patch_extraction.hpp"
#include "coplanar/patch_inputs.hpp"
#include "coplanar/synth.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace coplanar;

namespace {

const Intrinsics kIntr{130.0, 130.0, 79.5, 59.5};

Frame render(const std::vector<PlaneRect>& planes, int w = 160, int h = 120)
{
    return detail::render_frame(planes, RigidTransform::identity(), kIntr, w, h, 0);
}

double angle_deg(const Vec3& a, const Vec3& b)
{
    return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST(Normals, FrontoParallelPlane)
{
    Frame f;
    f.intrinsics = kIntr;
    f.depth = Image<float>(160, 120, 2.0f);
    const auto n = estimate_normals(f, ExtractionParams{});
    int valid = 0;
    for (int y = 0; y < 120; ++y)
        for (int x = 0; x < 160; ++x) {
            if (n(x, y).squaredNorm() == 0.0f)
                continue;
            ++valid;
            EXPECT_LT(angle_deg(n(x, y).cast<double>(), -Vec3::UnitZ()), 0.5);
        }
    // image corners see fewer than half of the window
    EXPECT_EQ(valid, 160 * 120 - 4 * 3);
}

TEST(Normals, TiltedPlaneMatchesAnalyticNormal)
{
    // plane through (0, 0, 2) tilted 30 degrees about the x axis
    const double a = 30.0 * std::numbers::pi / 180.0;
    const Vec3 normal(0.0, std::sin(a), -std::cos(a));
    const auto planes = std::vector<PlaneRect>{
        detail::make_rect(0, {0, 0, 2}, normal, Vec3::UnitX(), 10.0, 10.0, {100, 100, 100})};
    const Frame f = render(planes);
    const auto n = estimate_normals(f, ExtractionParams{});
    int valid = 0;
    for (int y = 0; y < 120; ++y)
        for (int x = 0; x < 160; ++x)
            if (n(x, y).squaredNorm() > 0.0f) {
                ++valid;
                EXPECT_LT(angle_deg(n(x, y).cast<double>(), normal), 1.0);
            }
    EXPECT_GT(valid, 0);
}

TEST(Normals, NoiseDepthDoesNotCrashAndAllInvalidThrows)
{
    Frame f;
    f.intrinsics = kIntr;
    f.depth = Image<float>(64, 48, 0.0f);
    EXPECT_THROW(estimate_normals(f, ExtractionParams{}), DataError);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.0f, 4.0f);
    for (auto& d : f.depth.data())
        d = u(rng) < 1.0f ? 0.0f : u(rng);
    const auto n = estimate_normals(f, ExtractionParams{});
    int invalid = 0;
    for (const auto& v : n.data())
        invalid += v.squaredNorm() == 0.0f;
    EXPECT_GT(invalid, 0);
}

TEST(Segmentation, ThreeOrthogonalPlanes)
{
    const Frame f = render(detail::layout_planes("three_planes"));
    const auto planes = detail::layout_planes("three_planes");
    const ExtractionParams params;
    const auto patches = segment_planar_patches(f, params);
    ASSERT_EQ(patches.size(), 3u);
    std::set<int> matched;
    std::set<int> used_pixels;
    for (const auto& p : patches) {
        EXPECT_GE(p.pixel_count, params.min_valid_pixels);
        int best = -1;
        for (const auto& pr : planes)
            if (angle_deg(p.plane.normal, pr.plane.normal) < 1.0 || angle_deg(p.plane.normal, -pr.plane.normal) < 1.0)
                best = pr.id;
        ASSERT_GE(best, 0);
        matched.insert(best);
        const Plane& truth = planes[static_cast<std::size_t>(best)].plane;
        EXPECT_LT(std::abs(truth.signed_distance(p.plane.point)), 0.005);
        // refit on samples reproduces the stored plane
        const PlaneFit refit = fit_plane(p.samples);
        EXPECT_NEAR(std::abs(refit.plane.normal.dot(p.plane.normal)), 1.0, 1e-6);
        EXPECT_LT(std::abs(p.plane.signed_distance(refit.plane.point)), 1e-6);
        // per-pixel residual and disjointness
        std::vector<Vec3> pts;
        for (const int idx : p.pixels) {
            EXPECT_TRUE(used_pixels.insert(idx).second);
            const int x = idx % 160, y = idx / 160;
            ASSERT_GT(f.depth(x, y), 0.0f);
            pts.push_back(f.intrinsics.back_project(x, y, f.depth(x, y)));
        }
        EXPECT_LE(fit_plane(pts).rms, params.merge_plane_rms_m);
        EXPECT_GT(p.area, 0.0);
    }
    EXPECT_EQ(matched.size(), 3u);
}

TEST(Segmentation, AreaMatchesVisibleRectangle)
{
    // a 1 m x 0.6 m rectangle at 2 m, fully visible
    const auto planes = std::vector<PlaneRect>{
        detail::make_rect(0, {0, 0, 2}, -Vec3::UnitZ(), Vec3::UnitX(), 0.5, 0.3, {100, 100, 100})};
    const auto patches = segment_planar_patches(render(planes), ExtractionParams{});
    ASSERT_EQ(patches.size(), 1u);
    EXPECT_NEAR(patches[0].area, 0.6, 0.05);
}

TEST(Segmentation, SmallPlaneIsDiscardedAndEmptyFrameGivesNothing)
{
    // about 200 valid pixels
    const auto planes = std::vector<PlaneRect>{
        detail::make_rect(0, {0, 0, 2}, -Vec3::UnitZ(), Vec3::UnitX(), 0.11, 0.11, {100, 100, 100})};
    const Frame f = render(planes);
    int valid = 0;
    for (const float d : f.depth.data())
        valid += d > 0.0f;
    ASSERT_GT(valid, 150);
    ASSERT_LT(valid, 300);
    EXPECT_TRUE(segment_planar_patches(f, ExtractionParams{}).empty());

    Frame empty;
    empty.intrinsics = kIntr;
    empty.depth = Image<float>(32, 32, 0.0f);
    EXPECT_TRUE(segment_planar_patches(empty, ExtractionParams{}).empty());
}

TEST(Segmentation, ParamsValidate)
{
    ExtractionParams p;
    p.min_valid_pixels = 0;
    EXPECT_THROW(p.validate(), UsageError);
    p = {};
    p.merge_normal_angle_deg = 90.0;
    EXPECT_THROW(p.validate(), UsageError);
}

TEST(PatchInputs, CropSizesAndMaskEndpoints)
{
    Frame f = render(detail::layout_planes("single_wall"));
    PlanePatch p;
    p.bbox = {60, 50, 40, 20};
    for (int y = 50; y < 70; ++y)
        for (int x = 60; x < 100; ++x)
            p.pixels.push_back(y * 160 + x);
    const auto b = build_patch_inputs(f, p);
    EXPECT_EQ(b.local.region.width, 60);
    EXPECT_EQ(b.local.region.height, 30);
    EXPECT_EQ(b.global.region.width, 200);
    EXPECT_EQ(b.global.region.height, 100);
    for (const auto* c : {&b.local, &b.global}) {
        EXPECT_EQ(c->rgb.width(), 224);
        EXPECT_EQ(c->depth.height(), 224);
        EXPECT_EQ(c->normal.width(), 224);
        EXPECT_EQ(c->mask.width(), 224);
    }
    for (const float m : b.local.mask.data())
        EXPECT_TRUE(m == 0.0f || m == 1.0f);
    for (const float m : b.global.mask.data()) {
        EXPECT_GE(m, 0.0f);
        EXPECT_LE(m, 1.0f);
    }
    EXPECT_EQ(b.global.mask(0, 0), 0.0f);
    EXPECT_EQ(b.global.mask(223, 223), 0.0f);
    EXPECT_EQ(b.global.mask(112, 112), 1.0f);
    EXPECT_EQ(b.local.mask(112, 112), 1.0f);
    EXPECT_EQ(b.local.mask(0, 0), 0.0f);
    // the global crop is clamped vertically (100 rows of 120) and padded with gray
    EXPECT_EQ(b.global.rgb(0, 0), (Rgb8{128, 128, 128}));
    EXPECT_EQ(b.global.depth(0, 0), 0.0f);

    PlanePatch empty;
    EXPECT_THROW(build_patch_inputs(f, empty), DataError);
}

TEST(PatchInputs, WholeImagePatch)
{
    const Frame f = render(detail::layout_planes("single_wall"), 32, 32);
    PlanePatch p;
    p.bbox = {0, 0, 32, 32};
    for (int i = 0; i < 32 * 32; ++i)
        p.pixels.push_back(i);
    const auto b = build_patch_inputs(f, p);
    for (const float m : b.local.mask.data())
        EXPECT_EQ(m, 1.0f);
    for (const float m : b.global.mask.data())
        EXPECT_EQ(m, 1.0f);
    // corners of the local crop coincide with the image corners
    EXPECT_EQ(b.local.rgb(0, 0), f.color(0, 0));
    EXPECT_EQ(b.local.rgb(223, 223), f.color(31, 31));
    EXPECT_FLOAT_EQ(b.local.depth(223, 0), f.depth(31, 0));
}
