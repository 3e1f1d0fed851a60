#include "coplanar/metrics.hpp"
#include "coplanar/patch_extraction.hpp"
#include "coplanar/synth.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace coplanar;

namespace {

std::vector<RigidTransform> wobbly_trajectory(int n)
{
    std::vector<RigidTransform> out;
    for (int k = 0; k < n; ++k)
        out.push_back(RigidTransform::from_axis_angle(Vec3(0.1 * std::sin(k), 0.05 * k, 0.0),
                                                      Vec3(std::cos(0.3 * k), 0.2 * k, std::sin(0.5 * k))));
    return out;
}

std::vector<SyntheticScene> cop_scenes()
{
    std::vector<SyntheticScene> scenes;
    std::uint64_t seed = 0;
    for (const double tile : {1.0, 0.35, 0.15}) {
        SceneSpec spec;
        spec.layout = "room";
        spec.trajectory = "circle";
        spec.frames = 5;
        spec.step = 0.3;
        spec.rotation_step_deg = 20.0;
        spec.tile_size = tile;
        spec.samples_per_patch = 16;
        spec.seed = seed++;
        scenes.push_back(generate_scene(spec));
    }
    return scenes;
}

}  // namespace

TEST(Ate, TrivialCases)
{
    const auto gt = wobbly_trajectory(12);
    EXPECT_EQ(ate_rmse(gt, gt, false), 0.0);
    EXPECT_LT(ate_rmse(gt, gt, true), 1e-12);
    auto shifted = gt;
    for (auto& p : shifted)
        p.translation += Vec3(3, 4, 0);
    EXPECT_NEAR(ate_rmse(shifted, gt, false), 5.0, 1e-12);
    EXPECT_LT(ate_rmse(shifted, gt, true), 1e-9);
    const std::vector<RigidTransform> short_traj(gt.begin(), gt.begin() + 5);
    EXPECT_THROW(ate_rmse(short_traj, gt, true), DataError);
}

TEST(Ate, AlignedIsInvariantToRigidPretransform)
{
    const auto gt = wobbly_trajectory(15);
    auto est = gt;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 0.02);
    for (auto& p : est)
        p.translation += Vec3(g(rng), g(rng), g(rng));
    const double base = ate_rmse(est, gt, true);
    EXPECT_GT(base, 0.0);
    const RigidTransform t = RigidTransform::from_axis_angle(Vec3(0.3, -1.2, 0.7), Vec3(5, -2, 9));
    auto moved = est;
    for (auto& p : moved)
        p = t * p;
    EXPECT_NEAR(ate_rmse(moved, gt, true), base, 1e-9);
}

TEST(PrCurve, HandEnumeratedCase)
{
    const std::vector<double> d = {1, 2, 3, 4};
    const std::vector<bool> l = {true, true, false, false};
    const PrCurve c = pr_curve(d, l);
    ASSERT_EQ(c.points.size(), 5u);
    const double expect_p[] = {1.0, 1.0, 1.0, 2.0 / 3.0, 0.5};
    const double expect_r[] = {0.0, 0.5, 1.0, 1.0, 1.0};
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_DOUBLE_EQ(c.points[k].precision, expect_p[k]);
        EXPECT_DOUBLE_EQ(c.points[k].recall, expect_r[k]);
    }
    EXPECT_DOUBLE_EQ(c.auc, 1.0);
    // reversed ordering: negatives first
    const PrCurve bad = pr_curve(std::vector<double>{3, 4, 1, 2}, l);
    EXPECT_LT(bad.auc, 0.5);
    EXPECT_THROW(pr_curve(d, std::vector<bool>{true, true, true, true}), DataError);
}

TEST(PrCurve, RandomScoresGiveHalfPrecision)
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> d;
    std::vector<bool> l;
    for (int k = 0; k < 10000; ++k) {
        d.push_back(u(rng));
        l.push_back(k % 2 == 0);
    }
    const PrCurve c = pr_curve(d, l);
    EXPECT_NEAR(c.auc, 0.5, 0.05);
    double last_recall = 0.0;
    for (const auto& pt : c.points) {
        EXPECT_GE(pt.recall, last_recall);
        last_recall = pt.recall;
        EXPECT_GE(pt.precision, 0.0);
        EXPECT_LE(pt.precision, 1.0);
        if (pt.recall >= 0.1) {
            EXPECT_NEAR(pt.precision, 0.5, 0.05);
        }
    }
}

TEST(CopSet, Bins)
{
    EXPECT_EQ(size_bin(0.1), SizeBin::S2);
    EXPECT_EQ(size_bin(0.25), SizeBin::S1);
    EXPECT_EQ(size_bin(0.01), SizeBin::S3);
    EXPECT_FALSE(size_bin(11.0).has_value());
    EXPECT_EQ(distance_bin(2.0), DistanceBin::D3);
    EXPECT_EQ(distance_bin(0.3), DistanceBin::D2);
    EXPECT_EQ(distance_bin(0.1), DistanceBin::D1);
    EXPECT_FALSE(distance_bin(5.5).has_value());
}

TEST(CopSet, BalancedSubsetsAndOracleAuc)
{
    const auto scenes = cop_scenes();
    const CopBenchmarkSet set = build_cop_set(scenes, 600, 3);
    for (std::size_t k = 0; k < 6; ++k) {
        const auto& sub = set.subsets[k];
        ASSERT_EQ(sub.size(), 100u) << CopBenchmarkSet::subset_names[k];
        std::size_t pos = 0;
        for (const auto& c : sub) {
            pos += c.positive;
            if (k < 3)
                EXPECT_EQ(static_cast<std::size_t>(c.size), k);
            else
                EXPECT_EQ(static_cast<std::size_t>(c.range), k - 3);
        }
        EXPECT_EQ(pos, 50u);

        std::vector<double> d;
        std::vector<bool> l;
        for (const auto& c : sub) {
            const SyntheticScene& sc = scenes[c.scene];
            const OracleProvider oracle(sc.trajectory);
            d.push_back(feature_distance(oracle.describe(sc.patches[c.p]), oracle.describe(sc.patches[c.q])));
            l.push_back(c.positive);
        }
        EXPECT_DOUBLE_EQ(pr_curve(d, l).auc, 1.0);
    }
}

TEST(CopSet, UnfillableBinIsNamed)
{
    SceneSpec spec;
    spec.layout = "room";
    spec.frames = 2;
    spec.tile_size = 1.0;
    spec.samples_per_patch = 16;
    const std::vector<SyntheticScene> scenes = {generate_scene(spec)};
    try {
        build_cop_set(scenes, 120, 0, 200000);
        FAIL() << "expected an unfillable bin";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("COP bin S1 cannot be filled"), std::string::npos) << e.what();
    }
}

TEST(Scene, DeterministicAndLabeledByPlaneIdentity)
{
    SceneSpec spec;
    spec.layout = "room";
    spec.trajectory = "circle";
    spec.depth_noise = 0.002;
    spec.seed = 9;
    const SyntheticScene a = generate_scene(spec);
    const SyntheticScene b = generate_scene(spec);
    ASSERT_EQ(a.patches.size(), b.patches.size());
    for (std::size_t k = 0; k < a.patches.size(); ++k)
        ASSERT_EQ(a.patches[k].samples, b.patches[k].samples);
    // noise-free scene: coplanar labels under ground truth match plane identity
    spec.depth_noise = 0.0;
    const SyntheticScene c = generate_scene(spec);
    for (std::size_t i = 0; i < c.patches.size(); i += 7)
        for (std::size_t j = i + 1; j < c.patches.size(); j += 5) {
            const auto& p = c.patches[i];
            const auto& q = c.patches[j];
            const bool lab = label_coplanar(p, q, c.trajectory[static_cast<std::size_t>(p.frame_id)],
                                            c.trajectory[static_cast<std::size_t>(q.frame_id)], 1e-9);
            EXPECT_EQ(lab, c.coplanar(i, j));
        }
    EXPECT_TRUE(c.warnings.empty());
}

TEST(Scene, PlantedOutlierFractionIsExact)
{
    SceneSpec spec;
    spec.layout = "corridor";
    const SyntheticScene s = generate_scene(spec);
    const LabeledPairs lp = make_labeled_pairs(s, 50, 200, 1);
    EXPECT_EQ(lp.pairs.size(), 250u);
    EXPECT_EQ(lp.incorrect_count(), 200u);
    for (std::size_t k = 0; k < lp.pairs.size(); ++k) {
        EXPECT_EQ(s.coplanar(lp.pairs[k].p, lp.pairs[k].q), static_cast<bool>(lp.correct[k]));
        EXPECT_LT(lp.pairs[k].feature_distance, 2.5);
    }
}

TEST(Scene, NoVisiblePlaneRecordsWarning)
{
    SceneSpec spec;
    spec.layout = "single_wall";
    spec.trajectory = "circle";
    spec.frames = 8;
    spec.step = 0.8;
    spec.rotation_step_deg = 45.0;
    const SyntheticScene s = generate_scene(spec);
    EXPECT_FALSE(s.warnings.empty());
    EXPECT_EQ(s.trajectory.size(), 8u);
}

TEST(Scene, RenderedDepthMatchesAnalyticPlanes)
{
    SceneSpec spec;
    spec.layout = "three_planes";
    spec.frames = 2;
    spec.render = true;
    const SyntheticScene s = generate_scene(spec);
    ASSERT_EQ(s.frames.size(), 2u);
    const auto patches = segment_planar_patches(s.frames[0], ExtractionParams{});
    ASSERT_EQ(patches.size(), 3u);
    for (const auto& p : patches) {
        const Plane g = p.global_plane(s.trajectory[0]);
        bool found = false;
        for (const auto& pr : s.planes) {
            const double ang = std::acos(std::clamp(std::abs(g.normal.dot(pr.plane.normal)), 0.0, 1.0)) * 180.0 /
                               std::numbers::pi;
            if (ang < 1.0 && std::abs(pr.plane.signed_distance(g.point)) < 0.005)
                found = true;
        }
        EXPECT_TRUE(found);
    }
}

TEST(Sweep, EndpointsOnExactCorridor)
{
    SceneSpec spec;
    spec.layout = "corridor";
    const SyntheticScene s = generate_scene(spec);
    const std::vector<double> ratios = {0.0, 0.8};
    const auto rows = robustness_sweep(s, ratios, 200, PipelineParams{}, 0);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].incorrect, 800u);
    EXPECT_LT(rows[0].ate, 1e-4);
    EXPECT_LT(rows[1].ate, 0.01);
    EXPECT_LE(rows[0].ate, rows[1].ate);
    EXPECT_GE(rows[1].outliers_rejected, 0.95);
}
