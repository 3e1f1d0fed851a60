#include "coplanar/pipeline.hpp"
#include "coplanar/synth.hpp"
#include "fixtures.hpp"
#include "loop_scene.hpp"

#include <gtest/gtest.h>

using namespace coplanar;
using namespace coplanar::testing;

namespace {

std::vector<std::pair<int, int>> ranges(const std::vector<Fragment>& fs)
{
    std::vector<std::pair<int, int>> out;
    for (const auto& f : fs)
        out.emplace_back(f.start, f.end);
    return out;
}

SequenceInput scene_input(const SyntheticScene& scene, const LabeledPairs& lp)
{
    SequenceInput in;
    in.n_frames = static_cast<int>(scene.trajectory.size());
    in.patches = scene.patches;
    in.pairs = lp.pairs;
    return in;
}

}  // namespace

TEST(Partition, StrideRule)
{
    const PipelineParams p;
    EXPECT_EQ(ranges(partition(37, p)), (std::vector<std::pair<int, int>>{{0, 20}, {16, 36}}));
    EXPECT_EQ(ranges(partition(21, p)), (std::vector<std::pair<int, int>>{{0, 20}}));
    EXPECT_EQ(ranges(partition(10, p)), (std::vector<std::pair<int, int>>{{0, 9}}));
    EXPECT_THROW(partition(0, p), UsageError);
    PipelineParams bad;
    bad.overlap = 21;
    EXPECT_THROW(partition(40, bad), UsageError);
}

TEST(Partition, CoversWithExactOverlap)
{
    PipelineParams p;
    p.fragment_size = 7;
    p.overlap = 2;
    for (int n = 1; n < 60; ++n) {
        const auto fs = partition(n, p);
        EXPECT_EQ(fs.front().start, 0);
        EXPECT_EQ(fs.back().end, n - 1);
        for (std::size_t k = 0; k + 1 < fs.size(); ++k) {
            EXPECT_EQ(fs[k].size(), 7);
            EXPECT_EQ(fs[k].end - fs[k + 1].start + 1, 2);
        }
    }
}

TEST(Intra, NoConstraintsGivesIdentity)
{
    SequenceInput in;
    in.n_frames = 5;
    const auto fs = partition(5, PipelineParams{});
    const IntraResult r = register_intra(fs[0], in, PipelineParams{});
    ASSERT_EQ(r.local_poses.size(), 5u);
    for (const auto& p : r.local_poses)
        EXPECT_TRUE(p.rotation.isIdentity(0.0) && p.translation.isZero(0.0));
}

TEST(Intra, ExactFragmentAndOutlierSurvivors)
{
    SceneSpec spec;
    spec.layout = "corridor";
    const SyntheticScene scene = generate_scene(spec);
    {
        const LabeledPairs lp = make_labeled_pairs(scene, 200, 0, 1);
        const auto fs = partition(10, PipelineParams{});
        const IntraResult r = register_intra(fs[0], scene_input(scene, lp), PipelineParams{});
        EXPECT_LT(ate(r.local_poses, scene.trajectory), 1e-4);
    }
    {
        const LabeledPairs lp = make_labeled_pairs(scene, 200, 800, 3);
        const auto fs = partition(10, PipelineParams{});
        const IntraResult r = register_intra(fs[0], scene_input(scene, lp), PipelineParams{});
        std::size_t kept_outliers = 0;
        for (const auto k : r.surviving_pairs)
            kept_outliers += lp.correct[k] ? 0 : 1;
        EXPECT_LE(kept_outliers, static_cast<std::size_t>(0.05 * 800));
    }
}

TEST(Inter, PlantedFragmentTransforms)
{
    std::vector<Fragment> fs(3);
    const std::vector<RigidTransform> gt = {
        RigidTransform::identity(), perturbation_10cm_10deg(),
        RigidTransform::from_axis_angle(Vec3(0.05, -0.1, 0.08), Vec3(-0.07, 0.04, 0.09))};
    for (int k = 0; k < 3; ++k) {
        fs[static_cast<std::size_t>(k)].id = k;
        fs[static_cast<std::size_t>(k)].local_poses = {RigidTransform::identity()};
    }
    std::vector<CrossPair> pairs;
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b)
            for (const auto& pl : orthogonal_planes())
                pairs.push_back(cross(a, pl, gt[static_cast<std::size_t>(a)], b, gt[static_cast<std::size_t>(b)]));
    const InterResult r = register_inter(fs, pairs, {}, PipelineParams{});
    for (int k = 1; k < 3; ++k) {
        const PoseError e = pose_error(r.fragment_poses[static_cast<std::size_t>(k)], gt[static_cast<std::size_t>(k)]);
        EXPECT_LT(e.translation, 1e-4);
        EXPECT_LT(e.rotation * 180.0 / std::numbers::pi, 0.01);
    }
    // no verified cross pairs: fragments keep their (identity) poses
    const InterResult none = register_inter(fs, {}, {}, PipelineParams{});
    for (const auto& p : none.fragment_poses)
        EXPECT_TRUE(p.translation.isZero(0.0) && p.rotation.isIdentity(0.0));
}


TEST(Inter, LongRangePairsCloseTheLoop)
{
    const LoopScene s = make_loop_scene();
    std::vector<CrossPair> all = s.local_pairs;
    all.insert(all.end(), s.long_range_pairs.begin(), s.long_range_pairs.end());
    const PipelineParams params;
    const InterResult with = register_inter(s.fragments, all, {}, params);
    const InterResult without = register_inter(s.fragments, s.local_pairs, {}, params);
    auto to_global = [&](const InterResult& r) {
        std::vector<RigidTransform> out;
        for (const auto& p : r.fragment_poses)
            out.push_back(s.fragments.front().pose * p);
        return out;
    };
    EXPECT_LT(closure_residual(to_global(with), s.gt), 0.01);
    EXPECT_GT(closure_residual(to_global(without), s.gt), 0.05);
    EXPECT_LE(ate(to_global(with), s.gt), ate(to_global(without), s.gt));
}

TEST(Compose, DefinitionAndEarlierFragmentWins)
{
    PipelineParams p;
    p.fragment_size = 4;
    p.overlap = 2;
    auto fs = partition(6, p);
    ASSERT_EQ(fs.size(), 2u);
    for (std::size_t k = 0; k < 4; ++k)
        fs[0].local_poses[k] = RigidTransform(Mat3::Identity(), Vec3(0.1 * static_cast<double>(k), 0, 0));
    for (std::size_t k = 0; k < 4; ++k)
        fs[1].local_poses[k] = RigidTransform(Mat3::Identity(), Vec3(0, 0.1 * static_cast<double>(k), 0));
    const RigidTransform g = RigidTransform::from_axis_angle(Vec3(0, 0, 0.3), Vec3(1, 2, 3));
    fs[1].pose = g;
    OverlapDiagnostic diag;
    const auto poses = compose_trajectory(fs, 6, &diag);
    // frames 2 and 3 come from fragment 0
    EXPECT_LT((poses[2].translation - Vec3(0.2, 0, 0)).norm(), 1e-15);
    EXPECT_LT((poses[3].translation - Vec3(0.3, 0, 0)).norm(), 1e-15);
    EXPECT_LT((poses[5].translation - (g * fs[1].local(5)).translation).norm(), 1e-15);
    EXPECT_GT(diag.max_translation, 0.0);

    auto single = partition(3, PipelineParams{});
    single[0].local_poses[2] = g;
    EXPECT_LT((compose_trajectory(single, 3)[2].translation - g.translation).norm(), 1e-15);
    EXPECT_THROW(compose_trajectory(single, 4), DataError);
}

TEST(Sequence, EndToEndTwoFragmentsDeterministic)
{
    SceneSpec spec;
    spec.layout = "corridor";
    spec.frames = 37;
    spec.step = 0.04;
    const SyntheticScene scene = generate_scene(spec);
    const LabeledPairs lp = make_labeled_pairs(scene, 3000, 0, 2, 2.5, 0.0, 4);
    const SequenceInput in = scene_input(scene, lp);
    const SequenceResult a = register_sequence(in, PipelineParams{});
    ASSERT_EQ(a.fragments.size(), 2u);
    EXPECT_LT(ate(a.poses, scene.trajectory), 1e-3);
    EXPECT_LT(a.overlap.max_translation, 1e-3);
    const SequenceResult b = register_sequence(in, PipelineParams{});
    for (std::size_t k = 0; k < a.poses.size(); ++k) {
        EXPECT_EQ(a.poses[k].rotation, b.poses[k].rotation);
        EXPECT_EQ(a.poses[k].translation, b.poses[k].translation);
    }
}
