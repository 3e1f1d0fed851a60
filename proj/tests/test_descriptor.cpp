#include "coplanar/descriptor.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace coplanar;
using namespace coplanar::testing;

namespace {

DescriptorVector vec(std::initializer_list<double> v)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (const double x : v)
        out(k++) = x;
    return DescriptorVector(out);
}

std::string write_temp(const std::string& name, const std::string& text)
{
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << text;
    return path.string();
}

/// Two frames, each seeing a floor and a wall twice (two tiles per plane).
struct TwoPlaneScene
{
    std::vector<RigidTransform> poses;
    std::vector<PlanePatch> patches;
    std::vector<int> plane_of;
};

TwoPlaneScene two_plane_scene()
{
    TwoPlaneScene s;
    s.poses = {RigidTransform::identity(), perturbation_10cm_10deg()};
    const std::vector<Plane> planes = {Plane(Vec3(0, 1, 2), -Vec3::UnitY()), Plane(Vec3(0, 0, 3), -Vec3::UnitZ())};
    int id = 0;
    for (int f = 0; f < 2; ++f)
        for (int pl = 0; pl < 2; ++pl)
            for (const double off : {-0.6, 0.6}) {
                const Vec3 shift = off * planes[static_cast<std::size_t>(pl)].normal.unitOrthogonal();
                s.patches.push_back(observe_grid(planes[static_cast<std::size_t>(pl)], s.poses[static_cast<std::size_t>(f)],
                                                 f, id++, 6, 0.5, shift));
                s.plane_of.push_back(pl);
            }
    return s;
}

}  // namespace

TEST(FeatureDistance, KnownValuesAndBruteForce)
{
    EXPECT_EQ(feature_distance(vec({1, 2, 3}), vec({1, 2, 3})), 0.0);
    EXPECT_DOUBLE_EQ(feature_distance(vec({0, 0}), vec({3, 4})), 5.0);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd a(128), b(128);
        double sum = 0.0;
        for (Eigen::Index k = 0; k < 128; ++k) {
            a(k) = g(rng);
            b(k) = g(rng);
            sum += (a(k) - b(k)) * (a(k) - b(k));
        }
        EXPECT_NEAR(feature_distance(DescriptorVector(a), DescriptorVector(b)), std::sqrt(sum), 1e-12);
    }
    EXPECT_THROW(feature_distance(vec({1, 2}), vec({1, 2, 3})), UsageError);
}

TEST(FocalLoss, TabulatedValues)
{
    // delta = d_neg - d_pos
    EXPECT_NEAR(triplet_focal_loss(0.0, 1.0), 0.0, 1e-12);
    EXPECT_NEAR(triplet_focal_loss(0.4, 0.4), 1.0, 1e-12);
    EXPECT_NEAR(triplet_focal_loss(0.0, 0.5), 0.125, 1e-12);
    EXPECT_NEAR(triplet_focal_loss(0.5, 0.0, {1.0, 1.0}), 1.5, 1e-12);
    EXPECT_EQ(triplet_focal_loss(0.0, 3.0), 0.0);
    EXPECT_THROW(triplet_focal_loss(0.0, 1.0, {0.0, 3.0}), UsageError);
    EXPECT_THROW(triplet_focal_loss(0.0, 1.0, {1.0, 0.5}), UsageError);
}

TEST(FocalLoss, FocalCurveBelowLinearAndNonincreasing)
{
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 1000; ++k) {
        const double delta = -1.0 + 2.0 * k / 999.0;
        const double focal = triplet_focal_loss(0.0, delta, {1.0, 3.0});
        const double linear = triplet_focal_loss(0.0, delta, {1.0, 1.0});
        if (delta >= 0.0) {
            EXPECT_LE(focal, linear + 1e-15);
        }
        EXPECT_LE(focal, prev);
        prev = focal;
    }
}

TEST(PairConfidence, KnownValues)
{
    EXPECT_DOUBLE_EQ(pair_confidence(0.0, 2.0), 1.0);
    EXPECT_NEAR(pair_confidence(0.6 * 2.0, 2.0), std::exp(-1.0), 1e-9);
    EXPECT_NEAR(pair_confidence(2.0, 2.0), std::exp(-1.0 / 0.36), 1e-9);
    EXPECT_THROW(pair_confidence(1.0, 0.0), UsageError);
    EXPECT_THROW(pair_confidence(-1.0, 1.0), UsageError);
}

TEST(LabelCoplanar, SamePlaneAndParallelPlanes)
{
    const Plane a(Vec3(0, 0, 2), Vec3::UnitZ());
    const Plane b(Vec3(0, 0, 2.2), Vec3::UnitZ());
    const RigidTransform gt = perturbation_10cm_10deg();
    const PlanePatch p = observe_grid(a, RigidTransform::identity(), 0, 0);
    const PlanePatch q_same = observe_grid(a, gt, 1, 0, 8, 1.0, Vec3(0.4, 0, 0));
    const PlanePatch q_par = observe_grid(b, gt, 1, 1);
    EXPECT_TRUE(label_coplanar(p, q_same, RigidTransform::identity(), gt, 0.02));
    EXPECT_FALSE(label_coplanar(p, q_par, RigidTransform::identity(), gt, 0.02));
    // the label depends on the ground-truth poses
    EXPECT_FALSE(label_coplanar(p, q_same, RigidTransform::identity(), RigidTransform::identity(), 0.02));
}

TEST(Triplets, LabelsMatchGroundTruthAndDeterministic)
{
    const TwoPlaneScene s = two_plane_scene();
    const auto t = sample_triplets(s.patches, s.poses, 100, 7);
    ASSERT_EQ(t.size(), 100u);
    for (const auto& tr : t) {
        EXPECT_EQ(s.plane_of[tr.anchor], s.plane_of[tr.positive]);
        EXPECT_NE(s.plane_of[tr.anchor], s.plane_of[tr.negative]);
        EXPECT_NE(tr.anchor, tr.positive);
        const auto& pa = s.patches[tr.anchor];
        const auto& pp = s.patches[tr.positive];
        const auto& pn = s.patches[tr.negative];
        const auto pose = [&](const PlanePatch& p) { return s.poses[static_cast<std::size_t>(p.frame_id)]; };
        EXPECT_LT(coplanarity_distance(pose(pa), pose(pp), pa, pp), 0.01);
        EXPECT_GE(coplanarity_distance(pose(pa), pose(pn), pa, pn), 0.01);
    }
    const auto again = sample_triplets(s.patches, s.poses, 100, 7);
    for (std::size_t k = 0; k < t.size(); ++k) {
        EXPECT_EQ(t[k].anchor, again[k].anchor);
        EXPECT_EQ(t[k].positive, again[k].positive);
        EXPECT_EQ(t[k].negative, again[k].negative);
    }
    const std::vector<PlanePatch> single = {s.patches.front()};
    EXPECT_THROW(sample_triplets(single, s.poses, 10, 0), DataError);
}

TEST(Providers, ColorHistogram)
{
    Image<Rgb8> img(4, 2, Rgb8{255, 0, 0});
    img(0, 1) = Rgb8{0, 0, 255};
    img(1, 1) = Rgb8{0, 0, 255};
    ColorHistogramProvider provider({img}, 2);
    PlanePatch p;
    p.frame_id = 0;
    p.pixels = {0, 1, 4, 5};
    const DescriptorVector d = provider.describe(p);
    ASSERT_EQ(d.dimension(), 8);
    EXPECT_DOUBLE_EQ(d.values.sum(), 1.0);
    EXPECT_DOUBLE_EQ(d.values((1 * 2 + 0) * 2 + 0), 0.5);
    EXPECT_DOUBLE_EQ(d.values((0 * 2 + 0) * 2 + 1), 0.5);
    p.frame_id = 3;
    EXPECT_THROW(provider.describe(p), DataError);
    EXPECT_THROW(ColorHistogramProvider({img}, 0), UsageError);
}

TEST(Providers, OracleSeparatesPlanes)
{
    const TwoPlaneScene s = two_plane_scene();
    const OracleProvider oracle(s.poses);
    for (std::size_t a = 0; a < s.patches.size(); ++a)
        for (std::size_t b = 0; b < s.patches.size(); ++b) {
            const double d = feature_distance(oracle.describe(s.patches[a]), oracle.describe(s.patches[b]));
            if (s.plane_of[a] == s.plane_of[b])
                EXPECT_LT(d, 1e-9);
            else
                EXPECT_GT(d, 0.5);
        }
    const OracleProvider noisy(s.poses, 0.01, 3);
    const auto d1 = noisy.describe(s.patches[0]);
    const auto d2 = noisy.describe(s.patches[0]);
    EXPECT_EQ(d1.values, d2.values);
}

TEST(Providers, FileEmbeddingLoadAndErrors)
{
    const std::string good = write_temp("coplanar_emb_good.txt", "3 2\n0 0 1 2 3\n\n1 4 0.5 0.25 -1\n");
    const auto provider = FileEmbeddingProvider::load(good);
    EXPECT_EQ(provider.table().size(), 2u);
    PlanePatch p;
    p.frame_id = 1;
    p.id = 4;
    const DescriptorVector d = provider.describe(p);
    EXPECT_EQ(d.values, (Eigen::Vector3d(0.5, 0.25, -1.0)));
    p.id = 5;
    EXPECT_THROW(provider.describe(p), DataError);

    const std::string bad = write_temp("coplanar_emb_bad.txt", "3 2\n0 0 1 2 3\n1 4 0.5 x -1\n");
    try {
        FileEmbeddingProvider::load(bad);
        FAIL() << "expected a parse error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find(bad + ":3"), std::string::npos) << e.what();
    }
    const std::string shortf = write_temp("coplanar_emb_short.txt", "2 3\n0 0 1 2\n");
    EXPECT_THROW(FileEmbeddingProvider::load(shortf), DataError);
    EXPECT_THROW(FileEmbeddingProvider::load("/nonexistent/emb.txt"), DataError);
}
