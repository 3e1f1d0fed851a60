#include "coplanar/config.hpp"
#include "coplanar/io.hpp"
#include "coplanar/metrics.hpp"
#include "coplanar/synth.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace coplanar;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("coplanar_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, DefaultCanonicalFormRoundTrips)
{
    const std::string canon = serialize_config(RunConfig{});
    EXPECT_EQ(serialize_config(parse_config(canon)), canon);
    // keys are sorted and unique
    std::istringstream in(canon);
    std::string line, prev;
    while (std::getline(in, line)) {
        const std::string key = line.substr(0, line.find(" = "));
        EXPECT_LT(prev, key);
        prev = key;
    }
}

TEST(Config, CustomValuesRoundTripExactly)
{
    const std::string text = "# comment\n"
                             "solver.mu_init = 0.1\n"
                             "  synth.layout = corridor  \n"
                             "sweep.ratios = 0, 0.25,0.8\n"
                             "pipeline.mode = coplanarity_only\n"
                             "descriptor.provider = file\n"
                             "descriptor.threshold = inf\n"
                             "run.seed = 18446744073709551615\n"
                             "data.fx = 517.3\n";
    const RunConfig c = parse_config(text);
    EXPECT_EQ(c.pipeline.solver.mu_init, 0.1);
    EXPECT_EQ(c.scene.layout, "corridor");
    EXPECT_EQ(c.sweep_ratios, (std::vector<double>{0.0, 0.25, 0.8}));
    EXPECT_EQ(c.pipeline.mode, RegistrationMode::CoplanarityOnly);
    EXPECT_EQ(c.descriptor, DescriptorKind::File);
    EXPECT_TRUE(std::isinf(c.pair_threshold));
    EXPECT_EQ(c.seed, 18446744073709551615ULL);
    EXPECT_EQ(c.intrinsics.fx, 517.3);
    const std::string canon = serialize_config(c);
    EXPECT_EQ(serialize_config(parse_config(canon)), canon);
    EXPECT_NE(canon.find("sweep.ratios = 0,0.25,0.8\n"), std::string::npos);
}

TEST(Config, ErrorsAreUsageErrorsWithLocation)
{
    auto message = [](const std::string& text) {
        try {
            parse_config(text, "cfg");
        } catch (const UsageError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message("solver.nope = 1\n").find("cfg:1: unknown config key: solver.nope"), std::string::npos);
    EXPECT_NE(message("solver.mu_init = 1\nsolver.mu_init = 2\n").find("cfg:2: duplicate key"), std::string::npos);
    EXPECT_NE(message("\nsolver.max_outer = ten\n").find("cfg:2:"), std::string::npos);
    EXPECT_NE(message("pipeline.mode = fast\n").find("expected one of"), std::string::npos);
    EXPECT_NE(message("just text\n").find("expected 'key = value'"), std::string::npos);
    EXPECT_NE(message("solver.mu_init = nan\n").find("NaN"), std::string::npos);

    RunConfig c;
    apply_override(c, "pipeline.overlap=30");
    EXPECT_THROW(c.validate(), UsageError);
    EXPECT_THROW(apply_override(c, "pipeline.overlap"), UsageError);
    EXPECT_THROW(load_config("/nonexistent/run.cfg"), UsageError);
}

TEST(Io, DepthPngRoundTripWithinQuantization)
{
    const fs::path dir = scratch("depth");
    Image<float> depth(13, 7, 0.0f);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(0.3f, 8.0f);
    for (auto& d : depth.data())
        d = u(rng);
    depth(0, 0) = 0.0f;
    const std::string path = (dir / "sub" / "d.png").string();
    write_depth_png(path, depth, 5000.0);
    const Image<float> back = read_depth_png(path, 5000.0);
    ASSERT_EQ(back.width(), 13);
    ASSERT_EQ(back.height(), 7);
    for (std::size_t k = 0; k < depth.size(); ++k)
        EXPECT_LE(std::abs(back[k] - depth[k]), 0.5f / 5000.0f + 1e-6f);
    EXPECT_EQ(back(0, 0), 0.0f);

    Image<Rgb8> rgb(5, 4, Rgb8{10, 20, 30});
    rgb(4, 3) = Rgb8{255, 0, 7};
    write_color_png((dir / "c.png").string(), rgb);
    const Image<Rgb8> rgb_back = read_color((dir / "c.png").string());
    EXPECT_EQ(rgb_back.data(), rgb.data());
    // an 8-bit image is not a depth image
    EXPECT_THROW(read_depth_png((dir / "c.png").string(), 5000.0), DataError);
    EXPECT_THROW(read_depth_png((dir / "missing.png").string(), 5000.0), DataError);
}

TEST(Io, TrajectoryRoundTripAndAssociation)
{
    const fs::path dir = scratch("traj");
    std::vector<RigidTransform> poses;
    std::vector<std::string> stamps;
    for (int k = 0; k < 6; ++k) {
        poses.push_back(RigidTransform::from_axis_angle(Vec3(0.1 * k, -0.3, 0.2 * k - 2.5), Vec3(k, -0.5 * k, 1.0 / 3.0)));
        stamps.push_back(std::to_string(1305031102 + k) + ".175304");
    }
    write_tum_trajectory((dir / "t.txt").string(), stamps, poses);
    const auto back = read_tum_trajectory((dir / "t.txt").string());
    ASSERT_EQ(back.size(), 6u);
    for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_LT((back[k].pose.translation - poses[k].translation).norm(), 1e-15);
        EXPECT_LT((back[k].pose.rotation - poses[k].rotation).norm(), 1e-14);
    }
    // dropping one estimate and jittering timestamps still associates the rest
    std::vector<StampedPose> est(back.begin() + 1, back.end());
    for (auto& e : est)
        e.timestamp += 0.01;
    const auto [a, b] = associate_trajectories(est, back);
    ASSERT_EQ(a.size(), 5u);
    EXPECT_LT(ate_rmse(a, b, false), 1e-12);

    open_output(dir / "bad.txt") << "1 2 3\n";
    EXPECT_THROW(read_tum_trajectory((dir / "bad.txt").string()), DataError);
    std::vector<StampedPose> far = {{1e9, RigidTransform::identity()}};
    EXPECT_THROW(associate_trajectories(far, back), DataError);
}

TEST(Io, DepthSamplingIsExactOnPlanes)
{
    // plane z = 2 + 0.01 x in camera space seen by a unit camera: 1/z is affine in pixels
    const Intrinsics k{100.0, 100.0, 8.0, 6.0};
    const Vec3 n = Vec3(0.01, 0.0, 1.0).normalized();
    Image<float> depth(16, 12, 0.0f);
    auto exact = [&](double px, double py) {
        const Vec3 ray((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
        return 2.0 * n.z() / n.dot(ray);
    };
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 16; ++x)
            depth(x, y) = static_cast<float>(exact(x, y));
    EXPECT_NEAR(Dataset::sample_depth(depth, 3.3, 7.8), exact(3.3, 7.8), 1e-5);
    depth(4, 8) = 0.0f;
    EXPECT_EQ(Dataset::sample_depth(depth, 3.3, 7.8), depth(3, 8));
    EXPECT_EQ(Dataset::sample_depth(depth, -3.0, 1.0), 0.0);
}

TEST(Io, AssociationsAndDataset)
{
    const fs::path dir = scratch("assoc");
    write_associations((dir / "a.txt").string(), {{"0.000000", "depth/0.png", "0.000000", "rgb/0.png"}});
    open_output(dir / "b.txt") << "# comment\n0.1 d.png 0.1\n";
    const auto rows = read_associations((dir / "a.txt").string());
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].depth_path, "depth/0.png");
    EXPECT_THROW(read_associations((dir / "b.txt").string()), DataError);
    const Dataset data((dir / "a.txt").string(), Intrinsics{1, 1, 0, 0}, 5000.0);
    try {
        data.load(0);
        FAIL() << "expected a missing-file error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find((dir / "depth/0.png").string()), std::string::npos);
    }
}

TEST(Io, PatchesAndPairsRoundTrip)
{
    SceneSpec spec;
    spec.layout = "three_planes";
    spec.frames = 3;
    spec.render = true;
    const SyntheticScene scene = generate_scene(spec);
    std::vector<PlanePatch> patches;
    for (const auto& f : scene.frames) {
        auto ps = segment_planar_patches(f, ExtractionParams{});
        patches.insert(patches.end(), ps.begin(), ps.end());
    }
    ASSERT_EQ(patches.size(), 9u);
    const fs::path dir = scratch("patches");
    write_patches(dir, patches, 3, spec.width, spec.height);
    const auto back = read_patches(dir);
    ASSERT_EQ(back.size(), patches.size());
    for (std::size_t k = 0; k < patches.size(); ++k) {
        EXPECT_EQ(back[k].frame_id, patches[k].frame_id);
        EXPECT_EQ(back[k].id, patches[k].id);
        EXPECT_EQ(back[k].samples, patches[k].samples);
        EXPECT_EQ(back[k].pixels, patches[k].pixels);
        EXPECT_LT((back[k].plane.normal - patches[k].plane.normal).norm(), 1e-15);
        EXPECT_EQ(back[k].plane.point, patches[k].plane.point);
        EXPECT_EQ(back[k].area, patches[k].area);
        EXPECT_EQ(back[k].bbox, patches[k].bbox);
    }

    std::vector<CoplanarPair> pairs = {{0, 4, 0.125, 0.75, 1.0}, {2, 8, 1e-17, 1.0, 0.25}};
    write_pairs(dir / "pairs.csv", patches, pairs);
    const auto pairs_back = read_pairs(dir / "pairs.csv", back);
    ASSERT_EQ(pairs_back.size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_EQ(pairs_back[k].p, pairs[k].p);
        EXPECT_EQ(pairs_back[k].q, pairs[k].q);
        EXPECT_EQ(pairs_back[k].feature_distance, pairs[k].feature_distance);
        EXPECT_EQ(pairs_back[k].weight, pairs[k].weight);
        EXPECT_EQ(pairs_back[k].selection, pairs[k].selection);
    }
    open_output(dir / "bad_pairs.csv") << kPairHeader << "\n0,0,7,7,0.1,1,1\n";
    EXPECT_THROW(read_pairs(dir / "bad_pairs.csv", back), DataError);
    open_output(dir / "inf_pairs.csv") << kPairHeader << "\n0,0,1,0,inf,1,1\n";
    EXPECT_THROW(read_pairs(dir / "inf_pairs.csv", back), DataError);
}

TEST(Io, TraceTripletAndEmbeddingWriters)
{
    const fs::path dir = scratch("writers");
    TraceRow row;
    row.outer = 2;
    row.inner = 1;
    row.mu = 0.25;
    row.terms.data_cop = 1.5;
    row.terms.reg_cop = 0.5;
    row.selected_cop = 7;
    write_trace(dir / "trace.csv", {row});
    EXPECT_EQ(slurp(dir / "trace.csv"), kTraceHeader + "\n2,1,0.25,2,1.5,0.5,0,0,7,0\n");

    std::vector<PlanePatch> patches(3);
    for (int k = 0; k < 3; ++k) {
        patches[static_cast<std::size_t>(k)].frame_id = k;
        patches[static_cast<std::size_t>(k)].id = 10 + k;
    }
    write_triplets(dir / "t.csv", patches, {{0, 1, 2}});
    EXPECT_EQ(slurp(dir / "t.csv"), kTripletHeader + "\n0,10,1,11,2,12\n");

    std::map<std::pair<int, int>, DescriptorVector> table;
    table[{0, 1}] = DescriptorVector(Eigen::Vector2d(0.1, -3.0));
    table[{2, 0}] = DescriptorVector(Eigen::Vector2d(1.0 / 3.0, 4.0));
    write_embeddings(dir / "e.txt", table);
    const auto loaded = FileEmbeddingProvider::load((dir / "e.txt").string());
    ASSERT_EQ(loaded.table().size(), 2u);
    EXPECT_EQ(loaded.table().at({2, 0}).values, table.at({2, 0}).values);
}
