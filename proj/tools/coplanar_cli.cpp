// Command-line front end: synthetic data generation, patch extraction, pair
// proposal, registration, evaluation and robustness sweeps.

#include "coplanar/config.hpp"
#include "coplanar/io.hpp"
#include "coplanar/metrics.hpp"
#include "coplanar/patch_extraction.hpp"
#include "coplanar/patch_inputs.hpp"
#include "coplanar/pipeline.hpp"
#include "coplanar/synth.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

using namespace coplanar;

namespace {

struct CommonArgs
{
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args)
{
    cmd->add_option("-c,--config", args.config, "Config file (section.key = value lines)");
    cmd->add_option("-s,--set", args.overrides, "Override a config key, key=value (repeatable)");
    cmd->add_option("-o,--out", args.out, "Output directory (run.output_dir)");
    cmd->add_option("--seed", args.seed, "Sampling seed (run.seed)");
}

RunConfig resolve_config(const CommonArgs& args)
{
    RunConfig c = args.config.empty() ? RunConfig{} : load_config(args.config);
    for (const auto& o : args.overrides)
        apply_override(c, o);
    if (!args.out.empty())
        c.output_dir = args.out;
    if (args.seed)
        c.seed = *args.seed;
    c.validate();
    return c;
}

fs::path out_dir(const RunConfig& c)
{
    fs::create_directories(c.output_dir);
    return fs::path(c.output_dir);
}

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string frame_name(int k)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d", k);
    return buf;
}

Dataset open_dataset(const RunConfig& c)
{
    require_path(c.associations, "association file");
    return Dataset(c.associations, c.intrinsics, c.depth_scale);
}

/// Ground-truth pose of every dataset frame, matched by depth timestamp.
std::vector<RigidTransform> dataset_ground_truth(const RunConfig& c, const Dataset& data)
{
    require_path(c.groundtruth, "ground-truth file");
    const auto gt = read_tum_trajectory(c.groundtruth);
    std::vector<RigidTransform> out;
    for (const auto& a : data.rows()) {
        const double ts = std::stod(a.ts_depth);
        const StampedPose* best = nullptr;
        for (const auto& g : gt)
            if (std::abs(g.timestamp - ts) <= 0.02 && (!best || std::abs(g.timestamp - ts) < std::abs(best->timestamp - ts)))
                best = &g;
        if (!best)
            throw DataError("no ground-truth pose near timestamp " + a.ts_depth + " in " + c.groundtruth);
        out.push_back(best->pose);
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& config)
{
    const fs::path out = out_dir(config);
    SceneSpec spec = config.scene;
    spec.render = true;
    spec.depth_scale = config.depth_scale;
    const SyntheticScene scene = generate_scene(spec);

    std::vector<Association> rows;
    std::vector<std::string> stamps;
    for (std::size_t k = 0; k < scene.frames.size(); ++k) {
        const int idx = static_cast<int>(k);
        const std::string ts = fixed(static_cast<double>(k) / 30.0, 6);
        const std::string depth = "depth/" + frame_name(idx) + ".png";
        const std::string rgb = "rgb/" + frame_name(idx) + ".png";
        write_depth_png((out / depth).string(), scene.frames[k].depth, config.depth_scale);
        write_color_png((out / rgb).string(), scene.frames[k].color);
        rows.push_back({ts, depth, ts, rgb});
        stamps.push_back(ts);
    }
    write_associations((out / "associations.txt").string(), rows);
    write_tum_trajectory((out / "groundtruth.txt").string(), stamps, scene.trajectory);

    RunConfig derived = config;
    derived.associations = (out / "associations.txt").string();
    derived.groundtruth = (out / "groundtruth.txt").string();
    derived.intrinsics = scene.intrinsics;
    if (config.synth_keypoints_per_pair > 0) {
        const auto kps = make_keypoint_matches(scene, config.synth_keypoints_per_pair, config.synth_keypoint_outliers,
                                               config.seed);
        auto f = open_output(out / "keypoints.txt");
        f << "# frame_i u_px u_py frame_j v_px v_py\n";
        for (const auto& k : kps)
            f << k.match.frame_i << ' ' << num(k.u_px.x()) << ' ' << num(k.u_px.y()) << ' ' << k.match.frame_j << ' '
              << num(k.v_px.x()) << ' ' << num(k.v_px.y()) << '\n';
        derived.keypoints = (out / "keypoints.txt").string();
    }
    open_output(out / "dataset.cfg") << serialize_config(derived);
    for (const auto& w : scene.warnings)
        std::cerr << "warning: " << w << '\n';
    std::cout << "wrote " << scene.frames.size() << " frames to " << out.string() << '\n';
    return 0;
}

int cmd_extract(const RunConfig& config, bool export_inputs)
{
    const fs::path out = out_dir(config);
    const Dataset data = open_dataset(config);
    std::vector<PlanePatch> all;
    int width = 0, height = 0;
    for (int k = 0; k < data.size(); ++k) {
        Frame frame = data.load(k, export_inputs);
        width = frame.depth.width();
        height = frame.depth.height();
        auto patches = segment_planar_patches(frame, config.extraction);
        if (export_inputs && !patches.empty()) {
            frame.normals = estimate_normals(frame, config.extraction);
            for (const auto& p : patches)
                export_patch_inputs(out / "inputs" / (frame_name(k) + "_" + std::to_string(p.id)), p,
                                    build_patch_inputs(frame, p), config.depth_scale);
        }
        all.insert(all.end(), patches.begin(), patches.end());
    }
    write_patches(out, all, data.size(), width, height);
    std::cout << "extracted " << all.size() << " patches from " << data.size() << " frames\n";
    return 0;
}

int cmd_propose(const RunConfig& config, const std::string& embeddings_out)
{
    const fs::path out = out_dir(config);
    const auto patches = read_patches(out);
    std::unique_ptr<DescriptorProvider> provider;
    std::optional<Dataset> data;
    switch (config.descriptor) {
    case DescriptorKind::Histogram: {
        data.emplace(open_dataset(config));
        std::vector<Image<Rgb8>> colors;
        for (int k = 0; k < data->size(); ++k)
            colors.push_back(read_color(data->resolve(data->rows()[static_cast<std::size_t>(k)].rgb_path).string()));
        provider = std::make_unique<ColorHistogramProvider>(std::move(colors), config.histogram_bins);
        break;
    }
    case DescriptorKind::File:
        require_path(config.embeddings, "embedding file");
        provider = std::make_unique<FileEmbeddingProvider>(FileEmbeddingProvider::load(config.embeddings));
        break;
    case DescriptorKind::Oracle:
        data.emplace(open_dataset(config));
        provider = std::make_unique<OracleProvider>(dataset_ground_truth(config, *data), config.oracle_noise, config.seed);
        break;
    }
    const auto pairs = propose_pairs(patches, *provider, config.pair_threshold);
    write_pairs(out / "pairs.csv", patches, pairs);
    if (!embeddings_out.empty()) {
        std::map<std::pair<int, int>, DescriptorVector> table;
        for (const auto& p : patches)
            table[{p.frame_id, p.id}] = provider->describe(p);
        write_embeddings(embeddings_out, table);
    }
    if (config.triplet_count > 0) {
        if (!data)
            data.emplace(open_dataset(config));
        const auto gt = dataset_ground_truth(config, *data);
        write_triplets(out / "triplets.csv", patches, sample_triplets(patches, gt, config.triplet_count, config.seed));
    }
    std::cout << "proposed " << pairs.size() << " pairs from " << patches.size() << " patches\n";
    return 0;
}

int cmd_register(RunConfig config, bool coplanarity_only, bool keypoints_only)
{
    if (coplanarity_only && keypoints_only)
        throw UsageError("--coplanarity-only and --keypoints-only are mutually exclusive");
    if (coplanarity_only)
        config.pipeline.mode = RegistrationMode::CoplanarityOnly;
    if (keypoints_only)
        config.pipeline.mode = RegistrationMode::KeypointsOnly;
    const fs::path out = out_dir(config);
    const Dataset data = open_dataset(config);

    SequenceInput in;
    in.n_frames = data.size();
    in.patches = read_patches(out);
    if (config.pipeline.mode != RegistrationMode::KeypointsOnly)
        in.pairs = read_pairs(out / "pairs.csv", in.patches);
    if (!config.keypoints.empty()) {
        require_path(config.keypoints, "keypoint file");
        in.keypoints = load_keypoint_matches(config.keypoints, data.depth_lookup(), config.intrinsics);
    }
    if (in.pairs.empty() && in.keypoints.empty())
        throw DataError("nothing to register: no coplanar pairs and no keypoint matches");

    const SequenceResult r = register_sequence(in, config.pipeline);
    write_tum_trajectory((out / "trajectory.txt").string(), data.timestamps(), r.poses);

    auto dump = open_output(out / "selected_pairs.csv");
    dump << "fragment," << kPairHeader << '\n';
    for (std::size_t f = 0; f < r.intra.size(); ++f) {
        const auto& intra = r.intra[f];
        char name[64];
        std::snprintf(name, sizeof(name), "trace_fragment_%03zu.csv", f);
        write_trace(out / name, intra.solve.trace);
        for (std::size_t k = 0; k < intra.pair_ids.size(); ++k) {
            const CoplanarPair& pr = in.pairs[intra.pair_ids[k]];
            const auto& p = in.patches[pr.p];
            const auto& q = in.patches[pr.q];
            dump << f << ',' << p.frame_id << ',' << p.id << ',' << q.frame_id << ',' << q.id << ','
                 << num(pr.feature_distance) << ',' << num(pr.weight) << ',' << num(intra.solve.pair_selections[k])
                 << '\n';
        }
    }
    if (r.fragments.size() > 1)
        write_trace(out / "trace_inter.csv", r.inter.solve.trace);
    std::cout << "registered " << in.n_frames << " frames in " << r.fragments.size() << " fragments\n";
    return 0;
}

std::vector<SyntheticScene> cop_scenes(const RunConfig& config)
{
    std::vector<SyntheticScene> scenes;
    for (std::size_t k = 0; k < config.cop_tile_sizes.size(); ++k) {
        SceneSpec spec = config.scene;
        spec.render = false;
        spec.tile_size = config.cop_tile_sizes[k];
        spec.seed = config.scene.seed + k;
        scenes.push_back(generate_scene(spec));
    }
    return scenes;
}

/// Benchmark scenes share one key space: scene s frame f has frame id s * frames + f.
int cop_frame_key(const RunConfig& config, std::size_t scene, int frame)
{
    return static_cast<int>(scene) * config.scene.frames + frame;
}

void evaluate_pr(const RunConfig& config, const fs::path& out, const std::string& embeddings_out)
{
    const auto scenes = cop_scenes(config);
    const CopBenchmarkSet set = build_cop_set(scenes, config.cop_count, config.seed);

    std::optional<FileEmbeddingProvider> file;
    if (config.descriptor == DescriptorKind::File) {
        require_path(config.embeddings, "embedding file");
        file.emplace(FileEmbeddingProvider::load(config.embeddings));
    } else if (config.descriptor != DescriptorKind::Oracle) {
        throw UsageError("benchmark scenes have no images; use descriptor.provider = oracle or file");
    }
    std::vector<OracleProvider> oracles;
    for (const auto& s : scenes)
        oracles.emplace_back(s.trajectory, config.oracle_noise, config.seed);
    auto describe = [&](std::size_t s, std::size_t patch) {
        PlanePatch p = scenes[s].patches[patch];
        if (!file)
            return oracles[s].describe(p);
        p.frame_id = cop_frame_key(config, s, p.frame_id);
        return file->describe(p);
    };

    if (!embeddings_out.empty()) {
        std::map<std::pair<int, int>, DescriptorVector> table;
        for (std::size_t s = 0; s < scenes.size(); ++s)
            for (std::size_t k = 0; k < scenes[s].patches.size(); ++k)
                table[{cop_frame_key(config, s, scenes[s].patches[k].frame_id), scenes[s].patches[k].id}] =
                    describe(s, k);
        write_embeddings(embeddings_out, table);
    }

    auto summary = open_output(out / "pr_summary.csv");
    summary << "subset,pairs,auc\n";
    for (std::size_t b = 0; b < set.subsets.size(); ++b) {
        std::vector<double> d;
        std::vector<bool> labels;
        for (const auto& c : set.subsets[b]) {
            d.push_back(feature_distance(describe(c.scene, c.p), describe(c.scene, c.q)));
            labels.push_back(c.positive);
        }
        const PrCurve curve = pr_curve(d, labels);
        const std::string name = CopBenchmarkSet::subset_names[b];
        auto csv = open_output(out / ("pr_" + name + ".csv"));
        csv << "threshold,precision,recall\n";
        for (const auto& pt : curve.points)
            csv << num(pt.threshold) << ',' << num(pt.precision) << ',' << num(pt.recall) << '\n';
        summary << name << ',' << set.subsets[b].size() << ',' << num(curve.auc) << '\n';
        std::cout << "AUC " << name << ' ' << fixed(curve.auc, 6) << '\n';
    }
}

void run_sweep(const RunConfig& config, const fs::path& out)
{
    SceneSpec spec = config.scene;
    spec.render = false;
    const SyntheticScene scene = generate_scene(spec);
    const auto rows = robustness_sweep(scene, config.sweep_ratios, config.sweep_correct, config.pipeline, config.seed);
    auto csv = open_output(out / "robustness.csv");
    csv << "ratio,correct,incorrect,ate,outliers_rejected\n";
    for (const auto& r : rows) {
        csv << num(r.ratio) << ',' << r.correct << ',' << r.incorrect << ',' << num(r.ate) << ','
            << num(r.outliers_rejected) << '\n';
        std::cout << "ratio " << fixed(r.ratio, 2) << " ATE " << fixed(r.ate, 6) << '\n';
    }
}

int cmd_evaluate(const RunConfig& config, std::string estimate, std::string groundtruth, bool pr, bool robustness,
                 const std::string& embeddings_out)
{
    const fs::path out = out_dir(config);
    if (groundtruth.empty())
        groundtruth = config.groundtruth;
    const bool ate = !estimate.empty() || (!pr && !robustness);
    if (ate) {
        if (estimate.empty())
            estimate = (out / "trajectory.txt").string();
        require_path(estimate, "estimated trajectory");
        require_path(groundtruth, "ground-truth trajectory");
        const auto [est, gt] = associate_trajectories(read_tum_trajectory(estimate), read_tum_trajectory(groundtruth));
        std::cout << "ATE " << fixed(ate_rmse(est, gt, true), 6) << '\n';
    }
    if (pr)
        evaluate_pr(config, out, embeddings_out);
    if (robustness)
        run_sweep(config, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Coplanarity-constrained RGB-D registration"};
    app.require_subcommand(1);
    CommonArgs common;

    auto* synth = app.add_subcommand("synth", "Render a synthetic RGB-D sequence with ground truth");
    add_common(synth, common);

    auto* extract = app.add_subcommand("extract", "Segment planar patches in every frame");
    add_common(extract, common);
    bool export_inputs = false;
    extract->add_flag("--export-inputs", export_inputs, "Also export the per-patch descriptor input crops");

    auto* propose = app.add_subcommand("propose", "Propose coplanar patch pairs by descriptor distance");
    add_common(propose, common);
    std::string propose_embeddings;
    propose->add_option("--write-embeddings", propose_embeddings, "Write every patch descriptor to this file");

    auto* reg = app.add_subcommand("register", "Register the sequence from patches, pairs and keypoints");
    add_common(reg, common);
    bool coplanarity_only = false, keypoints_only = false;
    reg->add_flag("--coplanarity-only", coplanarity_only, "Coplanar pairs only, with stability regularization");
    reg->add_flag("--keypoints-only", keypoints_only, "Keypoint matches only");

    auto* evaluate = app.add_subcommand("evaluate", "Trajectory error, precision/recall and robustness metrics");
    add_common(evaluate, common);
    std::string estimate, groundtruth, pr_embeddings;
    bool pr = false, robustness = false;
    evaluate->add_option("--estimate", estimate, "Estimated TUM trajectory (default <out>/trajectory.txt)");
    evaluate->add_option("--groundtruth", groundtruth, "Ground-truth TUM trajectory (default data.groundtruth)");
    evaluate->add_flag("--pr", pr, "Precision/recall per size and distance subset");
    evaluate->add_flag("--robustness", robustness, "ATE versus incorrect-pair ratio");
    evaluate->add_option("--write-embeddings", pr_embeddings, "Write the benchmark patch descriptors to this file");

    auto* sweep = app.add_subcommand("sweep", "ATE versus incorrect-pair ratio on a synthetic scene");
    add_common(sweep, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const RunConfig config = resolve_config(common);
        if (synth->parsed())
            return cmd_synth(config);
        if (extract->parsed())
            return cmd_extract(config, export_inputs);
        if (propose->parsed())
            return cmd_propose(config, propose_embeddings);
        if (reg->parsed())
            return cmd_register(config, coplanarity_only, keypoints_only);
        if (evaluate->parsed())
            return cmd_evaluate(config, estimate, groundtruth, pr, robustness, pr_embeddings);
        if (sweep->parsed()) {
            run_sweep(config, out_dir(config));
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const SolverError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
