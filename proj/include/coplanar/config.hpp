#pragma once

/**
 * @file config.hpp
 * @brief Flat `section.key = value` run configuration with a canonical text form.
 */

#include "coplanar/error.hpp"
#include "coplanar/patch_extraction.hpp"
#include "coplanar/pipeline.hpp"
#include "coplanar/synth.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace coplanar {

enum class DescriptorKind { Histogram, File, Oracle };

/// Everything a CLI run needs. Dataset paths are empty when unused.
struct RunConfig
{
    // dataset
    std::string associations;
    std::string groundtruth;
    std::string keypoints;
    std::string embeddings;
    double depth_scale = 5000.0;
    Intrinsics intrinsics{525.0, 525.0, 319.5, 239.5};

    ExtractionParams extraction;
    PipelineParams pipeline;

    DescriptorKind descriptor = DescriptorKind::Histogram;
    /// Pairs with descriptor distance below this are proposed.
    double pair_threshold = 0.5;
    int histogram_bins = 4;
    double oracle_noise = 0.0;

    SceneSpec scene;
    int synth_keypoints_per_pair = 0;
    double synth_keypoint_outliers = 0.0;

    /// Correct pairs per sweep run and the incorrect-pair ratios.
    std::size_t sweep_correct = 200;
    std::vector<double> sweep_ratios = {0.0, 0.2, 0.4, 0.6, 0.8};

    /// Benchmark pair count and the tile sizes of its scenes (one scene per tile size).
    std::size_t cop_count = 600;
    std::vector<double> cop_tile_sizes = {1.0, 0.35, 0.15};

    std::size_t triplet_count = 0;
    /// Seed of sampling stages (pairs, triplets, benchmark sets).
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    void validate() const
    {
        if (!(depth_scale > 0.0))
            throw UsageError("data.depth_scale must be positive");
        if (!(intrinsics.fx > 0.0 && intrinsics.fy > 0.0))
            throw UsageError("focal lengths must be positive");
        extraction.validate();
        pipeline.validate();
        if (pipeline.ransac.iterations < 1)
            throw UsageError("ransac.iterations must be positive");
        if (!(pipeline.ransac.inlier_threshold_m > 0.0))
            throw UsageError("ransac.inlier_threshold_m must be positive");
        if (!(pipeline.ransac.consensus_fraction > 0.0 && pipeline.ransac.consensus_fraction <= 1.0))
            throw UsageError("ransac.consensus_fraction must be in (0, 1]");
        if (!(pair_threshold >= 0.0))
            throw UsageError("descriptor.threshold must be nonnegative");
        if (histogram_bins < 1 || histogram_bins > 256)
            throw UsageError("descriptor.histogram_bins must be in [1, 256]");
        if (!(oracle_noise >= 0.0))
            throw UsageError("descriptor.oracle_noise must be nonnegative");
        if (scene.frames < 1)
            throw UsageError("synth.frames must be positive");
        if (synth_keypoints_per_pair < 0 || !(synth_keypoint_outliers >= 0.0 && synth_keypoint_outliers <= 1.0))
            throw UsageError("synthetic keypoint settings out of range");
        for (const double r : sweep_ratios)
            if (!(r >= 0.0 && r < 1.0))
                throw UsageError("sweep.ratios must lie in [0, 1)");
        if (cop_count == 0 || cop_count % 12 != 0)
            throw UsageError("cop.count must be a positive multiple of 12");
        for (const double t : cop_tile_sizes)
            if (!(t > 0.0))
                throw UsageError("cop.tile_sizes must be positive");
    }
};

namespace detail {

inline std::string format_value(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

template <class T>
    requires(std::is_integral_v<T> && !std::is_same_v<T, bool>)
std::string format_value(T v)
{
    return std::to_string(v);
}

inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }

inline std::string format_value(const std::vector<double>& v)
{
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k)
        out += (k ? "," : "") + format_value(v[k]);
    return out;
}

template <class T>
T parse_number(const std::string& text)
{
    T v{};
    const char* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, v);
    if (text.empty() || r.ec != std::errc() || r.ptr != end)
        throw UsageError("cannot parse '" + text + "'");
    return v;
}

inline void parse_value(const std::string& text, double& out)
{
    out = parse_number<double>(text);
    if (std::isnan(out))
        throw UsageError("NaN is not allowed");
}

template <class T>
    requires(std::is_integral_v<T> && !std::is_same_v<T, bool>)
void parse_value(const std::string& text, T& out)
{
    out = parse_number<T>(text);
}

inline void parse_value(const std::string& text, bool& out)
{
    if (text == "true" || text == "1")
        out = true;
    else if (text == "false" || text == "0")
        out = false;
    else
        throw UsageError("expected true or false, got '" + text + "'");
}

inline void parse_value(const std::string& text, std::string& out) { out = text; }

inline void parse_value(const std::string& text, std::vector<double>& out)
{
    out.clear();
    if (text.empty())
        return;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(' ');
        const auto b = item.find_last_not_of(' ');
        double v = 0.0;
        parse_value(a == std::string::npos ? std::string() : item.substr(a, b - a + 1), v);
        out.push_back(v);
    }
}

struct Binding
{
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

/// Binds a key to the member returned by `access` (a generic lambda taking RunConfig&).
template <class Access>
Binding bind(Access access)
{
    return {[access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); },
            [access](RunConfig& c, const std::string& text) {
                auto& field = access(c);
                std::remove_reference_t<decltype(field)> v = field;
                parse_value(text, v);
                field = v;
            }};
}

/// Binds a key to an enum member, spelled by `names` in the text form.
template <class E, class Access>
Binding bind_enum(Access access, std::vector<std::pair<E, std::string>> names)
{
    return {[access, names](const RunConfig& c) {
                const E v = access(const_cast<RunConfig&>(c));
                for (const auto& [e, n] : names)
                    if (v == e)
                        return n;
                return std::string("?");
            },
            [access, names](RunConfig& c, const std::string& text) {
                std::string allowed;
                for (const auto& [e, n] : names) {
                    if (n == text) {
                        access(c) = e;
                        return;
                    }
                    allowed += (allowed.empty() ? "" : ", ") + n;
                }
                throw UsageError("expected one of " + allowed + ", got '" + text + "'");
            }};
}

inline const std::map<std::string, Binding>& bindings()
{
    // clang-format off
    static const std::map<std::string, Binding> table = {
        {"data.associations", bind([](RunConfig& c) -> auto& { return c.associations; })},
        {"data.groundtruth", bind([](RunConfig& c) -> auto& { return c.groundtruth; })},
        {"data.keypoints", bind([](RunConfig& c) -> auto& { return c.keypoints; })},
        {"data.embeddings", bind([](RunConfig& c) -> auto& { return c.embeddings; })},
        {"data.depth_scale", bind([](RunConfig& c) -> auto& { return c.depth_scale; })},
        {"data.fx", bind([](RunConfig& c) -> auto& { return c.intrinsics.fx; })},
        {"data.fy", bind([](RunConfig& c) -> auto& { return c.intrinsics.fy; })},
        {"data.cx", bind([](RunConfig& c) -> auto& { return c.intrinsics.cx; })},
        {"data.cy", bind([](RunConfig& c) -> auto& { return c.intrinsics.cy; })},

        {"extract.normal_window_px", bind([](RunConfig& c) -> auto& { return c.extraction.normal_window_px; })},
        {"extract.merge_normal_angle_deg", bind([](RunConfig& c) -> auto& { return c.extraction.merge_normal_angle_deg; })},
        {"extract.merge_plane_rms_m", bind([](RunConfig& c) -> auto& { return c.extraction.merge_plane_rms_m; })},
        {"extract.min_valid_pixels", bind([](RunConfig& c) -> auto& { return c.extraction.min_valid_pixels; })},
        {"extract.cell_size_px", bind([](RunConfig& c) -> auto& { return c.extraction.cell_size_px; })},
        {"extract.samples_per_patch", bind([](RunConfig& c) -> auto& { return c.extraction.samples_per_patch; })},
        {"extract.normal_depth_jump", bind([](RunConfig& c) -> auto& { return c.extraction.normal_depth_jump; })},

        {"descriptor.provider", bind_enum<DescriptorKind>([](RunConfig& c) -> auto& { return c.descriptor; },
                                                          {{DescriptorKind::Histogram, "histogram"},
                                                           {DescriptorKind::File, "file"},
                                                           {DescriptorKind::Oracle, "oracle"}})},
        {"descriptor.threshold", bind([](RunConfig& c) -> auto& { return c.pair_threshold; })},
        {"descriptor.histogram_bins", bind([](RunConfig& c) -> auto& { return c.histogram_bins; })},
        {"descriptor.oracle_noise", bind([](RunConfig& c) -> auto& { return c.oracle_noise; })},

        {"pipeline.fragment_size", bind([](RunConfig& c) -> auto& { return c.pipeline.fragment_size; })},
        {"pipeline.overlap", bind([](RunConfig& c) -> auto& { return c.pipeline.overlap; })},
        {"pipeline.dedup_angle_deg", bind([](RunConfig& c) -> auto& { return c.pipeline.dedup_angle_deg; })},
        {"pipeline.dedup_offset_m", bind([](RunConfig& c) -> auto& { return c.pipeline.dedup_offset_m; })},
        {"pipeline.link_overlap", bind([](RunConfig& c) -> auto& { return c.pipeline.link_overlap; })},
        {"pipeline.threads", bind([](RunConfig& c) -> auto& { return c.pipeline.threads; })},
        {"pipeline.mode", bind_enum<RegistrationMode>([](RunConfig& c) -> auto& { return c.pipeline.mode; },
                                                      {{RegistrationMode::Full, "full"},
                                                       {RegistrationMode::CoplanarityOnly, "coplanarity_only"},
                                                       {RegistrationMode::KeypointsOnly, "keypoints_only"}})},

        {"solver.mu_init", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.mu_init; })},
        {"solver.mu_floor", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.mu_floor; })},
        {"solver.mu_decay", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.mu_decay; })},
        {"solver.rel_tol", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.rel_tol; })},
        {"solver.max_outer", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.max_outer; })},
        {"solver.max_inner", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.max_inner; })},
        {"solver.lm_iterations", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.lm_iterations; })},
        {"solver.initial_selection_step", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.initial_selection_step; })},
        {"solver.samples_per_patch", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.samples_per_patch; })},
        {"solver.kp_squared", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.kp_squared; })},
        {"solver.frame_reg_lambda", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.frame_reg_lambda; })},
        {"solver.gamma_t", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.gamma_t; })},
        {"solver.mu_axis_init", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.mu_axis_init; })},
        {"solver.frame_reg_samples", bind([](RunConfig& c) -> auto& { return c.pipeline.solver.frame_reg_samples; })},

        {"ransac.iterations", bind([](RunConfig& c) -> auto& { return c.pipeline.ransac.iterations; })},
        {"ransac.inlier_threshold_m", bind([](RunConfig& c) -> auto& { return c.pipeline.ransac.inlier_threshold_m; })},
        {"ransac.consensus_fraction", bind([](RunConfig& c) -> auto& { return c.pipeline.ransac.consensus_fraction; })},
        {"ransac.seed", bind([](RunConfig& c) -> auto& { return c.pipeline.ransac.rng_seed; })},

        {"synth.layout", bind([](RunConfig& c) -> auto& { return c.scene.layout; })},
        {"synth.trajectory", bind([](RunConfig& c) -> auto& { return c.scene.trajectory; })},
        {"synth.frames", bind([](RunConfig& c) -> auto& { return c.scene.frames; })},
        {"synth.step", bind([](RunConfig& c) -> auto& { return c.scene.step; })},
        {"synth.rotation_step_deg", bind([](RunConfig& c) -> auto& { return c.scene.rotation_step_deg; })},
        {"synth.depth_noise", bind([](RunConfig& c) -> auto& { return c.scene.depth_noise; })},
        {"synth.tile_size", bind([](RunConfig& c) -> auto& { return c.scene.tile_size; })},
        {"synth.samples_per_patch", bind([](RunConfig& c) -> auto& { return c.scene.samples_per_patch; })},
        {"synth.width", bind([](RunConfig& c) -> auto& { return c.scene.width; })},
        {"synth.height", bind([](RunConfig& c) -> auto& { return c.scene.height; })},
        {"synth.focal", bind([](RunConfig& c) -> auto& { return c.scene.focal; })},
        {"synth.max_range", bind([](RunConfig& c) -> auto& { return c.scene.max_range; })},
        {"synth.seed", bind([](RunConfig& c) -> auto& { return c.scene.seed; })},
        {"synth.keypoints_per_pair", bind([](RunConfig& c) -> auto& { return c.synth_keypoints_per_pair; })},
        {"synth.keypoint_outliers", bind([](RunConfig& c) -> auto& { return c.synth_keypoint_outliers; })},

        {"sweep.correct", bind([](RunConfig& c) -> auto& { return c.sweep_correct; })},
        {"sweep.ratios", bind([](RunConfig& c) -> auto& { return c.sweep_ratios; })},
        {"cop.count", bind([](RunConfig& c) -> auto& { return c.cop_count; })},
        {"cop.tile_sizes", bind([](RunConfig& c) -> auto& { return c.cop_tile_sizes; })},

        {"run.triplets", bind([](RunConfig& c) -> auto& { return c.triplet_count; })},
        {"run.seed", bind([](RunConfig& c) -> auto& { return c.seed; })},
        {"run.output_dir", bind([](RunConfig& c) -> auto& { return c.output_dir; })},
    };
    // clang-format on
    return table;
}

inline std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Applies one `key = value` setting; unknown keys and malformed values throw UsageError.
inline void apply_setting(RunConfig& config, const std::string& key, const std::string& value)
{
    const auto& table = detail::bindings();
    const auto it = table.find(key);
    if (it == table.end())
        throw UsageError("unknown config key: " + key);
    try {
        it->second.set(config, value);
    } catch (const UsageError& e) {
        throw UsageError("config key " + key + ": " + e.what());
    }
}

/// Applies a `key=value` override as given on the command line.
inline void apply_override(RunConfig& config, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw UsageError("override must look like key=value: " + assignment);
    apply_setting(config, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/**
 * Parses config text: one `key = value` per line, '#' starts a comment line.
 * Keys not present keep their defaults. `origin` names the source in errors.
 */
inline RunConfig parse_config(const std::string& text, const std::string& origin = "config")
{
    RunConfig config;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = detail::trim(t.substr(0, eq));
        if (const auto dup = seen.find(key); dup != seen.end())
            throw UsageError(origin + ":" + std::to_string(line_no) + ": duplicate key " + key + " (first on line " +
                             std::to_string(dup->second) + ")");
        seen[key] = line_no;
        try {
            apply_setting(config, key, detail::trim(t.substr(eq + 1)));
        } catch (const UsageError& e) {
            throw UsageError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return config;
}

inline RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

/// Canonical form: every key, sorted, `key = value`, shortest round-trip numbers.
inline std::string serialize_config(const RunConfig& config)
{
    std::string out;
    for (const auto& [key, b] : detail::bindings())
        out += key + " = " + b.get(config) + "\n";
    return out;
}

}  // namespace coplanar
