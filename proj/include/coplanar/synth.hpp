#pragma once

/**
 * @file synth.hpp
 * @brief Synthetic planar scenes with exact ground truth: analytic patches,
 *        rendered depth/color, labeled pair sets and keypoint matches.
 */

#include "coplanar/correspondence.hpp"
#include "coplanar/descriptor.hpp"
#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace coplanar {

/// Bounded rectangle on a plane: center plane.point, extents along two unit axes.
struct PlaneRect
{
    int id = 0;
    Plane plane;
    Vec3 axis_u = Vec3::UnitX();
    Vec3 axis_v = Vec3::UnitY();
    double half_u = 1.0;
    double half_v = 1.0;
    Rgb8 color{128, 128, 128};

    bool contains(const Vec3& x, double eps = 1e-9) const
    {
        const Vec3 d = x - plane.point;
        return std::abs(d.dot(axis_u)) <= half_u + eps && std::abs(d.dot(axis_v)) <= half_v + eps;
    }
};

struct SceneSpec
{
    /// room | corridor | three_planes | single_wall
    std::string layout = "room";
    /// line | circle
    std::string trajectory = "line";
    int frames = 10;
    /// Camera travel per frame, meters.
    double step = 0.05;
    /// Camera yaw per frame, degrees.
    double rotation_step_deg = 1.0;
    double depth_noise = 0.0;
    double tile_size = 0.5;
    int samples_per_patch = 64;
    int width = 160;
    int height = 120;
    double focal = 130.0;
    double max_range = 8.0;
    bool render = false;
    double depth_scale = 5000.0;
    std::uint64_t seed = 0;
};

struct SyntheticScene
{
    SceneSpec spec;
    std::vector<PlaneRect> planes;
    std::vector<RigidTransform> trajectory;
    Intrinsics intrinsics;
    /// Flat patch list; patch.frame_id indexes `trajectory`.
    std::vector<PlanePatch> patches;
    /// Ground-truth plane id of every patch.
    std::vector<int> patch_plane;
    /// Rendered frames (only when spec.render).
    std::vector<Frame> frames;
    std::vector<std::string> warnings;

    bool coplanar(std::size_t a, std::size_t b) const { return patch_plane[a] == patch_plane[b]; }
};

namespace detail {

inline PlaneRect make_rect(int id, const Vec3& center, const Vec3& normal, const Vec3& axis_u, double half_u,
                           double half_v, Rgb8 color)
{
    PlaneRect r;
    r.id = id;
    r.plane = Plane(center, normal);
    r.axis_u = axis_u.normalized();
    r.axis_v = r.plane.normal.cross(r.axis_u).normalized();
    r.half_u = half_u;
    r.half_v = half_v;
    r.color = color;
    return r;
}

/// Axis-aligned box seen from inside: normals point inward. Camera y points down.
inline std::vector<PlaneRect> box_planes(double x0, double x1, double y0, double y1, double z0, double z1,
                                         bool with_back)
{
    const Vec3 c((x0 + x1) / 2, (y0 + y1) / 2, (z0 + z1) / 2);
    const double hx = (x1 - x0) / 2, hy = (y1 - y0) / 2, hz = (z1 - z0) / 2;
    std::vector<PlaneRect> out;
    out.push_back(make_rect(0, {c.x(), y1, c.z()}, -Vec3::UnitY(), Vec3::UnitX(), hx, hz, {150, 110, 70}));
    out.push_back(make_rect(1, {c.x(), y0, c.z()}, Vec3::UnitY(), Vec3::UnitX(), hx, hz, {230, 230, 230}));
    out.push_back(make_rect(2, {x0, c.y(), c.z()}, Vec3::UnitX(), Vec3::UnitZ(), hz, hy, {200, 60, 60}));
    out.push_back(make_rect(3, {x1, c.y(), c.z()}, -Vec3::UnitX(), Vec3::UnitZ(), hz, hy, {60, 200, 60}));
    out.push_back(make_rect(4, {c.x(), c.y(), z1}, -Vec3::UnitZ(), Vec3::UnitX(), hx, hy, {60, 60, 200}));
    if (with_back)
        out.push_back(make_rect(5, {c.x(), c.y(), z0}, Vec3::UnitZ(), Vec3::UnitX(), hx, hy, {200, 200, 60}));
    return out;
}

inline std::vector<PlaneRect> layout_planes(const std::string& layout)
{
    if (layout == "room")
        return box_planes(-2.0, 2.0, -1.2, 1.3, -2.0, 3.0, true);
    if (layout == "corridor")
        return box_planes(-0.9, 0.9, -1.3, 1.3, -1.0, 6.0, true);
    if (layout == "three_planes") {
        std::vector<PlaneRect> out;
        out.push_back(make_rect(0, {0.0, 1.0, 2.0}, -Vec3::UnitY(), Vec3::UnitX(), 2.0, 2.0, {150, 110, 70}));
        out.push_back(make_rect(1, {-1.2, 0.0, 2.0}, Vec3::UnitX(), Vec3::UnitZ(), 2.0, 1.0, {200, 60, 60}));
        out.push_back(make_rect(2, {0.0, 0.0, 3.0}, -Vec3::UnitZ(), Vec3::UnitX(), 1.2, 1.0, {60, 60, 200}));
        return out;
    }
    if (layout == "single_wall")
        return {make_rect(0, {0.0, 0.0, 2.0}, -Vec3::UnitZ(), Vec3::UnitX(), 3.0, 3.0, {180, 180, 180})};
    throw UsageError("unknown scene layout: " + layout);
}

inline std::vector<RigidTransform> make_trajectory(const SceneSpec& spec)
{
    if (spec.frames < 1)
        throw UsageError("scene needs at least one frame");
    std::vector<RigidTransform> out;
    const double yaw = spec.rotation_step_deg * std::numbers::pi / 180.0;
    for (int k = 0; k < spec.frames; ++k) {
        const double kd = static_cast<double>(k);
        if (spec.trajectory == "line") {
            const Vec3 t(0.03 * std::sin(0.7 * kd), 0.01 * std::sin(1.3 * kd), spec.step * kd);
            const Vec3 w(0.3 * yaw * std::sin(0.5 * kd), yaw * kd, 0.0);
            out.push_back(RigidTransform::from_axis_angle(w, t));
        } else if (spec.trajectory == "circle") {
            const double r = 0.5;
            const double a = spec.step * kd / r;
            const Vec3 t(r * (std::cos(a) - 1.0), 0.0, r * std::sin(a));
            out.push_back(RigidTransform::from_axis_angle(Vec3(0.0, yaw * kd, 0.0), t));
        } else {
            throw UsageError("unknown trajectory shape: " + spec.trajectory);
        }
    }
    return out;
}

/// Ray-casts the planes into depth (meters) and color for one camera pose.
inline Frame render_frame(const std::vector<PlaneRect>& planes, const RigidTransform& pose, const Intrinsics& k,
                          int width, int height, int index)
{
    Frame f;
    f.index = index;
    f.intrinsics = k;
    f.pose = pose;
    f.depth = Image<float>(width, height, 0.0f);
    f.color = Image<Rgb8>(width, height, Rgb8{0, 0, 0});
    const Vec3 origin = pose.translation;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Vec3 dir_cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
            const Vec3 dir = pose.rotation * dir_cam;
            double best = std::numeric_limits<double>::infinity();
            const PlaneRect* hit = nullptr;
            for (const auto& pr : planes) {
                const double denom = dir.dot(pr.plane.normal);
                if (std::abs(denom) < 1e-12)
                    continue;
                const double t = (pr.plane.point - origin).dot(pr.plane.normal) / denom;
                if (t <= 1e-6 || t >= best)
                    continue;
                if (!pr.contains(origin + t * dir))
                    continue;
                best = t;
                hit = &pr;
            }
            if (!hit)
                continue;
            f.depth(x, y) = static_cast<float>(best);
            const Vec3 xw = origin + best * dir - hit->plane.point;
            const int cu = static_cast<int>(std::floor(xw.dot(hit->axis_u) / 0.25));
            const int cv = static_cast<int>(std::floor(xw.dot(hit->axis_v) / 0.25));
            const double shade = ((cu + cv) % 2 == 0) ? 1.0 : 0.8;
            f.color(x, y) = Rgb8{static_cast<std::uint8_t>(hit->color.r * shade),
                                 static_cast<std::uint8_t>(hit->color.g * shade),
                                 static_cast<std::uint8_t>(hit->color.b * shade)};
        }
    return f;
}

}  // namespace detail

/**
 * Builds a scene: planes from the layout, a trajectory, and per-frame analytic
 * patches sampled on a regular grid over each visible tile of each plane.
 */
inline SyntheticScene generate_scene(const SceneSpec& spec)
{
    if (spec.samples_per_patch < 3 || spec.tile_size <= 0.0 || spec.width < 8 || spec.height < 8)
        throw UsageError("invalid scene spec");
    SyntheticScene scene;
    scene.spec = spec;
    scene.planes = detail::layout_planes(spec.layout);
    scene.trajectory = detail::make_trajectory(spec);
    scene.intrinsics = Intrinsics{spec.focal, spec.focal, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0};

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.samples_per_patch))));

    for (std::size_t f = 0; f < scene.trajectory.size(); ++f) {
        const RigidTransform& pose = scene.trajectory[f];
        const RigidTransform inv = pose.inverse();
        int next_id = 0;
        for (const auto& pr : scene.planes) {
            if ((pose.translation - pr.plane.point).dot(pr.plane.normal) <= 0.0)
                continue;
            const int nu = std::max(1, static_cast<int>(std::ceil(2.0 * pr.half_u / spec.tile_size - 1e-9)));
            const int nv = std::max(1, static_cast<int>(std::ceil(2.0 * pr.half_v / spec.tile_size - 1e-9)));
            for (int tu = 0; tu < nu; ++tu)
                for (int tv = 0; tv < nv; ++tv) {
                    const double u0 = -pr.half_u + tu * spec.tile_size;
                    const double u1 = std::min(pr.half_u, u0 + spec.tile_size);
                    const double v0 = -pr.half_v + tv * spec.tile_size;
                    const double v1 = std::min(pr.half_v, v0 + spec.tile_size);
                    std::vector<Vec3> pts;
                    const int total = grid * grid;
                    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
                    for (int a = 0; a < grid && static_cast<int>(pts.size()) < spec.samples_per_patch; ++a)
                        for (int b = 0; b < grid && static_cast<int>(pts.size()) < spec.samples_per_patch; ++b) {
                            const double su = u0 + (u1 - u0) * (a + 0.5) / grid;
                            const double sv = v0 + (v1 - v0) * (b + 0.5) / grid;
                            const Vec3 xw = pr.plane.point + su * pr.axis_u + sv * pr.axis_v;
                            const Vec3 xc = inv * xw;
                            if (xc.z() < 0.1 || xc.z() > spec.max_range)
                                continue;
                            const Eigen::Vector2d px = scene.intrinsics.project(xc);
                            if (px.x() < 0 || px.y() < 0 || px.x() > spec.width - 1 || px.y() > spec.height - 1)
                                continue;
                            min_x = std::min(min_x, px.x());
                            max_x = std::max(max_x, px.x());
                            min_y = std::min(min_y, px.y());
                            max_y = std::max(max_y, px.y());
                            pts.push_back(xc);
                        }
                    if (static_cast<int>(pts.size()) < std::max(3, (std::min(total, spec.samples_per_patch) * 6) / 10))
                        continue;
                    if (spec.depth_noise > 0.0)
                        for (auto& p : pts)
                            p *= (p.z() + spec.depth_noise * noise(rng)) / p.z();
                    PlanePatch patch;
                    patch.id = next_id++;
                    patch.frame_id = static_cast<int>(f);
                    patch.samples = pts;
                    PlaneFit fit = fit_plane(patch.samples);
                    if (fit.plane.normal.dot(fit.plane.point) > 0.0)
                        fit.plane.normal = -fit.plane.normal;
                    patch.plane = fit.plane;
                    patch.centroid = fit.plane.point;
                    const double frac = static_cast<double>(pts.size()) / std::min(total, spec.samples_per_patch);
                    patch.area = (u1 - u0) * (v1 - v0) * frac;
                    const double z = patch.centroid.z();
                    const double cosang = std::abs(patch.plane.normal.dot(patch.centroid.normalized()));
                    patch.pixel_count = std::max(
                        1, static_cast<int>(std::lround(patch.area * spec.focal * spec.focal * cosang / (z * z))));
                    patch.bbox = PixelRect{static_cast<int>(std::floor(min_x)), static_cast<int>(std::floor(min_y)),
                                           static_cast<int>(std::floor(max_x) - std::floor(min_x)) + 1,
                                           static_cast<int>(std::floor(max_y) - std::floor(min_y)) + 1};
                    scene.patches.push_back(std::move(patch));
                    scene.patch_plane.push_back(pr.id);
                }
        }
        if (next_id == 0)
            scene.warnings.push_back("no plane visible from frame " + std::to_string(f));
    }

    if (spec.render) {
        for (std::size_t f = 0; f < scene.trajectory.size(); ++f) {
            Frame fr = detail::render_frame(scene.planes, scene.trajectory[f], scene.intrinsics, spec.width,
                                            spec.height, static_cast<int>(f));
            for (auto& d : fr.depth.data()) {
                if (d <= 0.0f)
                    continue;
                double v = d + (spec.depth_noise > 0.0 ? spec.depth_noise * noise(rng) : 0.0);
                if (spec.depth_scale > 0.0)
                    v = std::round(v * spec.depth_scale) / spec.depth_scale;
                d = static_cast<float>(std::max(v, 0.0));
            }
            scene.frames.push_back(std::move(fr));
        }
    }
    return scene;
}

/// Renders one frame of the scene (noise-free depth) for an arbitrary pose.
inline Frame render_scene_frame(const SyntheticScene& scene, const RigidTransform& pose, int index = 0)
{
    return detail::render_frame(scene.planes, pose, scene.intrinsics, scene.spec.width, scene.spec.height, index);
}

/// Pair hypotheses with ground-truth correctness.
struct LabeledPairs
{
    std::vector<CoplanarPair> pairs;
    std::vector<bool> correct;

    std::size_t incorrect_count() const
    {
        return static_cast<std::size_t>(std::count(correct.begin(), correct.end(), false));
    }
};

/**
 * Draws `n_correct` truly coplanar cross-frame pairs (spread evenly over the
 * planes) and `n_incorrect` planted
 * false pairs between non-coplanar patches. Correct pairs carry the oracle
 * descriptor distance (descriptor_noise sigma); false pairs get a forged
 * distance uniform in [0, threshold). Weights use the batch maximum distance.
 * `max_frame_gap` limits |frame_i - frame_j| (0 = unlimited).
 */
inline LabeledPairs make_labeled_pairs(const SyntheticScene& scene, std::size_t n_correct, std::size_t n_incorrect,
                                       std::uint64_t seed, double threshold = 2.5, double descriptor_noise = 0.0,
                                       int max_frame_gap = 0)
{
    std::vector<std::pair<std::size_t, std::size_t>> good, bad;
    const auto& ps = scene.patches;
    for (std::size_t a = 0; a < ps.size(); ++a)
        for (std::size_t b = a + 1; b < ps.size(); ++b) {
            if (ps[a].frame_id == ps[b].frame_id)
                continue;
            if (max_frame_gap > 0 && std::abs(ps[a].frame_id - ps[b].frame_id) > max_frame_gap)
                continue;
            const bool ordered = ps[a].frame_id < ps[b].frame_id;
            (scene.coplanar(a, b) ? good : bad).emplace_back(ordered ? a : b, ordered ? b : a);
        }
    if (good.size() < n_correct)
        throw DataError("scene has only " + std::to_string(good.size()) + " coplanar pairs");
    if (bad.size() < n_incorrect)
        throw DataError("scene has only " + std::to_string(bad.size()) + " non-coplanar pairs");
    std::mt19937_64 rng(seed);
    // correct pairs are drawn round-robin over planes so every plane direction stays constrained
    std::map<int, std::vector<std::pair<std::size_t, std::size_t>>> by_plane;
    for (const auto& pr : good)
        by_plane[scene.patch_plane[pr.first]].push_back(pr);
    for (auto& [id, list] : by_plane)
        std::shuffle(list.begin(), list.end(), rng);
    std::vector<std::pair<std::size_t, std::size_t>> chosen;
    for (std::size_t round = 0; chosen.size() < n_correct; ++round)
        for (auto& [id, list] : by_plane)
            if (round < list.size() && chosen.size() < n_correct)
                chosen.push_back(list[round]);
    good = std::move(chosen);
    std::shuffle(bad.begin(), bad.end(), rng);
    bad.resize(n_incorrect);

    const OracleProvider oracle(scene.trajectory, descriptor_noise, seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> forged(0.0, threshold);
    LabeledPairs out;
    for (const auto& [a, b] : good) {
        CoplanarPair p;
        p.p = a;
        p.q = b;
        p.feature_distance = feature_distance(oracle.describe(ps[a]), oracle.describe(ps[b]));
        out.pairs.push_back(p);
        out.correct.push_back(true);
    }
    for (const auto& [a, b] : bad) {
        CoplanarPair p;
        p.p = a;
        p.q = b;
        p.feature_distance = forged(rng);
        out.pairs.push_back(p);
        out.correct.push_back(false);
    }
    // interleave deterministically so that correctness is not encoded in the order
    std::vector<std::size_t> order(out.pairs.size());
    for (std::size_t k = 0; k < order.size(); ++k)
        order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);
    LabeledPairs shuffled;
    double d_fm = 0.0;
    for (const auto k : order) {
        shuffled.pairs.push_back(out.pairs[k]);
        shuffled.correct.push_back(out.correct[k]);
        d_fm = std::max(d_fm, out.pairs[k].feature_distance);
    }
    for (auto& p : shuffled.pairs)
        p.weight = d_fm > 0.0 ? pair_confidence(p.feature_distance, d_fm) : 1.0;
    return shuffled;
}

/// Keypoint match with its pixel coordinates (for file export).
struct SyntheticKeypoint
{
    KeypointMatch match;
    Eigen::Vector2d u_px;
    Eigen::Vector2d v_px;
    bool correct = true;
};

/**
 * Random points on visible plane regions observed by frames i and i+gap for
 * gap in [1, max_gap]; `outlier_fraction` of matches get a random wrong target.
 */
inline std::vector<SyntheticKeypoint> make_keypoint_matches(const SyntheticScene& scene, int per_frame_pair,
                                                            double outlier_fraction, std::uint64_t seed,
                                                            int max_gap = 1)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<SyntheticKeypoint> out;
    const auto& k = scene.intrinsics;
    const int n = static_cast<int>(scene.trajectory.size());
    auto visible = [&](int f, const Vec3& xw, Eigen::Vector2d& px, Vec3& xc) {
        xc = scene.trajectory[static_cast<std::size_t>(f)].inverse() * xw;
        if (xc.z() < 0.1 || xc.z() > scene.spec.max_range)
            return false;
        px = k.project(xc);
        return px.x() >= 0 && px.y() >= 0 && px.x() <= scene.spec.width - 1 && px.y() <= scene.spec.height - 1;
    };
    for (int i = 0; i < n; ++i)
        for (int gap = 1; gap <= max_gap && i + gap < n; ++gap) {
            const int j = i + gap;
            int made = 0;
            for (int attempt = 0; attempt < per_frame_pair * 200 && made < per_frame_pair; ++attempt) {
                const auto& pr = scene.planes[static_cast<std::size_t>(
                    std::uniform_int_distribution<std::size_t>(0, scene.planes.size() - 1)(rng))];
                const Vec3 xw = pr.plane.point + unit(rng) * pr.half_u * pr.axis_u + unit(rng) * pr.half_v * pr.axis_v;
                SyntheticKeypoint kp;
                Vec3 ui, vj;
                if (!visible(i, xw, kp.u_px, ui) || !visible(j, xw, kp.v_px, vj))
                    continue;
                if (coin(rng) < outlier_fraction) {
                    const Vec3 other = xw + Vec3(unit(rng), unit(rng), unit(rng)) * 0.8;
                    Eigen::Vector2d px;
                    Vec3 oc;
                    if (!visible(j, other, px, oc))
                        continue;
                    kp.v_px = px;
                    vj = oc;
                    kp.correct = false;
                }
                kp.match.frame_i = i;
                kp.match.frame_j = j;
                kp.match.u = ui;
                kp.match.v = vj;
                out.push_back(kp);
                ++made;
            }
        }
    return out;
}

}  // namespace coplanar
