#pragma once

/**
 * @file correspondence.hpp
 * @brief Coplanar pair proposal, keypoint matches and the per-fragment-pair
 *        RANSAC verification.
 */

#include "coplanar/descriptor.hpp"
#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace coplanar {

/// Hypothesized coplanar patch pair. `p` and `q` index a patch list; frame(p) < frame(q).
struct CoplanarPair
{
    std::size_t p = 0;
    std::size_t q = 0;
    double feature_distance = 0.0;
    double weight = 1.0;
    double selection = 1.0;
};

/// Matched keypoints, back-projected to camera space of frames i and j.
struct KeypointMatch
{
    int frame_i = 0;
    int frame_j = 0;
    Vec3 u = Vec3::Zero();
    Vec3 v = Vec3::Zero();
    double selection = 1.0;
};

struct RansacParams
{
    int iterations = 1024;
    double inlier_threshold_m = 0.01;
    double consensus_fraction = 0.25;
    std::uint64_t rng_seed = 0;
};

/**
 * All cross-frame patch pairs whose descriptor distance is below `threshold`.
 * The confidence weight uses the largest distance among the proposed pairs as d_fm
 * (a batch where every distance is zero gets weight 1).
 */
inline std::vector<CoplanarPair> propose_pairs(std::span<const PlanePatch> patches,
                                               const DescriptorProvider& provider, double threshold)
{
    std::vector<DescriptorVector> desc;
    desc.reserve(patches.size());
    for (const auto& p : patches)
        desc.push_back(provider.describe(p));

    std::vector<CoplanarPair> pairs;
    for (std::size_t a = 0; a < patches.size(); ++a)
        for (std::size_t b = a + 1; b < patches.size(); ++b) {
            if (patches[a].frame_id == patches[b].frame_id)
                continue;
            const double d = feature_distance(desc[a], desc[b]);
            if (!(d < threshold))
                continue;
            CoplanarPair pair;
            const bool ordered = patches[a].frame_id < patches[b].frame_id;
            pair.p = ordered ? a : b;
            pair.q = ordered ? b : a;
            pair.feature_distance = d;
            pairs.push_back(pair);
        }
    double d_fm = 0.0;
    for (const auto& pair : pairs)
        d_fm = std::max(d_fm, pair.feature_distance);
    for (auto& pair : pairs)
        pair.weight = d_fm > 0.0 ? pair_confidence(pair.feature_distance, d_fm) : 1.0;
    return pairs;
}

/// Patch correspondence between two rigid bodies A and B, each patch in its own body frame.
struct PatchMatch
{
    PlanePatch source;
    PlanePatch target;
};

/// Point correspondence between bodies A and B.
struct PointMatch
{
    Vec3 source = Vec3::Zero();
    Vec3 target = Vec3::Zero();
};

using FeatureMatch = std::variant<PatchMatch, PointMatch>;

/**
 * Rigid transform A -> B aligning three matched features, or nullopt when the
 * constraint system is rank deficient.
 *
 * Rotation: Procrustes on the stacked direction pairs (patch normals plus
 * centered keypoint offsets). Translation: least squares on one row per patch
 * (offset along the target normal) and three rows per keypoint.
 */
inline std::optional<RigidTransform> estimate_transform_from_features(std::span<const FeatureMatch> features,
                                                                      double rank_tol = 1e-6)
{
    std::vector<const PatchMatch*> planes;
    std::vector<const PointMatch*> points;
    for (const auto& f : features) {
        if (const auto* pm = std::get_if<PatchMatch>(&f))
            planes.push_back(pm);
        else
            points.push_back(&std::get<PointMatch>(f));
    }

    Mat3 h = Mat3::Zero();
    for (const auto* pm : planes)
        h += pm->source.plane.normal * pm->target.plane.normal.transpose();
    if (points.size() >= 2) {
        Vec3 ms = Vec3::Zero(), mt = Vec3::Zero();
        for (const auto* pt : points) {
            ms += pt->source;
            mt += pt->target;
        }
        ms /= static_cast<double>(points.size());
        mt /= static_cast<double>(points.size());
        for (const auto* pt : points)
            h += (pt->source - ms) * (pt->target - mt).transpose();
    }
    const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(1) <= rank_tol * sv(0))
        return std::nullopt;
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();

    Mat3 ata = Mat3::Zero();
    Vec3 atb = Vec3::Zero();
    for (const auto* pm : planes) {
        const Vec3& n = pm->target.plane.normal;
        const double rhs = n.dot(pm->target.plane.point - r * pm->source.plane.point);
        ata += n * n.transpose();
        atb += n * rhs;
    }
    for (const auto* pt : points) {
        ata += Mat3::Identity();
        atb += pt->target - r * pt->source;
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(ata);
    const auto& ev = es.eigenvalues();
    if (!(ev(2) > 0.0) || ev(0) <= rank_tol * ev(2))
        return std::nullopt;
    return RigidTransform(r, ata.ldlt().solve(atb));
}

/// Three-feature form used by the RANSAC hypothesis step.
inline std::optional<RigidTransform> estimate_transform_from_triplet(const std::array<FeatureMatch, 3>& features,
                                                                     double rank_tol = 1e-6)
{
    return estimate_transform_from_features(features, rank_tol);
}

/// Outcome of a successful RANSAC vote.
struct RansacResult
{
    RigidTransform transform;
    std::vector<std::size_t> patch_inliers;
    std::vector<std::size_t> point_inliers;
    double support_fraction = 0.0;
};

inline bool ransac_supports(const PatchMatch& m, const RigidTransform& t, double threshold)
{
    return rms_closest_distance(m.source, m.target, t) <= threshold;
}

namespace detail {

/// Bounding sphere of a sample set.
struct SampleBounds
{
    Vec3 center = Vec3::Zero();
    double radius = 0.0;
};

inline SampleBounds sample_bounds(const std::vector<Vec3>& samples)
{
    SampleBounds b;
    for (const auto& s : samples)
        b.center += s;
    b.center /= static_cast<double>(std::max<std::size_t>(samples.size(), 1));
    for (const auto& s : samples)
        b.radius = std::max(b.radius, (s - b.center).norm());
    return b;
}

/**
 * Same decision as ransac_supports() for patches. Rejects early when the
 * bounding spheres are farther apart than the threshold (every nearest distance
 * then exceeds it) or when the running squared sum passes the budget.
 */
inline bool patch_supports_bounded(const PatchMatch& m, const SampleBounds& src, const SampleBounds& tgt,
                                   const RigidTransform& t, double threshold)
{
    const double gap = (t * src.center - tgt.center).norm() - src.radius - tgt.radius;
    if (gap > threshold)
        return false;
    const auto& qs = m.target.samples;
    std::vector<Vec3> moved;
    moved.reserve(m.source.samples.size());
    for (const auto& v : m.source.samples)
        moved.push_back(t * v);
    const double budget = threshold * threshold * static_cast<double>(moved.size() + qs.size());
    double sum = 0.0;
    auto nearest_sq = [](const Vec3& x, const std::vector<Vec3>& set) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& y : set)
            best = std::min(best, (x - y).squaredNorm());
        return best;
    };
    for (const auto& x : moved) {
        sum += nearest_sq(x, qs);
        if (sum > budget)
            return false;
    }
    for (const auto& y : qs) {
        sum += nearest_sq(y, moved);
        if (sum > budget)
            return false;
    }
    return true;
}

}  // namespace detail

inline bool ransac_supports(const PointMatch& m, const RigidTransform& t, double threshold)
{
    return (t * m.source - m.target).norm() <= threshold;
}

/**
 * Samples three matches per iteration, fits a transform and counts the matches
 * it aligns. Accepted only when the best support fraction exceeds the consensus
 * fraction; otherwise every putative match is discarded.
 */
inline std::optional<RansacResult> ransac_verify(std::span<const PatchMatch> patches,
                                                 std::span<const PointMatch> points, const RansacParams& params)
{
    if (!(params.consensus_fraction > 0.0 && params.consensus_fraction <= 1.0))
        throw UsageError("consensus fraction must be in (0, 1]");
    const std::size_t total = patches.size() + points.size();
    if (total < 3)
        return std::nullopt;

    auto feature = [&](std::size_t k) -> FeatureMatch {
        if (k < patches.size())
            return patches[k];
        return points[k - patches.size()];
    };
    std::vector<detail::SampleBounds> src_bounds, tgt_bounds;
    for (const auto& m : patches) {
        if (m.source.samples.empty() || m.target.samples.empty())
            throw DataError("degenerate patch");
        src_bounds.push_back(detail::sample_bounds(m.source.samples));
        tgt_bounds.push_back(detail::sample_bounds(m.target.samples));
    }
    auto supports = [&](std::size_t k, const RigidTransform& t) {
        if (k < patches.size())
            return detail::patch_supports_bounded(patches[k], src_bounds[k], tgt_bounds[k], t,
                                                  params.inlier_threshold_m);
        return ransac_supports(points[k - patches.size()], t, params.inlier_threshold_m);
    };

    std::mt19937_64 rng(params.rng_seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    std::size_t best_support = 0;
    std::optional<RigidTransform> best;
    for (int it = 0; it < params.iterations; ++it) {
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        while (b == a)
            b = pick(rng);
        std::size_t c = pick(rng);
        while (c == a || c == b)
            c = pick(rng);
        const FeatureMatch sample[3] = {feature(a), feature(b), feature(c)};
        const auto t = estimate_transform_from_features(sample);
        if (!t)
            continue;
        std::size_t support = 0;
        for (std::size_t k = 0; k < total; ++k)
            support += supports(k, *t) ? 1 : 0;
        if (support > best_support) {
            best_support = support;
            best = t;
        }
    }
    const double fraction = static_cast<double>(best_support) / static_cast<double>(total);
    if (!best || !(fraction > params.consensus_fraction))
        return std::nullopt;

    RansacResult out;
    out.transform = *best;
    out.support_fraction = fraction;
    for (std::size_t k = 0; k < total; ++k) {
        if (!supports(k, *best))
            continue;
        if (k < patches.size())
            out.patch_inliers.push_back(k);
        else
            out.point_inliers.push_back(k - patches.size());
    }
    return out;
}

/// Depth lookup used to back-project keypoints: returns meters, 0 when invalid.
using DepthLookup = std::function<double(int frame, double px, double py)>;

/**
 * Reads keypoint matches, one per line: `frame_i u_px u_py frame_j v_px v_py`.
 * Matches whose endpoint has no valid depth are dropped. Blank lines and lines
 * starting with '#' are ignored.
 */
inline std::vector<KeypointMatch> load_keypoint_matches(const std::string& path, const DepthLookup& depth,
                                                        const Intrinsics& intrinsics)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open keypoint file: " + path);
    std::vector<KeypointMatch> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#')
            continue;
        std::istringstream ls(line);
        int fi = 0, fj = 0;
        double ux = 0, uy = 0, vx = 0, vy = 0;
        std::string extra;
        if (!(ls >> fi >> ux >> uy >> fj >> vx >> vy) || (ls >> extra))
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 'frame_i u_px u_py frame_j v_px v_py'");
        if (fi == fj)
            throw DataError(path + ":" + std::to_string(line_no) + ": match within a single frame");
        const double du = depth(fi, ux, uy);
        const double dv = depth(fj, vx, vy);
        if (!(du > 0.0) || !(dv > 0.0))
            continue;
        KeypointMatch m;
        m.frame_i = fi;
        m.frame_j = fj;
        m.u = intrinsics.back_project(ux, uy, du);
        m.v = intrinsics.back_project(vx, vy, dv);
        if (fi > fj) {
            std::swap(m.frame_i, m.frame_j);
            std::swap(m.u, m.v);
        }
        out.push_back(m);
    }
    return out;
}

}  // namespace coplanar
