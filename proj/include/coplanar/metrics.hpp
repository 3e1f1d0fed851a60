#pragma once

/**
 * @file metrics.hpp
 * @brief Trajectory error, precision/recall curves, size/distance binned
 * benchmark sets and outlier-ratio sweeps.
 */

#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"
#include "coplanar/pipeline.hpp"
#include "coplanar/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace coplanar {

/**
 * RMSE of camera-center differences. With `align`, the estimate is first
 * mapped by the least-squares rigid transform (no scale) onto the ground truth.
 */
inline double ate_rmse(std::span<const RigidTransform> estimated, std::span<const RigidTransform> ground_truth,
                       bool align = true)
{
    if (estimated.size() != ground_truth.size())
        throw DataError("trajectory lengths differ: " + std::to_string(estimated.size()) + " vs " +
                        std::to_string(ground_truth.size()));
    if (estimated.empty())
        throw DataError("empty trajectory");
    const auto n = static_cast<Eigen::Index>(estimated.size());
    Eigen::Matrix3Xd est(3, n), gt(3, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        est.col(k) = estimated[static_cast<std::size_t>(k)].translation;
        gt.col(k) = ground_truth[static_cast<std::size_t>(k)].translation;
    }
    if (align) {
        const Eigen::Matrix4d t = Eigen::umeyama(est, gt, false);
        est = (t.topLeftCorner<3, 3>() * est).colwise() + t.topRightCorner<3, 1>();
    }
    return std::sqrt((est - gt).colwise().squaredNorm().mean());
}

struct PrPoint
{
    /// Pairs with distance <= threshold are predicted coplanar.
    double threshold = 0.0;
    double precision = 1.0;
    double recall = 0.0;
};

struct PrCurve
{
    /// Starts at (recall 0, precision 1), then one point per distinct score.
    std::vector<PrPoint> points;
    double auc = 0.0;
};

/**
 * Precision/recall over a threshold sweep of the sorted distances. Tied scores
 * enter together. The area is the trapezoid rule over recall.
 */
inline PrCurve pr_curve(std::span<const double> distances, const std::vector<bool>& labels)
{
    if (distances.size() != labels.size())
        throw UsageError("score and label counts differ");
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    if (positives == 0 || positives == labels.size())
        throw DataError("precision/recall needs at least one positive and one negative");
    std::vector<std::size_t> order(distances.size());
    for (std::size_t k = 0; k < order.size(); ++k)
        order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });

    PrCurve c;
    c.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double t = distances[order[k]];
        while (k < order.size() && distances[order[k]] == t) {
            (labels[order[k]] ? tp : fp) += 1;
            ++k;
        }
        c.points.push_back({t, static_cast<double>(tp) / static_cast<double>(tp + fp),
                            static_cast<double>(tp) / static_cast<double>(positives)});
    }
    for (std::size_t k = 1; k < c.points.size(); ++k)
        c.auc += 0.5 * (c.points[k].recall - c.points[k - 1].recall) *
                 (c.points[k].precision + c.points[k - 1].precision);
    return c;
}

enum class SizeBin { S1, S2, S3 };
enum class DistanceBin { D1, D2, D3 };

inline const char* to_string(SizeBin b)
{
    switch (b) {
    case SizeBin::S1: return "S1";
    case SizeBin::S2: return "S2";
    case SizeBin::S3: return "S3";
    }
    return "?";
}

inline const char* to_string(DistanceBin b)
{
    switch (b) {
    case DistanceBin::D1: return "D1";
    case DistanceBin::D2: return "D2";
    case DistanceBin::D3: return "D3";
    }
    return "?";
}

/// S1 [0.25, 10], S2 [0.05, 0.25), S3 [0, 0.05) square meters; nullopt outside.
inline std::optional<SizeBin> size_bin(double area)
{
    if (area >= 0.25 && area <= 10.0)
        return SizeBin::S1;
    if (area >= 0.05 && area < 0.25)
        return SizeBin::S2;
    if (area >= 0.0 && area < 0.05)
        return SizeBin::S3;
    return std::nullopt;
}

/// D1 [0, 0.3), D2 [0.3, 1), D3 [1, 5] meters; nullopt outside.
inline std::optional<DistanceBin> distance_bin(double d)
{
    if (d >= 0.0 && d < 0.3)
        return DistanceBin::D1;
    if (d >= 0.3 && d < 1.0)
        return DistanceBin::D2;
    if (d >= 1.0 && d <= 5.0)
        return DistanceBin::D3;
    return std::nullopt;
}

/// One labeled benchmark pair. Patch indices refer to the source scene's patch list.
struct CopPair
{
    std::size_t scene = 0;
    std::size_t p = 0;
    std::size_t q = 0;
    bool positive = false;
    /// Smaller of the two patch areas.
    double area = 0.0;
    /// Distance between the patch centroids in the global frame.
    double distance = 0.0;
    SizeBin size = SizeBin::S1;
    DistanceBin range = DistanceBin::D1;
};

/// Six subsets: S1, S2, S3 (by size) then D1, D2, D3 (by distance).
struct CopBenchmarkSet
{
    static constexpr std::array<const char*, 6> subset_names = {"S1", "S2", "S3", "D1", "D2", "D3"};
    std::array<std::vector<CopPair>, 6> subsets;
};

/**
 * Draws count / 6 pairs per subset (half positive, half negative) from the
 * patches of the given scenes. Positives lie on the same plane. A pair's size
 * bin uses the smaller patch area. Only pairs that fall in a bin on both axes
 * are eligible. Throws naming the first subset that cannot be filled.
 */
inline CopBenchmarkSet build_cop_set(std::span<const SyntheticScene> scenes, std::size_t count, std::uint64_t seed,
                                     std::size_t max_attempts = 20'000'000)
{
    if (count == 0 || count % 12 != 0)
        throw UsageError("COP set size must be a positive multiple of 12");
    if (scenes.empty())
        throw UsageError("COP set needs at least one scene");
    const std::size_t half = count / 12;
    CopBenchmarkSet set;
    std::array<std::size_t, 6> pos{}, neg{};
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> usable;
    for (std::size_t s = 0; s < scenes.size(); ++s)
        if (scenes[s].patches.size() >= 2)
            usable.push_back(s);
    if (usable.empty())
        throw DataError("COP set scenes have fewer than two patches");
    auto full = [&] {
        for (std::size_t k = 0; k < 6; ++k)
            if (pos[k] < half || neg[k] < half)
                return false;
        return true;
    };
    for (std::size_t attempt = 0; attempt < max_attempts && !full(); ++attempt) {
        const std::size_t s = usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)];
        const SyntheticScene& sc = scenes[s];
        std::uniform_int_distribution<std::size_t> pick(0, sc.patches.size() - 1);
        const std::size_t a = pick(rng), b = pick(rng);
        if (a == b)
            continue;
        const PlanePatch& pa = sc.patches[a];
        const PlanePatch& pb = sc.patches[b];
        CopPair c;
        c.scene = s;
        c.p = std::min(a, b);
        c.q = std::max(a, b);
        c.positive = sc.coplanar(a, b);
        c.area = std::min(pa.area, pb.area);
        c.distance = (sc.trajectory[static_cast<std::size_t>(pa.frame_id)] * pa.centroid -
                      sc.trajectory[static_cast<std::size_t>(pb.frame_id)] * pb.centroid)
                         .norm();
        const auto sb = size_bin(c.area);
        const auto db = distance_bin(c.distance);
        if (!sb || !db)
            continue;
        c.size = *sb;
        c.range = *db;
        for (const std::size_t k : {static_cast<std::size_t>(*sb), 3 + static_cast<std::size_t>(*db)}) {
            auto& n = c.positive ? pos[k] : neg[k];
            if (n < half) {
                ++n;
                set.subsets[k].push_back(c);
                break;
            }
        }
    }
    for (std::size_t k = 0; k < 6; ++k)
        if (pos[k] < half || neg[k] < half)
            throw DataError(std::string("COP bin ") + CopBenchmarkSet::subset_names[k] + " cannot be filled (" +
                            std::to_string(pos[k]) + " positive, " + std::to_string(neg[k]) + " negative of " +
                            std::to_string(half) + " each)");
    return set;
}

struct SweepRow
{
    double ratio = 0.0;
    std::size_t correct = 0;
    std::size_t incorrect = 0;
    double ate = 0.0;
    /// Fraction of planted outliers whose final selection is below 0.5.
    double outliers_rejected = 1.0;
};

/**
 * For each incorrect ratio r, keeps `n_correct` true pairs, adds
 * round(n_correct r / (1 - r)) planted false pairs (so that r is the fraction
 * of incorrect pairs), runs the pipeline from identity poses and records ATE.
 */
inline std::vector<SweepRow> robustness_sweep(const SyntheticScene& scene, std::span<const double> ratios,
                                              std::size_t n_correct, const PipelineParams& params, std::uint64_t seed)
{
    std::vector<SweepRow> rows;
    for (const double r : ratios) {
        if (!(r >= 0.0 && r < 1.0))
            throw UsageError("incorrect ratio must be in [0, 1)");
        SweepRow row;
        row.ratio = r;
        row.correct = n_correct;
        row.incorrect = static_cast<std::size_t>(std::llround(static_cast<double>(n_correct) * r / (1.0 - r)));
        const LabeledPairs lp = make_labeled_pairs(scene, row.correct, row.incorrect, seed);
        SequenceInput in;
        in.n_frames = static_cast<int>(scene.trajectory.size());
        in.patches = scene.patches;
        in.pairs = lp.pairs;
        const SequenceResult res = register_sequence(in, params);
        row.ate = ate_rmse(res.poses, scene.trajectory, true);
        if (row.incorrect > 0) {
            std::vector<bool> kept(lp.pairs.size(), false);
            for (const auto& intra : res.intra)
                for (const auto k : intra.surviving_pairs)
                    kept[k] = true;
            std::size_t rejected = 0;
            for (std::size_t k = 0; k < lp.pairs.size(); ++k)
                rejected += (!lp.correct[k] && !kept[k]) ? 1 : 0;
            row.outliers_rejected = static_cast<double>(rejected) / static_cast<double>(row.incorrect);
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace coplanar
