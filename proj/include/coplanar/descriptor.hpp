#pragma once

/**
 * @file descriptor.hpp
 * @brief Patch descriptors, pair confidence, the triplet focal loss and
 *        self-supervised triplet sampling.
 */

#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace coplanar {

struct DescriptorVector
{
    Eigen::VectorXd values;

    DescriptorVector() = default;
    explicit DescriptorVector(Eigen::VectorXd v) : values(std::move(v)) {}

    Eigen::Index dimension() const { return values.size(); }
};

/// L2 distance between two descriptors of equal dimension.
inline double feature_distance(const DescriptorVector& a, const DescriptorVector& b)
{
    if (a.dimension() != b.dimension())
        throw UsageError("descriptor dimension mismatch");
    return (a.values - b.values).norm();
}

struct FocalLossParams
{
    double alpha = 1.0;
    double lambda = 3.0;
};

/**
 * Triplet focal loss max(0, (alpha - dd) / alpha)^lambda with dd = d_neg - d_pos.
 * lambda = 1 gives the plain margined triplet loss.
 */
inline double triplet_focal_loss(double d_pos, double d_neg, const FocalLossParams& params = {})
{
    if (!(params.alpha > 0.0) || params.lambda < 1.0)
        throw UsageError("focal loss requires alpha > 0 and lambda >= 1");
    const double base = std::max(0.0, (params.alpha - (d_neg - d_pos)) / params.alpha);
    return std::pow(base, params.lambda);
}

/// Pair confidence exp(-d_f^2 / (sigma^2 d_fm^2)).
inline double pair_confidence(double d_f, double d_fm, double sigma = 0.6)
{
    if (!(d_fm > 0.0))
        throw UsageError("maximum feature distance must be positive");
    if (d_f < 0.0)
        throw UsageError("feature distance must be nonnegative");
    return std::exp(-(d_f * d_f) / (sigma * sigma * d_fm * d_fm));
}

/// Ground-truth coplanarity: coplanarity distance under the true poses below tau.
inline bool label_coplanar(const PlanePatch& p, const PlanePatch& q, const RigidTransform& gt_ti,
                           const RigidTransform& gt_tj, double tau = 0.01)
{
    return coplanarity_distance(gt_ti, gt_tj, p, q) < tau;
}

/// Produces a descriptor for a patch. Implementations are read-only after construction.
class DescriptorProvider
{
public:
    virtual ~DescriptorProvider() = default;
    virtual DescriptorVector describe(const PlanePatch& patch) const = 0;
};

/// Quantized RGB histogram over the patch pixels, normalized to unit mass.
class ColorHistogramProvider : public DescriptorProvider
{
public:
    /// `colors[k]` is the color image of frame k.
    explicit ColorHistogramProvider(std::vector<Image<Rgb8>> colors, int bins_per_channel = 4)
        : colors_(std::move(colors)), bins_(bins_per_channel)
    {
        if (bins_ < 1 || bins_ > 256)
            throw UsageError("histogram bins per channel must be in [1, 256]");
    }

    DescriptorVector describe(const PlanePatch& patch) const override
    {
        if (patch.frame_id < 0 || patch.frame_id >= static_cast<int>(colors_.size()))
            throw DataError("no color image for frame " + std::to_string(patch.frame_id));
        const auto& img = colors_[static_cast<std::size_t>(patch.frame_id)];
        Eigen::VectorXd hist = Eigen::VectorXd::Zero(bins_ * bins_ * bins_);
        auto bin = [this](std::uint8_t c) { return static_cast<int>(c) * bins_ / 256; };
        for (const int idx : patch.pixels) {
            if (idx < 0 || static_cast<std::size_t>(idx) >= img.size())
                throw DataError("patch pixel outside color image");
            const Rgb8 c = img[static_cast<std::size_t>(idx)];
            hist((bin(c.r) * bins_ + bin(c.g)) * bins_ + bin(c.b)) += 1.0;
        }
        const double total = hist.sum();
        if (total > 0.0)
            hist /= total;
        return DescriptorVector(std::move(hist));
    }

private:
    std::vector<Image<Rgb8>> colors_;
    int bins_;
};

/**
 * Synthetic-scene stand-in for a learned descriptor: the global plane (n, n.p)
 * under ground-truth poses plus seeded Gaussian noise.
 */
class OracleProvider : public DescriptorProvider
{
public:
    OracleProvider(std::vector<RigidTransform> gt_poses, double noise_sigma = 0.0, std::uint64_t seed = 0)
        : poses_(std::move(gt_poses)), sigma_(noise_sigma), seed_(seed)
    {
    }

    DescriptorVector describe(const PlanePatch& patch) const override
    {
        if (patch.frame_id < 0 || patch.frame_id >= static_cast<int>(poses_.size()))
            throw DataError("no ground-truth pose for frame " + std::to_string(patch.frame_id));
        const Plane g = patch.global_plane(poses_[static_cast<std::size_t>(patch.frame_id)]);
        Eigen::VectorXd v(4);
        v << g.normal, g.offset();
        if (sigma_ > 0.0) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                              static_cast<std::uint32_t>(patch.frame_id), static_cast<std::uint32_t>(patch.id)};
            std::mt19937_64 rng(seq);
            std::normal_distribution<double> noise(0.0, sigma_);
            for (Eigen::Index k = 0; k < v.size(); ++k)
                v(k) += noise(rng);
        }
        return DescriptorVector(std::move(v));
    }

private:
    std::vector<RigidTransform> poses_;
    double sigma_;
    std::uint64_t seed_;
};

/// Externally computed embeddings keyed by (frame id, patch id).
class FileEmbeddingProvider : public DescriptorProvider
{
public:
    using Key = std::pair<int, int>;

    explicit FileEmbeddingProvider(std::map<Key, DescriptorVector> table) : table_(std::move(table)) {}

    /// Reads the `D N` header followed by N lines `frame_id patch_id v1 ... vD`.
    static FileEmbeddingProvider load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw DataError("cannot open embedding file: " + path);
        std::string line;
        int line_no = 0;
        auto next_line = [&]() {
            while (std::getline(in, line)) {
                ++line_no;
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    return true;
            }
            return false;
        };
        if (!next_line())
            throw DataError(path + ": missing header");
        long dim = 0, count = 0;
        {
            std::istringstream hs(line);
            if (!(hs >> dim >> count) || dim <= 0 || count < 0)
                throw DataError(path + ":" + std::to_string(line_no) + ": bad header, expected 'D N'");
        }
        std::map<Key, DescriptorVector> table;
        for (long k = 0; k < count; ++k) {
            if (!next_line())
                throw DataError(path + ": expected " + std::to_string(count) + " rows, got " + std::to_string(k));
            std::istringstream ls(line);
            int frame = 0, patch = 0;
            Eigen::VectorXd v(dim);
            if (!(ls >> frame >> patch))
                throw DataError(path + ":" + std::to_string(line_no) + ": bad ids");
            for (long d = 0; d < dim; ++d)
                if (!(ls >> v(d)) || !std::isfinite(v(d)))
                    throw DataError(path + ":" + std::to_string(line_no) + ": bad value");
            table[{frame, patch}] = DescriptorVector(std::move(v));
        }
        return FileEmbeddingProvider(std::move(table));
    }

    DescriptorVector describe(const PlanePatch& patch) const override
    {
        const auto it = table_.find({patch.frame_id, patch.id});
        if (it == table_.end())
            throw DataError("no embedding for frame " + std::to_string(patch.frame_id) + " patch " +
                            std::to_string(patch.id));
        return it->second;
    }

    const std::map<Key, DescriptorVector>& table() const { return table_; }

private:
    std::map<Key, DescriptorVector> table_;
};

/// Indices into a flat patch list.
struct Triplet
{
    std::size_t anchor = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
};

/**
 * Draws `count` (anchor, coplanar, non-coplanar) triplets using ground-truth
 * coplanarity labels. `gt_poses[k]` is the pose of frame k.
 */
inline std::vector<Triplet> sample_triplets(std::span<const PlanePatch> patches,
                                            std::span<const RigidTransform> gt_poses, std::size_t count,
                                            std::uint64_t seed, double tau = 0.01)
{
    const std::size_t n = patches.size();
    auto pose_of = [&](const PlanePatch& p) -> const RigidTransform& {
        if (p.frame_id < 0 || static_cast<std::size_t>(p.frame_id) >= gt_poses.size())
            throw DataError("no ground-truth pose for frame " + std::to_string(p.frame_id));
        return gt_poses[static_cast<std::size_t>(p.frame_id)];
    };
    std::vector<std::vector<std::size_t>> positives(n), negatives(n);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) {
            const bool cop = label_coplanar(patches[a], patches[b], pose_of(patches[a]), pose_of(patches[b]), tau);
            (cop ? positives : negatives)[a].push_back(b);
            (cop ? positives : negatives)[b].push_back(a);
        }
    std::vector<std::size_t> anchors;
    for (std::size_t a = 0; a < n; ++a)
        if (!positives[a].empty() && !negatives[a].empty())
            anchors.push_back(a);
    if (anchors.empty())
        throw DataError("insufficient positives");

    std::mt19937_64 rng(seed);
    auto pick = [&rng](const std::vector<std::size_t>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    std::vector<Triplet> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t a = pick(anchors);
        out.push_back({a, pick(positives[a]), pick(negatives[a])});
    }
    return out;
}

}  // namespace coplanar
