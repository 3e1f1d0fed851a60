#pragma once

/**
 * @file pipeline.hpp
 * @brief Fragment-based hierarchical registration.
 *
 * A sequence is split into overlapping fragments. Each fragment is registered
 * on its own (intra stage), then fragments are treated as rigid bodies and
 * registered against each other (inter stage). Global frame poses are the
 * composition of fragment and local poses.
 */

#include "coplanar/correspondence.hpp"
#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"
#include "coplanar/optimizer.hpp"

#include <algorithm>
#include <future>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <vector>

namespace coplanar {

enum class RegistrationMode { Full, CoplanarityOnly, KeypointsOnly };

struct Fragment
{
    int id = 0;
    /// Inclusive frame range.
    int start = 0;
    int end = 0;
    /// Frame poses in the fragment frame (the first frame is the origin).
    std::vector<RigidTransform> local_poses;
    /// Fragment-to-global transform.
    RigidTransform pose;

    int size() const { return end - start + 1; }
    bool contains(int frame) const { return frame >= start && frame <= end; }
    const RigidTransform& local(int frame) const { return local_poses[static_cast<std::size_t>(frame - start)]; }
};

struct PipelineParams
{
    int fragment_size = 21;
    int overlap = 5;
    SolverOptions solver;
    RansacParams ransac;
    RegistrationMode mode = RegistrationMode::Full;
    /// Patches of one fragment whose planes agree within these bounds share a representative.
    double dedup_angle_deg = 1.0;
    double dedup_offset_m = 0.005;
    /// Link consecutive fragments through the patches of their shared frames.
    bool link_overlap = true;
    /// Worker threads for the intra-fragment solves.
    int threads = 1;

    void validate() const
    {
        if (fragment_size < 1)
            throw UsageError("fragment_size must be positive");
        if (!(overlap > 0 && overlap < fragment_size))
            throw UsageError("overlap must satisfy 0 < overlap < fragment_size");
        if (threads < 1)
            throw UsageError("threads must be at least 1");
        solver.validate();
    }
};

/// Fragments starting at multiples of fragment_size - overlap; the last one is clipped.
inline std::vector<Fragment> partition(int n_frames, const PipelineParams& params)
{
    params.validate();
    if (n_frames < 1)
        throw UsageError("sequence needs at least one frame");
    std::vector<Fragment> out;
    const int stride = params.fragment_size - params.overlap;
    for (int start = 0;; start += stride) {
        Fragment f;
        f.id = static_cast<int>(out.size());
        f.start = start;
        f.end = std::min(start + params.fragment_size - 1, n_frames - 1);
        f.local_poses.assign(static_cast<std::size_t>(f.size()), RigidTransform::identity());
        out.push_back(std::move(f));
        if (out.back().end == n_frames - 1)
            break;
    }
    return out;
}

/// Everything the pipeline consumes. Patch frame ids and keypoint frames index the whole sequence.
struct SequenceInput
{
    int n_frames = 0;
    std::vector<PlanePatch> patches;
    std::vector<CoplanarPair> pairs;
    std::vector<KeypointMatch> keypoints;
    /// Optional initial global poses (empty means identity).
    std::vector<RigidTransform> initial_poses;
};

struct IntraResult
{
    std::vector<RigidTransform> local_poses;
    /// Indices into SequenceInput::pairs of the pairs with selection > 0.5.
    std::vector<std::size_t> surviving_pairs;
    std::vector<std::size_t> surviving_keypoints;
    /// Input indices of the pairs and keypoints in the solve, aligned with its selections.
    std::vector<std::size_t> pair_ids;
    std::vector<std::size_t> keypoint_ids;
    SolveResult solve;
};

/// Pair between patches of two different fragments, geometry in fragment frames.
struct CrossPair
{
    int fragment_a = 0;
    PlanePatch patch_a;
    int fragment_b = 0;
    PlanePatch patch_b;
    double feature_distance = 0.0;
    double weight = 1.0;
};

struct InterResult
{
    std::vector<RigidTransform> fragment_poses;
    SolveResult solve;
};

namespace detail {

inline SolveResult run_solver(const RegistrationProblem& pb, RegistrationMode mode)
{
    if (mode == RegistrationMode::CoplanarityOnly)
        return solve_coplanarity_only(pb).solve;
    return solve(pb);
}

}  // namespace detail

/**
 * Registers the frames of one fragment using the pairs and keypoints whose
 * endpoints both lie inside it.
 */
inline IntraResult register_intra(const Fragment& fragment, const SequenceInput& input, const PipelineParams& params)
{
    IntraResult r;
    RegistrationProblem pb;
    pb.options = params.solver;
    const auto n = static_cast<std::size_t>(fragment.size());
    pb.poses.assign(n, RigidTransform::identity());
    if (!input.initial_poses.empty()) {
        const RigidTransform origin_inv = input.initial_poses[static_cast<std::size_t>(fragment.start)].inverse();
        for (int k = fragment.start; k <= fragment.end; ++k)
            pb.poses[static_cast<std::size_t>(k - fragment.start)] =
                origin_inv * input.initial_poses[static_cast<std::size_t>(k)];
    }
    std::vector<long> patch_map(input.patches.size(), -1);
    for (std::size_t i = 0; i < input.patches.size(); ++i)
        if (fragment.contains(input.patches[i].frame_id)) {
            patch_map[i] = static_cast<long>(pb.patches.size());
            PlanePatch p = input.patches[i];
            p.frame_id -= fragment.start;
            pb.patches.push_back(std::move(p));
        }
    std::vector<std::size_t>& pair_ids = r.pair_ids;
    std::vector<std::size_t>& kp_ids = r.keypoint_ids;
    if (params.mode != RegistrationMode::KeypointsOnly)
        for (std::size_t k = 0; k < input.pairs.size(); ++k) {
            const auto& pr = input.pairs[k];
            if (patch_map[pr.p] < 0 || patch_map[pr.q] < 0)
                continue;
            CoplanarPair c = pr;
            c.p = static_cast<std::size_t>(patch_map[pr.p]);
            c.q = static_cast<std::size_t>(patch_map[pr.q]);
            pb.pairs.push_back(c);
            pair_ids.push_back(k);
        }
    if (params.mode != RegistrationMode::CoplanarityOnly)
        for (std::size_t k = 0; k < input.keypoints.size(); ++k) {
            const auto& kp = input.keypoints[k];
            if (!fragment.contains(kp.frame_i) || !fragment.contains(kp.frame_j))
                continue;
            KeypointMatch m = kp;
            m.frame_i -= fragment.start;
            m.frame_j -= fragment.start;
            pb.keypoints.push_back(m);
            kp_ids.push_back(k);
        }
    if (pb.pairs.empty() && pb.keypoints.empty()) {
        r.local_poses = pb.poses;
        return r;
    }
    r.solve = detail::run_solver(pb, params.mode);
    r.local_poses = r.solve.poses;
    for (std::size_t k = 0; k < pair_ids.size(); ++k)
        if (r.solve.pair_selections[k] > 0.5)
            r.surviving_pairs.push_back(pair_ids[k]);
    for (std::size_t k = 0; k < kp_ids.size(); ++k)
        if (r.solve.keypoint_selections[k] > 0.5)
            r.surviving_keypoints.push_back(kp_ids[k]);
    return r;
}

/**
 * Registers fragments as rigid bodies. Cross keypoints use fragment ids as
 * frame indices and fragment-frame coordinates. Fragment 0 is pinned; the
 * other fragments start from their current `pose` relative to fragment 0.
 */
inline InterResult register_inter(const std::vector<Fragment>& fragments, std::span<const CrossPair> cross_pairs,
                                  std::span<const KeypointMatch> cross_keypoints, const PipelineParams& params)
{
    if (fragments.empty())
        throw UsageError("no fragments to register");
    InterResult r;
    RegistrationProblem pb;
    pb.options = params.solver;
    const RigidTransform anchor_inv = fragments.front().pose.inverse();
    for (const auto& f : fragments)
        pb.poses.push_back(anchor_inv * f.pose);
    const int nf = static_cast<int>(fragments.size());
    if (params.mode != RegistrationMode::KeypointsOnly)
        for (const auto& c : cross_pairs) {
            if (c.fragment_a < 0 || c.fragment_a >= nf || c.fragment_b < 0 || c.fragment_b >= nf ||
                c.fragment_a == c.fragment_b)
                throw DataError("cross pair references invalid fragments");
            const bool ordered = c.fragment_a < c.fragment_b;
            PlanePatch a = ordered ? c.patch_a : c.patch_b;
            PlanePatch b = ordered ? c.patch_b : c.patch_a;
            a.frame_id = std::min(c.fragment_a, c.fragment_b);
            b.frame_id = std::max(c.fragment_a, c.fragment_b);
            CoplanarPair pr;
            pr.p = pb.patches.size();
            pb.patches.push_back(std::move(a));
            pr.q = pb.patches.size();
            pb.patches.push_back(std::move(b));
            pr.feature_distance = c.feature_distance;
            pr.weight = c.weight;
            pb.pairs.push_back(pr);
        }
    if (params.mode != RegistrationMode::CoplanarityOnly)
        pb.keypoints.assign(cross_keypoints.begin(), cross_keypoints.end());
    if (pb.pairs.empty() && pb.keypoints.empty()) {
        r.fragment_poses = pb.poses;
        return r;
    }
    r.solve = detail::run_solver(pb, params.mode);
    r.fragment_poses = r.solve.poses;
    return r;
}

/// Largest translation and rotation disagreement of overlap frames between consecutive fragments.
struct OverlapDiagnostic
{
    double max_translation = 0.0;
    double max_rotation = 0.0;
};

/**
 * Per-frame global poses: fragment pose composed with local pose. Frames in an
 * overlap take the earlier fragment's composition.
 */
inline std::vector<RigidTransform> compose_trajectory(const std::vector<Fragment>& fragments, int n_frames,
                                                      OverlapDiagnostic* diagnostic = nullptr)
{
    std::vector<std::optional<RigidTransform>> out(static_cast<std::size_t>(n_frames));
    OverlapDiagnostic diag;
    for (const auto& f : fragments) {
        if (static_cast<int>(f.local_poses.size()) != f.size())
            throw DataError("fragment " + std::to_string(f.id) + " has no local poses");
        for (int k = f.start; k <= f.end; ++k) {
            if (k < 0 || k >= n_frames)
                throw DataError("fragment " + std::to_string(f.id) + " exceeds the sequence");
            const RigidTransform g = f.pose * f.local(k);
            auto& slot = out[static_cast<std::size_t>(k)];
            if (slot) {
                const PoseError e = pose_error(*slot, g);
                diag.max_translation = std::max(diag.max_translation, e.translation);
                diag.max_rotation = std::max(diag.max_rotation, e.rotation);
            } else {
                slot = g;
            }
        }
    }
    std::vector<RigidTransform> poses;
    for (int k = 0; k < n_frames; ++k) {
        if (!out[static_cast<std::size_t>(k)])
            throw DataError("frame " + std::to_string(k) + " is not covered by any fragment");
        poses.push_back(*out[static_cast<std::size_t>(k)]);
    }
    if (diagnostic)
        *diagnostic = diag;
    return poses;
}

namespace detail {

/// Patches of one fragment merged by plane agreement, in fragment coordinates.
struct Representatives
{
    std::vector<PlanePatch> patches;
    /// Sequence patch index -> representative index (absent when not in the fragment).
    std::map<std::size_t, std::size_t> of_patch;
};

inline Representatives build_representatives(const Fragment& f, const std::vector<PlanePatch>& patches,
                                             const PipelineParams& params)
{
    Representatives reps;
    const double cos_tol = std::cos(params.dedup_angle_deg * std::numbers::pi / 180.0);
    std::vector<std::vector<Vec3>> members;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (!f.contains(patches[i].frame_id))
            continue;
        const PlanePatch moved = patches[i].transformed(f.local(patches[i].frame_id));
        std::size_t found = reps.patches.size();
        for (std::size_t r = 0; r < reps.patches.size(); ++r) {
            const Plane& pl = reps.patches[r].plane;
            if (pl.normal.dot(moved.plane.normal) >= cos_tol &&
                std::abs(pl.signed_distance(moved.plane.point)) <= params.dedup_offset_m) {
                found = r;
                break;
            }
        }
        if (found == reps.patches.size()) {
            PlanePatch rep = moved;
            rep.id = static_cast<int>(reps.patches.size());
            rep.frame_id = f.id;
            reps.patches.push_back(std::move(rep));
            members.push_back(moved.samples);
        } else {
            members[found].insert(members[found].end(), moved.samples.begin(), moved.samples.end());
            reps.patches[found].area += moved.area;
            reps.patches[found].pixel_count += moved.pixel_count;
        }
        reps.of_patch[i] = found;
    }
    for (std::size_t r = 0; r < reps.patches.size(); ++r) {
        auto& rep = reps.patches[r];
        rep.samples.clear();
        for (const auto k : farthest_point_sample(members[r], static_cast<std::size_t>(params.solver.samples_per_patch)))
            rep.samples.push_back(members[r][k]);
        if (rep.samples.size() >= 3) {
            const Vec3 n_before = rep.plane.normal;
            rep.plane = fit_plane(rep.samples).plane;
            if (rep.plane.normal.dot(n_before) < 0.0)
                rep.plane.normal = -rep.plane.normal;
        }
        Vec3 c = Vec3::Zero();
        for (const auto& s : members[r])
            c += s;
        rep.centroid = c / static_cast<double>(members[r].size());
    }
    return reps;
}

/// Earliest fragment containing `frame`.
inline int owner_fragment(const std::vector<Fragment>& fragments, int frame)
{
    for (const auto& f : fragments)
        if (f.contains(frame))
            return f.id;
    throw DataError("frame " + std::to_string(frame) + " is not covered by any fragment");
}

inline bool share_fragment(const std::vector<Fragment>& fragments, int a, int b)
{
    for (const auto& f : fragments)
        if (f.contains(a) && f.contains(b))
            return true;
    return false;
}

}  // namespace detail

struct CrossCandidates
{
    std::vector<CrossPair> pairs;
    std::vector<KeypointMatch> keypoints;
    /// Fragment pairs whose candidates RANSAC rejected.
    std::vector<std::pair<int, int>> rejected;
};

/**
 * Inter-fragment constraints.
 *
 * Overlap links: every patch of a frame shared by two consecutive fragments is
 * paired with itself across the two fragment frames.
 *
 * Long-range candidates: input pairs and keypoints whose frames share no
 * fragment. Pair endpoints are replaced by their fragment representatives
 * (deduplicated, keeping the smallest feature distance), then all candidates
 * of one fragment pair are verified with RANSAC and only the inliers are kept.
 */
inline CrossCandidates build_cross_candidates(const std::vector<Fragment>& fragments, const SequenceInput& input,
                                              const PipelineParams& params)
{
    CrossCandidates out;
    if (params.link_overlap && params.mode != RegistrationMode::KeypointsOnly)
        for (std::size_t f = 0; f + 1 < fragments.size(); ++f) {
            const Fragment& a = fragments[f];
            const Fragment& b = fragments[f + 1];
            for (const auto& p : input.patches) {
                if (!a.contains(p.frame_id) || !b.contains(p.frame_id))
                    continue;
                CrossPair c;
                c.fragment_a = a.id;
                c.patch_a = p.transformed(a.local(p.frame_id));
                c.fragment_b = b.id;
                c.patch_b = p.transformed(b.local(p.frame_id));
                out.pairs.push_back(std::move(c));
            }
        }

    std::vector<detail::Representatives> reps;
    for (const auto& f : fragments)
        reps.push_back(detail::build_representatives(f, input.patches, params));

    struct Candidate
    {
        std::size_t rep_a, rep_b;
        double distance, weight;
    };
    std::map<std::pair<int, int>, std::map<std::pair<std::size_t, std::size_t>, Candidate>> pair_groups;
    std::map<std::pair<int, int>, std::vector<KeypointMatch>> kp_groups;
    if (params.mode != RegistrationMode::KeypointsOnly)
        for (const auto& pr : input.pairs) {
            const int fa = input.patches[pr.p].frame_id, fb = input.patches[pr.q].frame_id;
            if (detail::share_fragment(fragments, fa, fb))
                continue;
            int ga = detail::owner_fragment(fragments, fa), gb = detail::owner_fragment(fragments, fb);
            std::size_t ra = reps[static_cast<std::size_t>(ga)].of_patch.at(pr.p);
            std::size_t rb = reps[static_cast<std::size_t>(gb)].of_patch.at(pr.q);
            if (ga > gb) {
                std::swap(ga, gb);
                std::swap(ra, rb);
            }
            auto& group = pair_groups[{ga, gb}];
            const auto key = std::make_pair(ra, rb);
            const auto it = group.find(key);
            if (it == group.end() || pr.feature_distance < it->second.distance)
                group[key] = Candidate{ra, rb, pr.feature_distance, pr.weight};
        }
    if (params.mode != RegistrationMode::CoplanarityOnly)
        for (const auto& kp : input.keypoints) {
            if (detail::share_fragment(fragments, kp.frame_i, kp.frame_j))
                continue;
            const int ga = detail::owner_fragment(fragments, kp.frame_i);
            const int gb = detail::owner_fragment(fragments, kp.frame_j);
            KeypointMatch m = kp;
            m.frame_i = ga;
            m.frame_j = gb;
            m.u = fragments[static_cast<std::size_t>(ga)].local(kp.frame_i) * kp.u;
            m.v = fragments[static_cast<std::size_t>(gb)].local(kp.frame_j) * kp.v;
            if (ga > gb) {
                std::swap(m.frame_i, m.frame_j);
                std::swap(m.u, m.v);
            }
            kp_groups[{m.frame_i, m.frame_j}].push_back(m);
        }

    std::set<std::pair<int, int>> keys;
    for (const auto& [k, g] : pair_groups)
        keys.insert(k);
    for (const auto& [k, g] : kp_groups)
        keys.insert(k);
    for (const auto& key : keys) {
        std::vector<Candidate> cands;
        if (const auto it = pair_groups.find(key); it != pair_groups.end())
            for (const auto& [k, c] : it->second)
                cands.push_back(c);
        std::vector<KeypointMatch> kps;
        if (const auto it = kp_groups.find(key); it != kp_groups.end())
            kps = it->second;
        const auto& ra = reps[static_cast<std::size_t>(key.first)].patches;
        const auto& rb = reps[static_cast<std::size_t>(key.second)].patches;
        std::vector<PatchMatch> pm;
        for (const auto& c : cands)
            pm.push_back({ra[c.rep_a], rb[c.rep_b]});
        std::vector<PointMatch> pt;
        for (const auto& k : kps)
            pt.push_back({k.u, k.v});
        RansacParams rp = params.ransac;
        rp.rng_seed = params.ransac.rng_seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(key.first * 65536 + key.second + 1));
        const auto verdict = ransac_verify(pm, pt, rp);
        if (!verdict) {
            out.rejected.push_back(key);
            continue;
        }
        for (const auto i : verdict->patch_inliers) {
            CrossPair c;
            c.fragment_a = key.first;
            c.patch_a = ra[cands[i].rep_a];
            c.fragment_b = key.second;
            c.patch_b = rb[cands[i].rep_b];
            c.feature_distance = cands[i].distance;
            c.weight = cands[i].weight;
            out.pairs.push_back(std::move(c));
        }
        for (const auto i : verdict->point_inliers)
            out.keypoints.push_back(kps[i]);
    }
    return out;
}

struct SequenceResult
{
    std::vector<RigidTransform> poses;
    std::vector<Fragment> fragments;
    std::vector<IntraResult> intra;
    InterResult inter;
    CrossCandidates cross;
    OverlapDiagnostic overlap;
};

/**
 * Full hierarchical registration. Fragments start from the chained overlap
 * estimate: fragment f + 1 is placed so that its first frame coincides with the
 * same frame in fragment f.
 */
inline SequenceResult register_sequence(const SequenceInput& input, const PipelineParams& params)
{
    params.validate();
    if (input.n_frames < 1)
        throw UsageError("sequence needs at least one frame");
    if (!input.initial_poses.empty() && static_cast<int>(input.initial_poses.size()) != input.n_frames)
        throw UsageError("initial pose count does not match the frame count");
    for (const auto& p : input.patches)
        if (p.frame_id < 0 || p.frame_id >= input.n_frames)
            throw DataError("patch references unknown frame " + std::to_string(p.frame_id));

    SequenceResult r;
    r.fragments = partition(input.n_frames, params);
    r.intra.resize(r.fragments.size());
    if (params.threads > 1 && r.fragments.size() > 1) {
        std::vector<std::future<IntraResult>> jobs;
        for (const auto& f : r.fragments)
            jobs.push_back(std::async(std::launch::async, [&input, &params, f] { return register_intra(f, input, params); }));
        for (std::size_t k = 0; k < jobs.size(); ++k)
            r.intra[k] = jobs[k].get();
    } else {
        for (std::size_t k = 0; k < r.fragments.size(); ++k)
            r.intra[k] = register_intra(r.fragments[k], input, params);
    }
    for (std::size_t k = 0; k < r.fragments.size(); ++k)
        r.fragments[k].local_poses = r.intra[k].local_poses;

    if (!input.initial_poses.empty())
        for (auto& f : r.fragments)
            f.pose = input.initial_poses[static_cast<std::size_t>(f.start)];
    else
        for (std::size_t k = 1; k < r.fragments.size(); ++k) {
            const Fragment& prev = r.fragments[k - 1];
            Fragment& cur = r.fragments[k];
            cur.pose = prev.pose * prev.local(cur.start);
        }

    if (r.fragments.size() > 1) {
        r.cross = build_cross_candidates(r.fragments, input, params);
        r.inter = register_inter(r.fragments, r.cross.pairs, r.cross.keypoints, params);
        const RigidTransform anchor = r.fragments.front().pose;
        for (std::size_t k = 0; k < r.fragments.size(); ++k)
            r.fragments[k].pose = anchor * r.inter.fragment_poses[k];
    }
    r.poses = compose_trajectory(r.fragments, input.n_frames, &r.overlap);
    return r;
}

}  // namespace coplanar
