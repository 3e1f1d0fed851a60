#pragma once

/**
 * @file optimizer.hpp
 * @brief Robust coplanarity + keypoint registration.
 *
 * Minimizes
 *
 *   E(T, s) = sum_pi w_pi s_pi delta^2(T_i, T_j, pi) + sum_pi mu w_pi Psi(s_pi)
 *           + sum_theta s_theta r_theta(T)          + sum_theta mu Psi(s_theta)
 *
 * with Psi(s) = (sqrt(s) - 1)^2 by alternating a Levenberg-Marquardt pose step
 * with the closed-form selection step, while mu is halved between outer loops.
 * Frame 0 is the gauge and is never modified.
 */

#include "coplanar/correspondence.hpp"
#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace coplanar {

struct SolverOptions
{
    double mu_init = 1.0;
    double mu_floor = 0.01;
    double mu_decay = 0.5;
    double rel_tol = 1e-6;
    int max_outer = 50;
    int max_inner = 100;
    /// Levenberg-Marquardt iterations per pose step.
    int lm_iterations = 10;
    /// Run the closed-form selection step at the initial poses before the first
    /// pose step, instead of starting from the proposed selections.
    bool initial_selection_step = true;
    int samples_per_patch = 64;
    bool kp_squared = true;
    // coplanarity-only mode
    double frame_reg_lambda = 0.001;
    double gamma_t = 0.5;
    double mu_axis_init = 0.1;
    int frame_reg_samples = 16;

    void validate() const
    {
        if (!(mu_decay > 0.0 && mu_decay < 1.0))
            throw UsageError("mu_decay must be in (0, 1)");
        if (!(rel_tol > 0.0))
            throw UsageError("rel_tol must be positive");
        if (!(mu_init > 0.0) || !(mu_floor > 0.0) || !(mu_axis_init > 0.0))
            throw UsageError("mu values must be positive");
        if (max_outer < 1 || max_inner < 1 || lm_iterations < 1)
            throw UsageError("iteration limits must be positive");
        if (samples_per_patch < 3)
            throw UsageError("samples_per_patch must be at least 3");
        if (frame_reg_lambda < 0.0 || gamma_t < 0.0 || frame_reg_samples < 1)
            throw UsageError("frame regularization parameters out of range");
    }
};

/// One registration problem: poses are the unknowns, frame 0 is fixed.
struct RegistrationProblem
{
    std::vector<RigidTransform> poses;
    /// Patches in camera space; `frame_id` indexes `poses`.
    std::vector<PlanePatch> patches;
    std::vector<CoplanarPair> pairs;
    std::vector<KeypointMatch> keypoints;
    double mu = 1.0;
    SolverOptions options;

    /// Adds lambda * sum_i sum_v |T_i v - T_{i+1} v|^2 (coplanarity-only mode).
    bool frame_regularization = false;
    /// Sparse camera-space points per frame for the frame regularizer.
    std::vector<std::vector<Vec3>> frame_samples;
    /// Per-pair pruning parameter; empty means every pair uses `mu`.
    std::vector<double> pair_mu;

    std::size_t frame_count() const { return poses.size(); }

    double mu_of_pair(std::size_t k) const { return pair_mu.empty() ? mu : pair_mu[k]; }

    void validate() const
    {
        options.validate();
        if (poses.empty())
            throw UsageError("registration problem needs at least one frame");
        if (!(mu > 0.0))
            throw UsageError("mu must be positive");
        const int n = static_cast<int>(poses.size());
        for (const auto& p : patches) {
            if (p.frame_id < 0 || p.frame_id >= n)
                throw DataError("patch references unknown frame " + std::to_string(p.frame_id));
            if (p.samples.empty())
                throw DataError("degenerate patch");
        }
        for (const auto& pr : pairs) {
            if (pr.p >= patches.size() || pr.q >= patches.size())
                throw DataError("pair references unknown patch");
            if (patches[pr.p].frame_id == patches[pr.q].frame_id)
                throw DataError("coplanar pair within a single frame");
            if (!(pr.weight > 0.0 && pr.weight <= 1.0))
                throw DataError("pair weight must be in (0, 1]");
        }
        for (const auto& kp : keypoints) {
            if (kp.frame_i < 0 || kp.frame_i >= n || kp.frame_j < 0 || kp.frame_j >= n || kp.frame_i == kp.frame_j)
                throw DataError("keypoint match references invalid frames");
            if (!kp.u.allFinite() || !kp.v.allFinite())
                throw DataError("keypoint coordinates must be finite");
        }
        if (!pair_mu.empty() && pair_mu.size() != pairs.size())
            throw UsageError("pair_mu size does not match pairs");
    }
};

/// Selection penalty (sqrt(s) - 1)^2, extended by 1 below 0 and clamped above 1.
inline double selection_penalty(double s)
{
    if (s < 0.0)
        return 1.0;
    const double r = std::sqrt(std::min(s, 1.0)) - 1.0;
    return r * r;
}

/// Minimizer over s in [0, 1] of s * rho + mu * Psi(s): (mu / (mu + rho))^2.
inline double optimal_selection(double mu, double rho)
{
    const double s = mu / (mu + std::max(rho, 0.0));
    return std::clamp(s * s, 0.0, 1.0);
}

/// Per-term breakdown of the objective.
struct ObjectiveTerms
{
    double data_cop = 0.0;
    double reg_cop = 0.0;
    double data_kp = 0.0;
    double reg_kp = 0.0;
    double reg_frm = 0.0;

    double total() const { return data_cop + reg_cop + data_kp + reg_kp + reg_frm; }
};

namespace detail {

inline double keypoint_residual(const RegistrationProblem& pb, const KeypointMatch& kp,
                                std::span<const RigidTransform> poses)
{
    const Vec3 e = poses[static_cast<std::size_t>(kp.frame_i)] * kp.u - poses[static_cast<std::size_t>(kp.frame_j)] * kp.v;
    return pb.options.kp_squared ? e.squaredNorm() : e.norm();
}

inline double pair_delta_squared(const RegistrationProblem& pb, const CoplanarPair& pr,
                                 std::span<const RigidTransform> poses)
{
    const PlanePatch& p = pb.patches[pr.p];
    const PlanePatch& q = pb.patches[pr.q];
    return coplanarity_distance_squared(poses[static_cast<std::size_t>(p.frame_id)],
                                        poses[static_cast<std::size_t>(q.frame_id)], p, q);
}

inline double frame_reg_energy(const RegistrationProblem& pb, std::span<const RigidTransform> poses)
{
    if (!pb.frame_regularization || pb.options.frame_reg_lambda == 0.0)
        return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < poses.size() && i < pb.frame_samples.size(); ++i)
        for (const auto& v : pb.frame_samples[i])
            sum += (poses[i] * v - poses[i + 1] * v).squaredNorm();
    return pb.options.frame_reg_lambda * sum;
}

/// Pose-dependent part of the objective with selections fixed.
inline double pose_energy(const RegistrationProblem& pb, std::span<const RigidTransform> poses)
{
    double e = 0.0;
    for (const auto& pr : pb.pairs)
        if (pr.selection > 0.0)
            e += pr.weight * pr.selection * pair_delta_squared(pb, pr, poses);
    for (const auto& kp : pb.keypoints)
        if (kp.selection > 0.0)
            e += kp.selection * keypoint_residual(pb, kp, poses);
    return e + frame_reg_energy(pb, poses);
}

}  // namespace detail

inline ObjectiveTerms objective_value(const RegistrationProblem& problem)
{
    ObjectiveTerms t;
    for (std::size_t k = 0; k < problem.pairs.size(); ++k) {
        const auto& pr = problem.pairs[k];
        t.data_cop += pr.weight * pr.selection * detail::pair_delta_squared(problem, pr, problem.poses);
        t.reg_cop += problem.mu_of_pair(k) * pr.weight * selection_penalty(pr.selection);
    }
    for (const auto& kp : problem.keypoints) {
        t.data_kp += kp.selection * detail::keypoint_residual(problem, kp, problem.poses);
        t.reg_kp += problem.mu * selection_penalty(kp.selection);
    }
    t.reg_frm = detail::frame_reg_energy(problem, problem.poses);
    return t;
}

struct Selections
{
    std::vector<double> pairs;
    std::vector<double> keypoints;
};

/// Closed-form selection step for fixed poses. The pair weight cancels.
inline Selections update_selections(const RegistrationProblem& problem)
{
    Selections s;
    s.pairs.reserve(problem.pairs.size());
    for (std::size_t k = 0; k < problem.pairs.size(); ++k)
        s.pairs.push_back(optimal_selection(problem.mu_of_pair(k),
                                            detail::pair_delta_squared(problem, problem.pairs[k], problem.poses)));
    s.keypoints.reserve(problem.keypoints.size());
    for (const auto& kp : problem.keypoints)
        s.keypoints.push_back(optimal_selection(problem.mu, detail::keypoint_residual(problem, kp, problem.poses)));
    return s;
}

inline void apply_selections(RegistrationProblem& problem, const Selections& s)
{
    for (std::size_t k = 0; k < problem.pairs.size(); ++k)
        problem.pairs[k].selection = s.pairs[k];
    for (std::size_t k = 0; k < problem.keypoints.size(); ++k)
        problem.keypoints[k].selection = s.keypoints[k];
}

/// Raised when a pose step produces a non-finite iterate; carries the last finite poses.
class SolverDivergence : public SolverError
{
public:
    SolverDivergence(const std::string& what, std::vector<RigidTransform> last)
        : SolverError(what), last_iterate(std::move(last))
    {
    }
    std::vector<RigidTransform> last_iterate;
};

namespace detail {

/// Gauss-Newton normal equations over frames 1..n-1, 6 parameters each
/// (left rotation increment, then translation increment).
class NormalEquations
{
public:
    explicit NormalEquations(std::size_t frames)
        : dim_(6 * (frames > 0 ? frames - 1 : 0)), h_(Eigen::MatrixXd::Zero(dim_, dim_)), g_(Eigen::VectorXd::Zero(dim_))
    {
    }

    Eigen::Index dim() const { return dim_; }
    const Eigen::MatrixXd& hessian() const { return h_; }
    const Eigen::VectorXd& gradient() const { return g_; }

    /// Scalar residual r depending on frames fi and fj with row Jacobians ji, jj.
    void add_scalar(double r, int fi, const Vec6& ji, int fj, const Vec6& jj)
    {
        add_block(fi, ji, fi, ji);
        add_block(fj, jj, fj, jj);
        add_block(fi, ji, fj, jj);
        add_block(fj, jj, fi, ji);
        add_grad(fi, ji * r);
        add_grad(fj, jj * r);
    }

    /// 3-vector residual e with 3x6 Jacobians.
    void add_vector(const Vec3& e, int fi, const Eigen::Matrix<double, 3, 6>& ji, int fj,
                    const Eigen::Matrix<double, 3, 6>& jj)
    {
        if (fi > 0) {
            h_.block<6, 6>(6 * (fi - 1), 6 * (fi - 1)) += ji.transpose() * ji;
            g_.segment<6>(6 * (fi - 1)) += ji.transpose() * e;
        }
        if (fj > 0) {
            h_.block<6, 6>(6 * (fj - 1), 6 * (fj - 1)) += jj.transpose() * jj;
            g_.segment<6>(6 * (fj - 1)) += jj.transpose() * e;
        }
        if (fi > 0 && fj > 0) {
            h_.block<6, 6>(6 * (fi - 1), 6 * (fj - 1)) += ji.transpose() * jj;
            h_.block<6, 6>(6 * (fj - 1), 6 * (fi - 1)) += jj.transpose() * ji;
        }
    }

    /// Adds a pre-accumulated 12x12 block (J^T J over rows touching frames fi, fj) and 12-gradient.
    void add_pair_block(int fi, int fj, const Eigen::Matrix<double, 12, 12>& jtj, const Eigen::Matrix<double, 12, 1>& jtr)
    {
        const int f[2] = {fi, fj};
        for (int a = 0; a < 2; ++a) {
            if (f[a] <= 0)
                continue;
            g_.segment<6>(6 * (f[a] - 1)) += jtr.segment<6>(6 * a);
            for (int b = 0; b < 2; ++b)
                if (f[b] > 0)
                    h_.block<6, 6>(6 * (f[a] - 1), 6 * (f[b] - 1)) += jtj.block<6, 6>(6 * a, 6 * b);
        }
    }

private:
    void add_block(int fa, const Vec6& ja, int fb, const Vec6& jb)
    {
        if (fa > 0 && fb > 0)
            h_.block<6, 6>(6 * (fa - 1), 6 * (fb - 1)) += ja * jb.transpose();
    }
    void add_grad(int f, const Vec6& v)
    {
        if (f > 0)
            g_.segment<6>(6 * (f - 1)) += v;
    }

    Eigen::Index dim_;
    Eigen::MatrixXd h_;
    Eigen::VectorXd g_;
};

/**
 * Residuals of one direction of a coplanar pair: samples of `src` (frame fi)
 * against the global plane of `dst` (frame fj), scaled by sqrt(scale).
 * Jacobian rows are appended to the 12x12 accumulator (frame fi first).
 */
inline void accumulate_half_pair(const PlanePatch& src, const RigidTransform& ti, const PlanePatch& dst,
                                 const RigidTransform& tj, double scale, bool src_first,
                                 Eigen::Matrix<double, 12, 12>& jtj, Eigen::Matrix<double, 12, 1>& jtr)
{
    const Vec3 c = tj.rotation * dst.plane.point;
    const Vec3 n = tj.rotation * dst.plane.normal;
    const Vec3 anchor = c + tj.translation;
    const double a = std::sqrt(scale);
    const Vec3 cxn = c.cross(n);
    for (const auto& v : src.samples) {
        const Vec3 rv = ti.rotation * v;
        const Vec3 x = rv + ti.translation;
        const Vec3 diff = x - anchor;
        const double r = a * diff.dot(n);
        Vec6 js, jd;
        js << a * rv.cross(n), a * n;
        jd << a * (n.cross(diff) - cxn), -a * n;
        Eigen::Matrix<double, 12, 1> row;
        if (src_first)
            row << js, jd;
        else
            row << jd, js;
        jtj.selfadjointView<Eigen::Upper>().rankUpdate(row);
        jtr += row * r;
    }
}

/// Sample count, mean and scatter about the mean of a patch's samples.
struct SampleMoments
{
    double count = 0.0;
    Vec3 mean = Vec3::Zero();
    Mat3 scatter = Mat3::Zero();
};

inline SampleMoments sample_moments(const PlanePatch& patch)
{
    SampleMoments m;
    m.count = static_cast<double>(patch.samples.size());
    for (const auto& v : patch.samples)
        m.mean += v;
    m.mean /= std::max(m.count, 1.0);
    for (const auto& v : patch.samples)
        m.scatter += (v - m.mean) * (v - m.mean).transpose();
    return m;
}

inline std::vector<SampleMoments> all_sample_moments(const RegistrationProblem& pb)
{
    std::vector<SampleMoments> out;
    out.reserve(pb.patches.size());
    for (const auto& p : pb.patches)
        out.push_back(sample_moments(p));
    return out;
}

/// Sum of squared distances of src's samples (pose ti) to dst's global plane (pose tj).
inline double half_pair_sum_squared(const SampleMoments& src, const RigidTransform& ti, const PlanePatch& dst,
                                    const RigidTransform& tj)
{
    const Vec3 n = tj.rotation * dst.plane.normal;
    const Vec3 anchor = tj * dst.plane.point;
    const double b = (ti * src.mean - anchor).dot(n);
    const Vec3 g = ti.rotation.transpose() * n;
    return g.dot(src.scatter * g) + src.count * b * b;
}

/// Same accumulation as accumulate_half_pair(), evaluated from the sample moments:
/// every row is affine in the centered rotated sample, so the sums over samples
/// reduce to the mean row and the rotated scatter.
inline void accumulate_half_pair_moments(const SampleMoments& src, const RigidTransform& ti, const PlanePatch& dst,
                                         const RigidTransform& tj, double scale, bool src_first,
                                         Eigen::Matrix<double, 12, 12>& jtj, Eigen::Matrix<double, 12, 1>& jtr)
{
    const Vec3 c = tj.rotation * dst.plane.point;
    const Vec3 n = tj.rotation * dst.plane.normal;
    const Vec3 anchor = c + tj.translation;
    const double a = std::sqrt(scale);
    const Vec3 rm = ti.rotation * src.mean;
    const Vec3 diff = rm + ti.translation - anchor;
    const double r0 = a * diff.dot(n);
    Vec6 js, jd;
    js << a * rm.cross(n), a * n;
    jd << a * (n.cross(diff) - c.cross(n)), -a * n;
    Eigen::Matrix<double, 12, 1> row0;
    Eigen::Matrix<double, 12, 3> b = Eigen::Matrix<double, 12, 3>::Zero();
    const int s_off = src_first ? 0 : 6;
    const int d_off = src_first ? 6 : 0;
    row0.segment<6>(s_off) = js;
    row0.segment<6>(d_off) = jd;
    b.block<3, 3>(s_off, 0) = -a * skew(n);
    b.block<3, 3>(d_off, 0) = a * skew(n);
    const Mat3 scatter = ti.rotation * src.scatter * ti.rotation.transpose();
    jtj.noalias() += src.count * row0 * row0.transpose() + b * scatter * b.transpose();
    jtr.noalias() += src.count * row0 * r0 + b * (scatter * (a * n));
}

inline double pair_delta_squared(const RegistrationProblem& pb, const std::vector<SampleMoments>& moments,
                                 const CoplanarPair& pr, std::span<const RigidTransform> poses)
{
    const PlanePatch& p = pb.patches[pr.p];
    const PlanePatch& q = pb.patches[pr.q];
    const auto& ti = poses[static_cast<std::size_t>(p.frame_id)];
    const auto& tj = poses[static_cast<std::size_t>(q.frame_id)];
    const SampleMoments& mp = moments[pr.p];
    const SampleMoments& mq = moments[pr.q];
    return half_pair_sum_squared(mp, ti, q, tj) / mp.count + half_pair_sum_squared(mq, tj, p, ti) / mq.count;
}

/// pose_energy() with the coplanar terms evaluated from sample moments.
inline double pose_energy(const RegistrationProblem& pb, const std::vector<SampleMoments>& moments,
                          std::span<const RigidTransform> poses)
{
    double e = 0.0;
    for (const auto& pr : pb.pairs)
        if (pr.selection > 0.0)
            e += pr.weight * pr.selection * pair_delta_squared(pb, moments, pr, poses);
    for (const auto& kp : pb.keypoints)
        if (kp.selection > 0.0)
            e += kp.selection * keypoint_residual(pb, kp, poses);
    return e + frame_reg_energy(pb, poses);
}

inline void linearize(const RegistrationProblem& pb, const std::vector<SampleMoments>& moments,
                      std::span<const RigidTransform> poses, const std::vector<double>& kp_irls,
                      NormalEquations& ne)
{
    for (const auto& pr : pb.pairs) {
        if (!(pr.selection > 0.0))
            continue;
        const PlanePatch& p = pb.patches[pr.p];
        const PlanePatch& q = pb.patches[pr.q];
        const int fi = p.frame_id;
        const int fj = q.frame_id;
        if (fi == 0 && fj == 0)
            continue;
        const auto& ti = poses[static_cast<std::size_t>(fi)];
        const auto& tj = poses[static_cast<std::size_t>(fj)];
        const double ws = pr.weight * pr.selection;
        Eigen::Matrix<double, 12, 12> jtj = Eigen::Matrix<double, 12, 12>::Zero();
        Eigen::Matrix<double, 12, 1> jtr = Eigen::Matrix<double, 12, 1>::Zero();
        const SampleMoments& mp = moments[pr.p];
        const SampleMoments& mq = moments[pr.q];
        accumulate_half_pair_moments(mp, ti, q, tj, ws / mp.count, true, jtj, jtr);
        accumulate_half_pair_moments(mq, tj, p, ti, ws / mq.count, false, jtj, jtr);
        ne.add_pair_block(fi, fj, jtj, jtr);
    }
    for (std::size_t k = 0; k < pb.keypoints.size(); ++k) {
        const auto& kp = pb.keypoints[k];
        if (!(kp.selection > 0.0))
            continue;
        const auto& ti = poses[static_cast<std::size_t>(kp.frame_i)];
        const auto& tj = poses[static_cast<std::size_t>(kp.frame_j)];
        const double a = std::sqrt(kp.selection * kp_irls[k]);
        const Vec3 ru = ti.rotation * kp.u;
        const Vec3 rv = tj.rotation * kp.v;
        const Vec3 e = a * (ru + ti.translation - rv - tj.translation);
        Eigen::Matrix<double, 3, 6> ji, jj;
        ji << -a * skew(ru), a * Mat3::Identity();
        jj << a * skew(rv), -a * Mat3::Identity();
        ne.add_vector(e, kp.frame_i, ji, kp.frame_j, jj);
    }
    if (pb.frame_regularization && pb.options.frame_reg_lambda > 0.0) {
        const double a = std::sqrt(pb.options.frame_reg_lambda);
        for (std::size_t i = 0; i + 1 < poses.size() && i < pb.frame_samples.size(); ++i)
            for (const auto& v : pb.frame_samples[i]) {
                const Vec3 ri = poses[i].rotation * v;
                const Vec3 rj = poses[i + 1].rotation * v;
                const Vec3 e = a * (ri + poses[i].translation - rj - poses[i + 1].translation);
                Eigen::Matrix<double, 3, 6> ji, jj;
                ji << -a * skew(ri), a * Mat3::Identity();
                jj << a * skew(rj), -a * Mat3::Identity();
                ne.add_vector(e, static_cast<int>(i), ji, static_cast<int>(i + 1), jj);
            }
    }
}

inline std::vector<RigidTransform> retract(std::span<const RigidTransform> poses, const Eigen::VectorXd& dx)
{
    std::vector<RigidTransform> out(poses.begin(), poses.end());
    for (std::size_t f = 1; f < out.size(); ++f) {
        const Eigen::Index o = static_cast<Eigen::Index>(6 * (f - 1));
        const Vec3 w = dx.segment<3>(o);
        out[f].rotation = so3_exp(w) * out[f].rotation;
        out[f].translation += dx.segment<3>(o + 3);
    }
    return out;
}

}  // namespace detail

/**
 * Levenberg-Marquardt on the selection-weighted data terms with selections fixed.
 * Steps are accepted only when the energy does not increase.
 */
inline std::vector<RigidTransform> update_poses(const RegistrationProblem& problem)
{
    std::vector<RigidTransform> poses = problem.poses;
    if (poses.size() < 2)
        return poses;
    const std::vector<detail::SampleMoments> moments = detail::all_sample_moments(problem);
    double energy = detail::pose_energy(problem, moments, poses);
    double lambda = 1e-4;
    for (int it = 0; it < problem.options.lm_iterations; ++it) {
        std::vector<double> irls(problem.keypoints.size(), 1.0);
        if (!problem.options.kp_squared)
            for (std::size_t k = 0; k < irls.size(); ++k) {
                const auto& kp = problem.keypoints[k];
                const Vec3 e = poses[static_cast<std::size_t>(kp.frame_i)] * kp.u -
                               poses[static_cast<std::size_t>(kp.frame_j)] * kp.v;
                irls[k] = 1.0 / std::max(e.norm(), 1e-9);
            }
        detail::NormalEquations ne(poses.size());
        detail::linearize(problem, moments, poses, irls, ne);
        const Eigen::MatrixXd& h = ne.hessian();
        const Eigen::VectorXd& g = ne.gradient();
        if (g.norm() == 0.0)
            break;
        const double diag_floor = 1e-9 * std::max(h.diagonal().maxCoeff(), 1e-12);
        bool accepted = false;
        Eigen::VectorXd dx;
        for (int attempt = 0; attempt < 12; ++attempt) {
            Eigen::MatrixXd a = h;
            for (Eigen::Index k = 0; k < a.rows(); ++k)
                a(k, k) += lambda * std::max(h(k, k), diag_floor);
            dx = -a.ldlt().solve(g);
            if (!dx.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            std::vector<RigidTransform> cand = detail::retract(poses, dx);
            const double e = detail::pose_energy(problem, moments, cand);
            if (std::isfinite(e) && e <= energy) {
                const double decrease = energy - e;
                poses = std::move(cand);
                energy = e;
                lambda = std::max(lambda * 0.1, 1e-12);
                accepted = true;
                if (decrease <= 1e-15 * std::max(energy, 1e-300) || dx.norm() < 1e-13)
                    it = problem.options.lm_iterations;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted)
            break;
    }
    for (const auto& p : poses)
        if (!p.rotation.allFinite() || !p.translation.allFinite())
            throw SolverDivergence("pose update produced a non-finite iterate", problem.poses);
    return poses;
}

/// One alternation step of the solver.
struct TraceRow
{
    int outer = 0;
    int inner = 0;
    double mu = 0.0;
    ObjectiveTerms terms;
    /// Objective after the pose step, before the selection step.
    double energy_before_selection = 0.0;
    int selected_cop = 0;
    int selected_kp = 0;
};

struct SolveResult
{
    std::vector<RigidTransform> poses;
    std::vector<double> pair_selections;
    std::vector<double> keypoint_selections;
    std::vector<TraceRow> trace;
    /// Pair selections at the end of every outer loop.
    std::vector<std::vector<double>> outer_selections;
    int outer_iterations = 0;
};

namespace detail {

inline double relative_change(double before, double after)
{
    return std::abs(after - before) / std::max(std::abs(before), 1.0);
}

inline double max_relative_change(const std::vector<RigidTransform>& before, const std::vector<RigidTransform>& after,
                                  const Selections& s_before, const Selections& s_after)
{
    double m = 0.0;
    for (std::size_t f = 0; f < before.size(); ++f) {
        m = std::max(m, rotation_angle(before[f].rotation.transpose() * after[f].rotation));
        for (int k = 0; k < 3; ++k)
            m = std::max(m, relative_change(before[f].translation(k), after[f].translation(k)));
    }
    for (std::size_t k = 0; k < s_before.pairs.size(); ++k)
        m = std::max(m, relative_change(s_before.pairs[k], s_after.pairs[k]));
    for (std::size_t k = 0; k < s_before.keypoints.size(); ++k)
        m = std::max(m, relative_change(s_before.keypoints[k], s_after.keypoints[k]));
    return m;
}

inline Selections current_selections(const RegistrationProblem& pb)
{
    Selections s;
    for (const auto& p : pb.pairs)
        s.pairs.push_back(p.selection);
    for (const auto& k : pb.keypoints)
        s.keypoints.push_back(k.selection);
    return s;
}

inline TraceRow make_trace_row(const RegistrationProblem& pb, int outer, int inner, double e_before)
{
    TraceRow row;
    row.outer = outer;
    row.inner = inner;
    row.mu = pb.mu;
    row.terms = objective_value(pb);
    row.energy_before_selection = e_before;
    for (const auto& p : pb.pairs)
        row.selected_cop += p.selection > 0.5 ? 1 : 0;
    for (const auto& k : pb.keypoints)
        row.selected_kp += k.selection > 0.5 ? 1 : 0;
    return row;
}

/// Alternates pose and selection steps at the current mu until every unknown
/// changes by less than rel_tol (relative, with unit floor).
inline void alternate_to_convergence(RegistrationProblem& pb, int outer, std::vector<TraceRow>& trace)
{
    for (int inner = 0; inner < pb.options.max_inner; ++inner) {
        const std::vector<RigidTransform> poses_before = pb.poses;
        const Selections s_before = current_selections(pb);
        pb.poses = update_poses(pb);
        const double e_before = objective_value(pb).total();
        const Selections s_after = update_selections(pb);
        apply_selections(pb, s_after);
        trace.push_back(make_trace_row(pb, outer, inner, e_before));
        if (max_relative_change(poses_before, pb.poses, s_before, s_after) < pb.options.rel_tol)
            break;
    }
}

inline SolveResult collect(const RegistrationProblem& pb)
{
    SolveResult r;
    r.poses = pb.poses;
    for (const auto& p : pb.pairs)
        r.pair_selections.push_back(p.selection);
    for (const auto& k : pb.keypoints)
        r.keypoint_selections.push_back(k.selection);
    return r;
}

}  // namespace detail

/**
 * Full robust solve with the global mu schedule: alternate to convergence, then
 * mu <- mu * mu_decay, until mu drops below mu_floor or max_outer loops ran.
 */
inline SolveResult solve(RegistrationProblem problem)
{
    problem.validate();
    problem.mu = problem.options.mu_init;
    if (problem.options.initial_selection_step)
        apply_selections(problem, update_selections(problem));
    std::vector<TraceRow> trace;
    std::vector<std::vector<double>> outer_sel;
    int outer = 0;
    for (; outer < problem.options.max_outer; ++outer) {
        detail::alternate_to_convergence(problem, outer, trace);
        outer_sel.push_back(detail::current_selections(problem).pairs);
        problem.mu *= problem.options.mu_decay;
        if (problem.mu < problem.options.mu_floor)
        {
            ++outer;
            break;
        }
    }
    SolveResult r = detail::collect(problem);
    r.trace = std::move(trace);
    r.outer_selections = std::move(outer_sel);
    r.outer_iterations = outer;
    return r;
}

enum class Axis : int { X = 0, Y = 1, Z = 2 };

/// Per-frame constraint covariance and translational stability values.
struct StabilityReport
{
    std::vector<Mat6> covariance;
    std::vector<Vec6> eigenvalues;
    std::vector<Mat6> eigenvectors;
    /// gamma[i][d]: eigenvalue whose eigenvector's translation part is closest to axis d.
    std::vector<std::array<double, 3>> gamma;
    /// Per frame and axis pruning parameter (coplanarity-only mode).
    std::vector<std::array<double, 3>> mu;

    double max_gamma() const
    {
        double m = 0.0;
        for (const auto& g : gamma)
            for (double v : g)
                m = std::max(m, v);
        return m;
    }
};

/// Global axis closest to a direction.
inline int closest_axis(const Vec3& n)
{
    int best = 0;
    n.cwiseAbs().maxCoeff(&best);
    return best;
}

/**
 * Accumulates C_i = sum h h^T over the samples of every selected pair (s > 0.5)
 * touching frame i, with h = [(R_i v) x n ; n] and n the partner patch's global
 * normal, then reads off one eigenvalue per translation axis.
 */
inline StabilityReport estimate_stability(const RegistrationProblem& problem)
{
    const std::size_t n = problem.poses.size();
    StabilityReport rep;
    rep.covariance.assign(n, Mat6::Zero());
    rep.eigenvalues.assign(n, Vec6::Zero());
    rep.eigenvectors.assign(n, Mat6::Identity());
    rep.gamma.assign(n, {0.0, 0.0, 0.0});
    rep.mu.assign(n, {0.0, 0.0, 0.0});
    std::vector<bool> touched(n, false);

    auto accumulate = [&](const PlanePatch& src, const PlanePatch& dst) {
        const auto fi = static_cast<std::size_t>(src.frame_id);
        const auto& ti = problem.poses[fi];
        const Vec3 normal = problem.poses[static_cast<std::size_t>(dst.frame_id)].rotation * dst.plane.normal;
        for (const auto& v : src.samples) {
            Vec6 h;
            h << (ti.rotation * v).cross(normal), normal;
            rep.covariance[fi] += h * h.transpose();
        }
        touched[fi] = true;
    };
    for (const auto& pr : problem.pairs) {
        if (!(pr.selection > 0.5))
            continue;
        accumulate(problem.patches[pr.p], problem.patches[pr.q]);
        accumulate(problem.patches[pr.q], problem.patches[pr.p]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!touched[i])
            continue;
        const Eigen::SelfAdjointEigenSolver<Mat6> es(rep.covariance[i]);
        rep.eigenvalues[i] = es.eigenvalues().cwiseMax(0.0);
        rep.eigenvectors[i] = es.eigenvectors();
        for (int d = 0; d < 3; ++d) {
            int best = 0;
            double best_score = -1.0;
            for (int k = 0; k < 6; ++k) {
                const double score = std::abs(es.eigenvectors()(3 + d, k));
                if (score > best_score) {
                    best_score = score;
                    best = k;
                }
            }
            rep.gamma[i][static_cast<std::size_t>(d)] = rep.eigenvalues[i](best);
        }
    }
    return rep;
}

/// Sparse per-frame points for the frame regularizer, drawn from the frame's patches.
inline std::vector<std::vector<Vec3>> frame_regularization_samples(const RegistrationProblem& problem)
{
    std::vector<std::vector<Vec3>> pts(problem.poses.size());
    for (const auto& p : problem.patches)
        pts[static_cast<std::size_t>(p.frame_id)].insert(pts[static_cast<std::size_t>(p.frame_id)].end(),
                                                         p.samples.begin(), p.samples.end());
    std::vector<std::vector<Vec3>> out(pts.size());
    for (std::size_t f = 0; f < pts.size(); ++f)
        for (const auto k : farthest_point_sample(pts[f], static_cast<std::size_t>(problem.options.frame_reg_samples)))
            out[f].push_back(pts[f][k]);
    return out;
}

/// Result of the coplanarity-only solver.
struct CoplanarityOnlyResult
{
    SolveResult solve;
    StabilityReport stability;
};

/**
 * Coplanarity-only registration with frame regularization and stability-driven
 * anisotropic pruning. Keypoints are ignored. Per frame and axis, mu starts at
 * mu_axis_init and is multiplied by mu_decay after each outer loop while the
 * axis is stable (gamma > gamma_t) and mu has not yet dropped below mu_floor.
 * A pair uses the smaller of its endpoints' values on the axis closest to each
 * patch normal. Stops when every gamma is below gamma_t, when no mu changed, or
 * after max_outer loops.
 */
inline CoplanarityOnlyResult solve_coplanarity_only(RegistrationProblem problem)
{
    problem.keypoints.clear();
    problem.frame_regularization = true;
    problem.validate();
    if (problem.frame_samples.empty())
        problem.frame_samples = frame_regularization_samples(problem);
    const std::size_t n = problem.poses.size();
    const SolverOptions& opt = problem.options;
    std::vector<std::array<double, 3>> mu_axis(n, {opt.mu_axis_init, opt.mu_axis_init, opt.mu_axis_init});

    std::vector<TraceRow> trace;
    std::vector<std::vector<double>> outer_sel;
    StabilityReport stab;
    int outer = 0;
    while (outer < opt.max_outer) {
        problem.pair_mu.assign(problem.pairs.size(), 0.0);
        double mu_min = opt.mu_axis_init;
        for (std::size_t k = 0; k < problem.pairs.size(); ++k) {
            const PlanePatch& p = problem.patches[problem.pairs[k].p];
            const PlanePatch& q = problem.patches[problem.pairs[k].q];
            const auto fi = static_cast<std::size_t>(p.frame_id);
            const auto fj = static_cast<std::size_t>(q.frame_id);
            const int dp = closest_axis(problem.poses[fi].rotation * p.plane.normal);
            const int dq = closest_axis(problem.poses[fj].rotation * q.plane.normal);
            problem.pair_mu[k] = std::min(mu_axis[fi][static_cast<std::size_t>(dp)], mu_axis[fj][static_cast<std::size_t>(dq)]);
            mu_min = std::min(mu_min, problem.pair_mu[k]);
        }
        problem.mu = mu_min;
        if (outer == 0 && opt.initial_selection_step)
            apply_selections(problem, update_selections(problem));
        detail::alternate_to_convergence(problem, outer, trace);
        outer_sel.push_back(detail::current_selections(problem).pairs);
        ++outer;

        stab = estimate_stability(problem);
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < 3; ++d)
                if (stab.gamma[i][d] > opt.gamma_t && mu_axis[i][d] >= opt.mu_floor) {
                    mu_axis[i][d] *= opt.mu_decay;
                    changed = true;
                }
        stab.mu = mu_axis;
        if (stab.max_gamma() < opt.gamma_t || !changed)
            break;
    }
    CoplanarityOnlyResult r;
    r.solve = detail::collect(problem);
    r.solve.trace = std::move(trace);
    r.solve.outer_selections = std::move(outer_sel);
    r.solve.outer_iterations = outer;
    r.stability = std::move(stab);
    return r;
}

}  // namespace coplanar
