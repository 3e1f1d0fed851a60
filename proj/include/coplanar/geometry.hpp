#pragma once

/**
 * @file geometry.hpp
 * @brief Rigid transforms, planes, planar patches and the distance measures
 *        used by every registration stage.
 */

#include "coplanar/error.hpp"
#include "coplanar/image.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace coplanar {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline Mat3 skew(const Vec3& v)
{
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

/// Rotation matrix of the axis-angle vector `w` (Rodrigues).
inline Mat3 so3_exp(const Vec3& w)
{
    const double theta = w.norm();
    if (theta < 1e-12)
        return Mat3::Identity() + skew(w);
    return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

inline Vec3 so3_log(const Mat3& r)
{
    const Eigen::AngleAxisd aa(r);
    return aa.angle() * aa.axis();
}

/// Angle of a rotation matrix in radians.
inline double rotation_angle(const Mat3& r)
{
    const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

inline bool is_rotation(const Mat3& r, double tol = 1e-9)
{
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(r.determinant() - 1.0) <= tol;
}

/// Rigid motion x -> R x + t.
struct RigidTransform
{
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    RigidTransform() = default;
    RigidTransform(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {}

    static RigidTransform identity() { return {}; }

    /// Builds a transform and validates the rotation.
    static RigidTransform checked(const Mat3& r, const Vec3& t)
    {
        if (!is_rotation(r))
            throw DataError("rotation is not orthonormal with determinant +1");
        return {r, t};
    }

    static RigidTransform from_quaternion(const Eigen::Quaterniond& q, const Vec3& t)
    {
        return {q.normalized().toRotationMatrix(), t};
    }

    /// Rotation exp(w) followed by translation t.
    static RigidTransform from_axis_angle(const Vec3& w, const Vec3& t) { return {so3_exp(w), t}; }

    Vec3 operator*(const Vec3& v) const { return rotation * v + translation; }

    RigidTransform operator*(const RigidTransform& o) const
    {
        return {rotation * o.rotation, rotation * o.translation + translation};
    }

    RigidTransform inverse() const
    {
        const Mat3 rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }

    Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation).normalized(); }

    bool is_valid(double tol = 1e-9) const { return is_rotation(rotation, tol) && translation.allFinite(); }
};

/// Translation distance and rotation angle (radians) between two poses.
struct PoseError
{
    double translation = 0.0;
    double rotation = 0.0;
};

inline PoseError pose_error(const RigidTransform& a, const RigidTransform& b)
{
    const RigidTransform d = a.inverse() * b;
    return {d.translation.norm(), rotation_angle(d.rotation)};
}

/// Infinite plane through `point` with unit `normal`.
struct Plane
{
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();

    Plane() = default;
    Plane(const Vec3& p, const Vec3& n) : point(p), normal(n.normalized()) {}

    double signed_distance(const Vec3& x) const { return (x - point).dot(normal); }
    double offset() const { return normal.dot(point); }

    Plane transformed(const RigidTransform& t) const
    {
        Plane out;
        out.point = t * point;
        out.normal = t.rotation * normal;
        return out;
    }
};

/// Least-squares plane fit and the RMS point-to-plane residual.
struct PlaneFit
{
    Plane plane;
    double rms = 0.0;
};

/// Total-least-squares plane through a point set (at least 3 points).
inline PlaneFit fit_plane(std::span<const Vec3> points)
{
    if (points.size() < 3)
        throw DataError("plane fit needs at least 3 points");
    Vec3 mean = Vec3::Zero();
    for (const auto& p : points)
        mean += p;
    mean /= static_cast<double>(points.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : points) {
        const Vec3 d = p - mean;
        cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    PlaneFit fit;
    fit.plane = Plane(mean, es.eigenvectors().col(0));
    fit.rms = std::sqrt(std::max(0.0, es.eigenvalues()(0)) / static_cast<double>(points.size()));
    return fit;
}

/// A planar segment of one frame. Geometry is stored in camera space.
struct PlanePatch
{
    int id = 0;
    int frame_id = 0;
    Plane plane;
    std::vector<Vec3> samples;
    int pixel_count = 0;
    double area = 0.0;
    Vec3 centroid = Vec3::Zero();
    PixelRect bbox;
    /// Linear pixel indices (y * width + x) of the patch support; may be empty
    /// for analytically generated patches.
    std::vector<int> pixels;

    /// Plane of this patch mapped into the global frame by its frame pose.
    Plane global_plane(const RigidTransform& pose) const { return plane.transformed(pose); }

    /// Copy of the patch with all geometry mapped by `t`.
    PlanePatch transformed(const RigidTransform& t) const
    {
        PlanePatch out = *this;
        out.plane = plane.transformed(t);
        out.centroid = t * centroid;
        for (auto& s : out.samples)
            s = t * s;
        return out;
    }
};

/// Pinhole intrinsics in pixels.
struct Intrinsics
{
    double fx = 525.0;
    double fy = 525.0;
    double cx = 319.5;
    double cy = 239.5;

    bool valid() const { return fx > 0 && fy > 0; }

    Vec3 back_project(double u, double v, double depth) const
    {
        return {(u - cx) * depth / fx, (v - cy) * depth / fy, depth};
    }

    /// Pixel coordinates of a camera-space point in front of the camera.
    Eigen::Vector2d project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }
};

/// One RGB-D frame. Depth is in meters, 0 marks invalid pixels.
struct Frame
{
    int index = 0;
    Image<float> depth;
    Image<Eigen::Vector3f> normals;
    Image<Rgb8> color;
    Intrinsics intrinsics;
    RigidTransform pose;
};

/**
 * Signed distance of T v to plane phi: (R v + t - p) . n.
 */
inline double point_to_plane_distance(const RigidTransform& t, const Vec3& v, const Plane& phi)
{
    return (t.rotation * v + t.translation - phi.point).dot(phi.normal);
}

/**
 * Squared coplanarity distance of patches p (frame pose ti) and q (frame pose tj):
 * mean squared distance of p's samples to q's global plane plus the mean squared
 * distance of q's samples to p's global plane.
 */
inline double coplanarity_distance_squared(const RigidTransform& ti, const RigidTransform& tj,
                                           const PlanePatch& p, const PlanePatch& q)
{
    if (p.samples.empty() || q.samples.empty())
        throw DataError("degenerate patch");
    const Plane phi_p = p.global_plane(ti);
    const Plane phi_q = q.global_plane(tj);
    double sum_p = 0.0;
    for (const auto& v : p.samples) {
        const double d = point_to_plane_distance(ti, v, phi_q);
        sum_p += d * d;
    }
    double sum_q = 0.0;
    for (const auto& v : q.samples) {
        const double d = point_to_plane_distance(tj, v, phi_p);
        sum_q += d * d;
    }
    return sum_p / static_cast<double>(p.samples.size()) + sum_q / static_cast<double>(q.samples.size());
}

inline double coplanarity_distance(const RigidTransform& ti, const RigidTransform& tj, const PlanePatch& p,
                                   const PlanePatch& q)
{
    return std::sqrt(coplanarity_distance_squared(ti, tj, p, q));
}

/**
 * Symmetric RMS nearest-sample distance between p's samples mapped by t_rel and
 * q's samples. Brute force; sample sets are small.
 */
inline double rms_closest_distance(const PlanePatch& p, const PlanePatch& q, const RigidTransform& t_rel)
{
    if (p.samples.empty() || q.samples.empty())
        throw DataError("degenerate patch");
    std::vector<Vec3> moved;
    moved.reserve(p.samples.size());
    for (const auto& v : p.samples)
        moved.push_back(t_rel * v);

    auto nearest_sq = [](const Vec3& x, const std::vector<Vec3>& set) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& y : set)
            best = std::min(best, (x - y).squaredNorm());
        return best;
    };
    double sum = 0.0;
    for (const auto& x : moved)
        sum += nearest_sq(x, q.samples);
    for (const auto& y : q.samples)
        sum += nearest_sq(y, moved);
    return std::sqrt(sum / static_cast<double>(moved.size() + q.samples.size()));
}

/**
 * Least-squares rigid transform mapping `source` onto `target` (Kabsch, no scale).
 * Returns nullopt when fewer than 3 points are given or the points are collinear.
 */
inline std::optional<RigidTransform> fit_rigid(std::span<const Vec3> source, std::span<const Vec3> target)
{
    if (source.size() != target.size() || source.size() < 3)
        return std::nullopt;
    const double n = static_cast<double>(source.size());
    Vec3 ms = Vec3::Zero(), mt = Vec3::Zero();
    for (std::size_t k = 0; k < source.size(); ++k) {
        ms += source[k];
        mt += target[k];
    }
    ms /= n;
    mt /= n;
    Mat3 h = Mat3::Zero();
    for (std::size_t k = 0; k < source.size(); ++k)
        h += (source[k] - ms) * (target[k] - mt).transpose();
    const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    if (!(s(0) > 0.0) || s(1) <= 1e-12 * s(0))
        return std::nullopt;
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
    return RigidTransform(r, mt - r * ms);
}

/**
 * Farthest-point subsampling: starts from the first point and repeatedly adds
 * the point farthest from the chosen set. Returns indices into `points`.
 */
inline std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count)
{
    std::vector<std::size_t> chosen;
    if (points.empty() || count == 0)
        return chosen;
    if (count >= points.size()) {
        for (std::size_t k = 0; k < points.size(); ++k)
            chosen.push_back(k);
        return chosen;
    }
    std::vector<double> dist(points.size(), std::numeric_limits<double>::infinity());
    std::size_t next = 0;
    chosen.reserve(count);
    while (chosen.size() < count) {
        chosen.push_back(next);
        const Vec3 c = points[next];
        double best = -1.0;
        for (std::size_t k = 0; k < points.size(); ++k) {
            dist[k] = std::min(dist[k], (points[k] - c).squaredNorm());
            if (dist[k] > best) {
                best = dist[k];
                next = k;
            }
        }
    }
    return chosen;
}

}  // namespace coplanar
