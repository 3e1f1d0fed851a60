#pragma once

#include "coplanar/optimizer.hpp"
#include "coplanar/synth.hpp"

#include <numbers>
#include <random>

namespace coplanar::testing {

/// Square grid patch on `plane` (world space) expressed in the camera frame of `pose`.
inline PlanePatch observe_grid(const Plane& plane, const RigidTransform& pose, int frame, int id, int n = 8,
                               double extent = 1.0, const Vec3& offset = Vec3::Zero())
{
    const Vec3 u = plane.normal.unitOrthogonal();
    const Vec3 v = plane.normal.cross(u);
    const RigidTransform inv = pose.inverse();
    PlanePatch p;
    p.id = id;
    p.frame_id = frame;
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            p.samples.push_back(inv * (plane.point + offset + extent * ((a + 0.5) / n - 0.5) * u +
                                       extent * ((b + 0.5) / n - 0.5) * v));
    p.plane = fit_plane(p.samples).plane;
    // extracted patches have normals facing the camera
    if (p.plane.normal.dot(p.plane.point) > 0.0)
        p.plane = Plane(p.plane.point, -p.plane.normal);
    p.centroid = p.plane.point;
    p.area = extent * extent;
    p.pixel_count = n * n;
    return p;
}

inline std::vector<Plane> orthogonal_planes()
{
    return {Plane(Vec3(0, 0, 2), Vec3::UnitZ()), Plane(Vec3(1, 0, 2), Vec3::UnitX()),
            Plane(Vec3(0, 1, 2), Vec3::UnitY())};
}

/// Ground truth of the 10 cm / 10 degree two-frame construction.
inline RigidTransform perturbation_10cm_10deg()
{
    const Vec3 axis = Vec3(1, 2, 3).normalized();
    const Vec3 t = Vec3(1, -1, 1).normalized() * 0.1;
    return RigidTransform::from_axis_angle(axis * (10.0 * std::numbers::pi / 180.0), t);
}

/// Two frames observing three orthogonal planes; frame 1 at `gt`, initialized at identity.
inline RegistrationProblem two_frame_three_planes(const RigidTransform& gt)
{
    RegistrationProblem pb;
    pb.poses = {RigidTransform::identity(), RigidTransform::identity()};
    int id = 0;
    for (const auto& pl : orthogonal_planes()) {
        pb.patches.push_back(observe_grid(pl, RigidTransform::identity(), 0, id));
        pb.patches.push_back(observe_grid(pl, gt, 1, id, 8, 1.0, Vec3(0.05, 0.05, 0.05) - 0.05 * pl.normal));
        CoplanarPair pr;
        pr.p = pb.patches.size() - 2;
        pr.q = pb.patches.size() - 1;
        pb.pairs.push_back(pr);
        ++id;
    }
    return pb;
}

/// ATE RMSE after rigid alignment of camera centers.
inline double ate(const std::vector<RigidTransform>& est, const std::vector<RigidTransform>& gt)
{
    std::vector<Vec3> a, b;
    for (std::size_t k = 0; k < est.size(); ++k) {
        a.push_back(est[k].translation);
        b.push_back(gt[k].translation);
    }
    RigidTransform align;
    if (const auto fit = fit_rigid(a, b))
        align = *fit;
    else
        align.translation = b.front() - a.front();
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        sum += (align * a[k] - b[k]).squaredNorm();
    return std::sqrt(sum / static_cast<double>(a.size()));
}

}  // namespace coplanar::testing
