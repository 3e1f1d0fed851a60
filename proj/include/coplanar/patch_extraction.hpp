#pragma once

/**
 * @file patch_extraction.hpp
 * @brief Per-pixel normals and agglomerative planar segmentation of depth frames.
 */

#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"
#include "coplanar/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <set>
#include <vector>

namespace coplanar {

struct ExtractionParams
{
    int normal_window_px = 5;
    double merge_normal_angle_deg = 10.0;
    /// Largest per-pixel RMS residual of a merged region's plane fit, meters.
    double merge_plane_rms_m = 0.01;
    int min_valid_pixels = 300;
    /// Side of the square seed cells, pixels.
    int cell_size_px = 4;
    int samples_per_patch = 64;
    /// Neighbors whose depth differs from the center by more than this fraction
    /// of the center depth are left out of the normal fit.
    double normal_depth_jump = 0.05;

    void validate() const
    {
        if (normal_window_px < 3 || normal_window_px % 2 == 0)
            throw UsageError("normal_window_px must be odd and at least 3");
        if (!(merge_normal_angle_deg > 0.0 && merge_normal_angle_deg < 90.0))
            throw UsageError("merge_normal_angle_deg must be in (0, 90)");
        if (!(merge_plane_rms_m > 0.0))
            throw UsageError("merge_plane_rms_m must be positive");
        if (min_valid_pixels < 1)
            throw UsageError("min_valid_pixels must be at least 1");
        if (cell_size_px < 1)
            throw UsageError("cell_size_px must be at least 1");
        if (samples_per_patch < 3)
            throw UsageError("samples_per_patch must be at least 3");
    }
};

namespace detail {

/// Running first and second moments of a point set.
struct PointStats
{
    double count = 0.0;
    Vec3 sum = Vec3::Zero();
    Mat3 outer = Mat3::Zero();

    void add(const Vec3& p)
    {
        count += 1.0;
        sum += p;
        outer += p * p.transpose();
    }

    void merge(const PointStats& o)
    {
        count += o.count;
        sum += o.sum;
        outer += o.outer;
    }

    /// Plane fit; `rms` is the per-point RMS residual.
    PlaneFit fit() const
    {
        PlaneFit f;
        const Vec3 mean = sum / count;
        const Mat3 cov = outer / count - mean * mean.transpose();
        Eigen::SelfAdjointEigenSolver<Mat3> es;
        es.computeDirect(cov);
        f.plane = Plane(mean, es.eigenvectors().col(0));
        f.rms = std::sqrt(std::max(0.0, es.eigenvalues()(0)));
        return f;
    }
};

inline Vec3 back_project_pixel(const Frame& frame, int x, int y)
{
    return frame.intrinsics.back_project(x, y, frame.depth(x, y));
}

inline double angle_between_deg(const Vec3& a, const Vec3& b)
{
    return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace detail

/**
 * Per-pixel unit normals from a least-squares plane over the back-projected
 * valid neighbors in a normal_window_px window, oriented toward the camera.
 * Pixels without enough consistent neighbors get the zero vector.
 */
inline Image<Eigen::Vector3f> estimate_normals(const Frame& frame, const ExtractionParams& params)
{
    params.validate();
    const int w = frame.depth.width(), h = frame.depth.height();
    Image<Eigen::Vector3f> normals(w, h, Eigen::Vector3f::Zero());
    const bool any_valid = std::any_of(frame.depth.data().begin(), frame.depth.data().end(),
                                       [](float d) { return d > 0.0f && std::isfinite(d); });
    if (!any_valid)
        throw DataError("no valid depth");
    const int r = params.normal_window_px / 2;
    const int needed = (params.normal_window_px * params.normal_window_px) / 2 + 1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float zc = frame.depth(x, y);
            if (!(zc > 0.0f) || !std::isfinite(zc))
                continue;
            detail::PointStats st;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int u = x + dx, v = y + dy;
                    if (!frame.depth.contains(u, v))
                        continue;
                    const float z = frame.depth(u, v);
                    if (!(z > 0.0f) || !std::isfinite(z) || std::abs(z - zc) > params.normal_depth_jump * zc)
                        continue;
                    st.add(detail::back_project_pixel(frame, u, v));
                }
            if (st.count < needed)
                continue;
            const PlaneFit f = st.fit();
            Vec3 n = f.plane.normal;
            if (n.dot(detail::back_project_pixel(frame, x, y)) > 0.0)
                n = -n;
            normals(x, y) = n.cast<float>();
        }
    return normals;
}

/**
 * Agglomerative planar segmentation. Square seed cells that are planar are
 * merged greedily (smallest normal angle first) while the merged normals agree
 * within merge_normal_angle_deg and the union's plane fit stays within
 * merge_plane_rms_m. Regions with fewer than min_valid_pixels pixels are dropped.
 *
 * Each patch's samples are a farthest-point subset of its pixels lying within
 * merge_plane_rms_m of the region plane; the stored plane is the fit to those
 * samples, oriented toward the camera.
 */
inline std::vector<PlanePatch> segment_planar_patches(const Frame& frame, const ExtractionParams& params)
{
    params.validate();
    const int w = frame.depth.width(), h = frame.depth.height();
    Image<Eigen::Vector3f> normals = frame.normals;
    if (normals.width() != w || normals.height() != h) {
        try {
            normals = estimate_normals(frame, params);
        } catch (const DataError&) {
            return {};
        }
    }
    auto valid = [&](int x, int y) {
        const float z = frame.depth(x, y);
        return z > 0.0f && std::isfinite(z) && normals(x, y).squaredNorm() > 0.5f;
    };

    const int cs = params.cell_size_px;
    const int gw = (w + cs - 1) / cs, gh = (h + cs - 1) / cs;
    const int n_cells = gw * gh;
    std::vector<detail::PointStats> stats(static_cast<std::size_t>(n_cells));
    std::vector<Vec3> mean_normal(static_cast<std::size_t>(n_cells), Vec3::Zero());
    std::vector<bool> alive(static_cast<std::size_t>(n_cells), false);
    const double cos_thr = std::cos(params.merge_normal_angle_deg * std::numbers::pi / 180.0);

    for (int cy = 0; cy < gh; ++cy)
        for (int cx = 0; cx < gw; ++cx) {
            const int c = cy * gw + cx;
            detail::PointStats st;
            std::vector<Vec3> ns;
            int total = 0;
            for (int y = cy * cs; y < std::min(h, (cy + 1) * cs); ++y)
                for (int x = cx * cs; x < std::min(w, (cx + 1) * cs); ++x) {
                    ++total;
                    if (!valid(x, y))
                        continue;
                    st.add(detail::back_project_pixel(frame, x, y));
                    ns.push_back(normals(x, y).cast<double>());
                }
            if (st.count < 3 || 2 * st.count < total)
                continue;
            const PlaneFit f = st.fit();
            if (f.rms > params.merge_plane_rms_m)
                continue;
            bool consistent = true;
            for (const auto& n : ns)
                consistent = consistent && std::abs(n.dot(f.plane.normal)) >= cos_thr;
            if (!consistent)
                continue;
            stats[static_cast<std::size_t>(c)] = st;
            mean_normal[static_cast<std::size_t>(c)] = f.plane.normal;
            alive[static_cast<std::size_t>(c)] = true;
        }

    // union-find over cells; regions are identified by their root cell
    std::vector<int> parent(static_cast<std::size_t>(n_cells));
    for (int c = 0; c < n_cells; ++c)
        parent[static_cast<std::size_t>(c)] = c;
    auto find = [&parent](int c) {
        while (parent[static_cast<std::size_t>(c)] != c) {
            parent[static_cast<std::size_t>(c)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(c)])];
            c = parent[static_cast<std::size_t>(c)];
        }
        return c;
    };
    std::vector<std::set<int>> neighbors(static_cast<std::size_t>(n_cells));
    std::vector<int> version(static_cast<std::size_t>(n_cells), 0);
    for (int cy = 0; cy < gh; ++cy)
        for (int cx = 0; cx < gw; ++cx) {
            const int c = cy * gw + cx;
            if (!alive[static_cast<std::size_t>(c)])
                continue;
            if (cx + 1 < gw && alive[static_cast<std::size_t>(c + 1)]) {
                neighbors[static_cast<std::size_t>(c)].insert(c + 1);
                neighbors[static_cast<std::size_t>(c + 1)].insert(c);
            }
            if (cy + 1 < gh && alive[static_cast<std::size_t>(c + gw)]) {
                neighbors[static_cast<std::size_t>(c)].insert(c + gw);
                neighbors[static_cast<std::size_t>(c + gw)].insert(c);
            }
        }

    struct Edge
    {
        double angle;
        int a, b, va, vb;
        bool operator>(const Edge& o) const
        {
            if (angle != o.angle)
                return angle > o.angle;
            if (a != o.a)
                return a > o.a;
            return b > o.b;
        }
    };
    std::priority_queue<Edge, std::vector<Edge>, std::greater<Edge>> queue;
    auto push_edge = [&](int a, int b) {
        if (a > b)
            std::swap(a, b);
        const double ang = detail::angle_between_deg(mean_normal[static_cast<std::size_t>(a)],
                                                     mean_normal[static_cast<std::size_t>(b)]);
        if (ang < params.merge_normal_angle_deg)
            queue.push({ang, a, b, version[static_cast<std::size_t>(a)], version[static_cast<std::size_t>(b)]});
    };
    for (int c = 0; c < n_cells; ++c)
        for (const int nb : neighbors[static_cast<std::size_t>(c)])
            if (c < nb)
                push_edge(c, nb);

    while (!queue.empty()) {
        const Edge e = queue.top();
        queue.pop();
        const auto ua = static_cast<std::size_t>(e.a), ub = static_cast<std::size_t>(e.b);
        if (find(e.a) != e.a || find(e.b) != e.b || version[ua] != e.va || version[ub] != e.vb)
            continue;
        detail::PointStats merged = stats[ua];
        merged.merge(stats[ub]);
        const PlaneFit f = merged.fit();
        if (f.rms > params.merge_plane_rms_m)
            continue;
        // keep the larger region as the root
        const int keep = stats[ua].count >= stats[ub].count ? e.a : e.b;
        const int gone = keep == e.a ? e.b : e.a;
        const auto uk = static_cast<std::size_t>(keep), ug = static_cast<std::size_t>(gone);
        parent[ug] = keep;
        stats[uk] = merged;
        mean_normal[uk] = f.plane.normal;
        ++version[uk];
        for (const int nb : neighbors[ug])
            if (nb != keep) {
                neighbors[uk].insert(nb);
                neighbors[static_cast<std::size_t>(nb)].erase(gone);
                neighbors[static_cast<std::size_t>(nb)].insert(keep);
            }
        neighbors[uk].erase(gone);
        neighbors[ug].clear();
        for (const int nb : neighbors[uk])
            push_edge(keep, nb);
    }

    // collect pixels per region in raster order
    std::vector<int> region_of(static_cast<std::size_t>(n_cells), -1);
    std::vector<std::vector<int>> region_pixels;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int c = (y / cs) * gw + (x / cs);
            if (!alive[static_cast<std::size_t>(c)] || !valid(x, y))
                continue;
            const int root = find(c);
            int& rid = region_of[static_cast<std::size_t>(root)];
            if (rid < 0) {
                rid = static_cast<int>(region_pixels.size());
                region_pixels.emplace_back();
            }
            region_pixels[static_cast<std::size_t>(rid)].push_back(y * w + x);
        }

    std::vector<PlanePatch> patches;
    const Intrinsics& k = frame.intrinsics;
    for (const auto& pix : region_pixels) {
        if (static_cast<int>(pix.size()) < params.min_valid_pixels)
            continue;
        std::vector<Vec3> pts;
        pts.reserve(pix.size());
        int x0 = w, y0 = h, x1 = -1, y1 = -1;
        for (const int idx : pix) {
            const int x = idx % w, y = idx / w;
            pts.push_back(detail::back_project_pixel(frame, x, y));
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
        const PlaneFit region_fit = fit_plane(pts);
        std::vector<Vec3> inliers;
        for (const auto& p : pts)
            if (std::abs(region_fit.plane.signed_distance(p)) <= params.merge_plane_rms_m)
                inliers.push_back(p);
        if (inliers.size() < 3)
            continue;

        PlanePatch patch;
        patch.id = static_cast<int>(patches.size());
        patch.frame_id = frame.index;
        for (const auto i : farthest_point_sample(inliers, static_cast<std::size_t>(params.samples_per_patch)))
            patch.samples.push_back(inliers[i]);
        if (patch.samples.size() < 3)
            continue;
        PlaneFit fit = fit_plane(patch.samples);
        if (fit.plane.normal.dot(fit.plane.point) > 0.0)
            fit.plane.normal = -fit.plane.normal;
        patch.plane = fit.plane;
        patch.pixels = pix;
        patch.pixel_count = static_cast<int>(pix.size());
        Vec3 c = Vec3::Zero();
        double area = 0.0;
        for (std::size_t m = 0; m < pix.size(); ++m) {
            c += pts[m];
            const int x = pix[m] % w, y = pix[m] / w;
            const Vec3 ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
            const double z = pts[m].z();
            area += z * z / (k.fx * k.fy * std::max(std::abs(patch.plane.normal.dot(ray)), 0.05));
        }
        patch.centroid = c / static_cast<double>(pix.size());
        patch.area = area;
        patch.bbox = PixelRect{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
        patches.push_back(std::move(patch));
    }
    return patches;
}

}  // namespace coplanar
