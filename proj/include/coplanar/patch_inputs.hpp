#pragma once

/**
 * @file patch_inputs.hpp
 * @brief Multi-scale RGB / depth / normal / mask crops around a patch.
 *
 * Uses the OpenCV distance transform; link against coplanar_io.
 */

#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"
#include "coplanar/image.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace coplanar {

/// Four channels at one crop scale, each of side PatchInputBundle::size.
struct PatchCrops
{
    /// Crop rectangle in image coordinates before clamping and padding.
    PixelRect region;
    Image<Rgb8> rgb;
    Image<float> depth;
    Image<Eigen::Vector3f> normal;
    Image<float> mask;
};

struct PatchInputBundle
{
    static constexpr int size = 224;
    static constexpr double local_scale = 1.5;
    static constexpr double global_scale = 5.0;
    PatchCrops local;
    PatchCrops global;
};

namespace detail {

/// Crop rectangle of `scale` times the bbox size, centered on the bbox.
inline PixelRect scaled_region(const PixelRect& bbox, double scale)
{
    const int w = static_cast<int>(std::lround(scale * bbox.width));
    const int h = static_cast<int>(std::lround(scale * bbox.height));
    const double cx = bbox.x + 0.5 * bbox.width, cy = bbox.y + 0.5 * bbox.height;
    return {static_cast<int>(std::lround(cx - 0.5 * w)), static_cast<int>(std::lround(cy - 0.5 * h)), w, h};
}

/// Square canvas holding the clamped crop, centered. Canvas (0, 0) is image pixel (ox, oy).
struct Canvas
{
    int side = 0;
    int ox = 0, oy = 0;
    PixelRect clamped;
};

inline Canvas make_canvas(const PixelRect& region, int width, int height)
{
    Canvas c;
    const int x0 = std::max(region.x, 0), y0 = std::max(region.y, 0);
    const int x1 = std::min(region.x + region.width, width), y1 = std::min(region.y + region.height, height);
    c.clamped = {x0, y0, x1 - x0, y1 - y0};
    c.side = std::max(c.clamped.width, c.clamped.height);
    c.ox = x0 - (c.side - c.clamped.width) / 2;
    c.oy = y0 - (c.side - c.clamped.height) / 2;
    return c;
}

/// Output pixel k of `out` samples the canvas at k * (side - 1) / (out - 1).
inline double canvas_coord(int k, int side, int out)
{
    return out > 1 ? k * static_cast<double>(side - 1) / (out - 1) : 0.0;
}

template <typename T, typename Fetch>
Image<T> resample_bilinear(int side, int out, Fetch&& fetch)
{
    Image<T> img(out, out);
    for (int v = 0; v < out; ++v) {
        const double sy = canvas_coord(v, side, out);
        const int y0 = static_cast<int>(std::floor(sy));
        const int y1 = std::min(y0 + 1, side - 1);
        const double fy = sy - y0;
        for (int u = 0; u < out; ++u) {
            const double sx = canvas_coord(u, side, out);
            const int x0 = static_cast<int>(std::floor(sx));
            const int x1 = std::min(x0 + 1, side - 1);
            const double fx = sx - x0;
            img(u, v) = fetch(x0, y0, x1, y1, fx, fy);
        }
    }
    return img;
}

inline PatchCrops crop_scale(const Frame& frame, const PlanePatch& patch, double scale, bool binary_mask, int out)
{
    const int w = frame.depth.width(), h = frame.depth.height();
    PatchCrops crops;
    crops.region = scaled_region(patch.bbox, scale);
    const Canvas cv_ = make_canvas(crops.region, w, h);
    if (cv_.clamped.empty())
        throw DataError("patch crop lies outside the image");
    const int side = cv_.side;

    // canvas-resolution patch membership; patches without pixel support use their bbox
    cv::Mat outside(side, side, CV_8U, cv::Scalar(1));
    auto mark = [&](int ix, int iy) {
        const int x = ix - cv_.ox, y = iy - cv_.oy;
        if (x >= 0 && y >= 0 && x < side && y < side)
            outside.at<std::uint8_t>(y, x) = 0;
    };
    if (patch.pixels.empty()) {
        for (int y = patch.bbox.y; y < patch.bbox.y + patch.bbox.height; ++y)
            for (int x = patch.bbox.x; x < patch.bbox.x + patch.bbox.width; ++x)
                mark(x, y);
    } else {
        for (const int idx : patch.pixels)
            mark(idx % w, idx / w);
    }
    auto in_crop = [&](int x, int y) {
        const int ix = x + cv_.ox, iy = y + cv_.oy;
        return ix >= cv_.clamped.x && iy >= cv_.clamped.y && ix < cv_.clamped.x + cv_.clamped.width &&
               iy < cv_.clamped.y + cv_.clamped.height;
    };

    const bool has_rgb = frame.color.width() == w && frame.color.height() == h;
    const bool has_normals = frame.normals.width() == w && frame.normals.height() == h;

    auto rgb_at = [&](int x, int y) -> Eigen::Vector3d {
        if (!in_crop(x, y) || !has_rgb)
            return Eigen::Vector3d::Constant(128.0);
        const Rgb8 c = frame.color(x + cv_.ox, y + cv_.oy);
        return {double(c.r), double(c.g), double(c.b)};
    };
    auto depth_at = [&](int x, int y) -> double {
        return in_crop(x, y) ? double(frame.depth(x + cv_.ox, y + cv_.oy)) : 0.0;
    };
    auto normal_at = [&](int x, int y) -> Eigen::Vector3d {
        if (!in_crop(x, y) || !has_normals)
            return Eigen::Vector3d::Zero();
        return frame.normals(x + cv_.ox, y + cv_.oy).cast<double>();
    };
    auto blend = [](auto a, auto b, auto c, auto d, double fx, double fy) {
        return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
    };

    crops.rgb = resample_bilinear<Rgb8>(side, out, [&](int x0, int y0, int x1, int y1, double fx, double fy) {
        const Eigen::Vector3d c = blend(rgb_at(x0, y0), rgb_at(x1, y0), rgb_at(x0, y1), rgb_at(x1, y1), fx, fy);
        auto q = [](double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); };
        return Rgb8{q(c.x()), q(c.y()), q(c.z())};
    });
    crops.depth = resample_bilinear<float>(side, out, [&](int x0, int y0, int x1, int y1, double fx, double fy) {
        return static_cast<float>(
            blend(depth_at(x0, y0), depth_at(x1, y0), depth_at(x0, y1), depth_at(x1, y1), fx, fy));
    });
    crops.normal = resample_bilinear<Eigen::Vector3f>(
        side, out, [&](int x0, int y0, int x1, int y1, double fx, double fy) -> Eigen::Vector3f {
            const Eigen::Vector3d n =
                blend(normal_at(x0, y0), normal_at(x1, y0), normal_at(x0, y1), normal_at(x1, y1), fx, fy);
            return n.cast<float>();
        });

    if (binary_mask) {
        // binary mask, nearest neighbor
        crops.mask = Image<float>(out, out);
        for (int v = 0; v < out; ++v)
            for (int u = 0; u < out; ++u) {
                const int x = static_cast<int>(std::lround(canvas_coord(u, side, out)));
                const int y = static_cast<int>(std::lround(canvas_coord(v, side, out)));
                crops.mask(u, v) = outside.at<std::uint8_t>(y, x) ? 0.0f : 1.0f;
            }
    } else {
        // linear ramp d_edge / (d_patch + d_edge): 1 on the patch, 0 on the canvas border
        cv::Mat dist;
        cv::distanceTransform(outside, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE, CV_32F);
        crops.mask = resample_bilinear<float>(side, out, [&](int x0, int y0, int x1, int y1, double fx, double fy) {
            const double dp = blend(double(dist.at<float>(y0, x0)), double(dist.at<float>(y0, x1)),
                                    double(dist.at<float>(y1, x0)), double(dist.at<float>(y1, x1)), fx, fy);
            if (dp <= 0.0)
                return 1.0f;
            const double sx = x0 + fx, sy = y0 + fy;
            const double de = std::max(0.0, std::min({sx, sy, side - 1 - sx, side - 1 - sy}));
            return static_cast<float>(de / (dp + de));
        });
    }
    return crops;
}

}  // namespace detail

/**
 * Local (1.5x bbox) and global (5x bbox) crops of a patch, clamped to the
 * image, padded to a square (gray RGB, zero depth and normals) and resampled
 * to 224 x 224. Resampling aligns the canvas corners with the output corners.
 */
inline PatchInputBundle build_patch_inputs(const Frame& frame, const PlanePatch& patch)
{
    if (patch.bbox.empty())
        throw DataError("patch bounding box is empty");
    PatchInputBundle b;
    b.local = detail::crop_scale(frame, patch, PatchInputBundle::local_scale, true, PatchInputBundle::size);
    b.global = detail::crop_scale(frame, patch, PatchInputBundle::global_scale, false, PatchInputBundle::size);
    return b;
}

}  // namespace coplanar
