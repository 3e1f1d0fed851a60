#pragma once

/**
 * @file io.hpp
 * @brief Dataset ingestion (TUM-style associations, 16-bit depth PNG, RGB),
 * trajectory files and the CSV/PNG artifacts written by the command-line tool.
 *
 * Needs OpenCV core, imgproc and imgcodecs at link time.
 */

#include "coplanar/correspondence.hpp"
#include "coplanar/descriptor.hpp"
#include "coplanar/error.hpp"
#include "coplanar/geometry.hpp"
#include "coplanar/image.hpp"
#include "coplanar/optimizer.hpp"
#include "coplanar/patch_inputs.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace coplanar {

namespace fs = std::filesystem;

/// Shortest text that parses back to the same double.
inline std::string num(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

/// Throws DataError naming `path` when it does not exist.
inline void require_path(const std::string& path, const std::string& what)
{
    if (path.empty())
        throw UsageError(what + " path is not set");
    if (!fs::exists(path))
        throw DataError(what + " not found: " + path);
}

inline void ensure_parent(const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
}

inline std::ofstream open_output(const fs::path& path)
{
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    return out;
}

// ---------------------------------------------------------------------------
// images

/// 16-bit PNG depth, meters = raw / depth_scale; raw 0 is invalid.
inline Image<float> read_depth_png(const std::string& path, double depth_scale)
{
    require_path(path, "depth image");
    const cv::Mat m = cv::imread(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
    if (m.empty())
        throw DataError("cannot decode depth image: " + path);
    if (m.type() != CV_16UC1)
        throw DataError("depth image is not 16-bit single channel: " + path);
    Image<float> out(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            out(x, y) = static_cast<float>(m.at<std::uint16_t>(y, x) / depth_scale);
    return out;
}

inline void write_depth_png(const std::string& path, const Image<float>& depth, double depth_scale)
{
    cv::Mat m(depth.height(), depth.width(), CV_16UC1);
    for (int y = 0; y < depth.height(); ++y)
        for (int x = 0; x < depth.width(); ++x) {
            const double raw = std::round(static_cast<double>(depth(x, y)) * depth_scale);
            m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::clamp(raw, 0.0, 65535.0));
        }
    ensure_parent(path);
    if (!cv::imwrite(path, m))
        throw DataError("cannot write " + path);
}

inline Image<Rgb8> read_color(const std::string& path)
{
    require_path(path, "color image");
    const cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty())
        throw DataError("cannot decode color image: " + path);
    Image<Rgb8> out(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const auto& p = m.at<cv::Vec3b>(y, x);
            out(x, y) = Rgb8{p[2], p[1], p[0]};
        }
    return out;
}

inline void write_color_png(const std::string& path, const Image<Rgb8>& img)
{
    cv::Mat m(img.height(), img.width(), CV_8UC3);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const Rgb8 c = img(x, y);
            m.at<cv::Vec3b>(y, x) = cv::Vec3b(c.b, c.g, c.r);
        }
    ensure_parent(path);
    if (!cv::imwrite(path, m))
        throw DataError("cannot write " + path);
}

/// Unit normals encoded as 8-bit RGB, (n + 1) / 2 * 255; zero vectors map to black.
inline void write_normal_png(const std::string& path, const Image<Eigen::Vector3f>& normals)
{
    Image<Rgb8> img(normals.width(), normals.height());
    auto enc = [](float v) { return static_cast<std::uint8_t>(std::lround(std::clamp((v + 1.0f) * 127.5f, 0.0f, 255.0f))); };
    for (std::size_t k = 0; k < normals.size(); ++k) {
        const auto& n = normals[k];
        if (n.squaredNorm() > 0.0f)
            img[k] = Rgb8{enc(n.x()), enc(n.y()), enc(n.z())};
    }
    write_color_png(path, img);
}

/// Values in [0, 1] written as 8-bit gray.
inline void write_mask_png(const std::string& path, const Image<float>& mask)
{
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(mask(x, y), 0.0f, 1.0f) * 255.0f));
    ensure_parent(path);
    if (!cv::imwrite(path, m))
        throw DataError("cannot write " + path);
}

/// 16-bit label image: 0 for no patch, patch id + 1 otherwise.
inline void write_label_png(const std::string& path, int width, int height, const std::vector<PlanePatch>& patches)
{
    cv::Mat m(height, width, CV_16UC1, cv::Scalar(0));
    for (const auto& p : patches) {
        if (p.id + 1 > 65535)
            throw DataError("too many patches for a 16-bit label image");
        for (const int idx : p.pixels)
            m.at<std::uint16_t>(idx / width, idx % width) = static_cast<std::uint16_t>(p.id + 1);
    }
    ensure_parent(path);
    if (!cv::imwrite(path, m))
        throw DataError("cannot write " + path);
}

/// Pixel lists per patch id, in raster order.
inline std::map<int, std::vector<int>> read_label_png(const std::string& path)
{
    require_path(path, "label image");
    const cv::Mat m = cv::imread(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
    if (m.empty() || m.type() != CV_16UC1)
        throw DataError("label image is not 16-bit single channel: " + path);
    std::map<int, std::vector<int>> out;
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            if (const int v = m.at<std::uint16_t>(y, x); v > 0)
                out[v - 1].push_back(y * m.cols + x);
    return out;
}

// ---------------------------------------------------------------------------
// associations and trajectories

/// One line `ts_depth depth_path ts_rgb rgb_path`. Timestamps are kept verbatim.
struct Association
{
    std::string ts_depth;
    std::string depth_path;
    std::string ts_rgb;
    std::string rgb_path;
};

inline std::vector<Association> read_associations(const std::string& path)
{
    require_path(path, "association file");
    std::ifstream in(path);
    std::vector<Association> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#')
            continue;
        std::istringstream ls(line);
        Association a;
        if (!(ls >> a.ts_depth >> a.depth_path >> a.ts_rgb >> a.rgb_path))
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 'ts_depth depth_path ts_rgb rgb_path'");
        out.push_back(std::move(a));
    }
    if (out.empty())
        throw DataError("association file lists no frames: " + path);
    return out;
}

inline void write_associations(const std::string& path, const std::vector<Association>& rows)
{
    auto out = open_output(path);
    for (const auto& a : rows)
        out << a.ts_depth << ' ' << a.depth_path << ' ' << a.ts_rgb << ' ' << a.rgb_path << '\n';
}

struct StampedPose
{
    double timestamp = 0.0;
    RigidTransform pose;
};

/// Reads `timestamp tx ty tz qx qy qz qw` lines.
inline std::vector<StampedPose> read_tum_trajectory(const std::string& path)
{
    require_path(path, "trajectory file");
    std::ifstream in(path);
    std::vector<StampedPose> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#')
            continue;
        std::istringstream ls(line);
        double ts = 0, tx = 0, ty = 0, tz = 0, qx = 0, qy = 0, qz = 0, qw = 0;
        if (!(ls >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 8 fields");
        const Eigen::Quaterniond q(qw, qx, qy, qz);
        if (!(std::abs(q.norm() - 1.0) < 1e-3))
            throw DataError(path + ":" + std::to_string(line_no) + ": quaternion is not unit length");
        out.push_back({ts, RigidTransform::from_quaternion(q.normalized(), Vec3(tx, ty, tz))});
    }
    return out;
}

/// Writes one `timestamp tx ty tz qx qy qz qw` line per pose, with qw >= 0.
inline void write_tum_trajectory(const std::string& path, const std::vector<std::string>& timestamps,
                                 const std::vector<RigidTransform>& poses)
{
    if (timestamps.size() != poses.size())
        throw UsageError("timestamp and pose counts differ");
    auto out = open_output(path);
    out << "# timestamp tx ty tz qx qy qz qw\n";
    for (std::size_t k = 0; k < poses.size(); ++k) {
        Eigen::Quaterniond q(poses[k].rotation);
        q.normalize();
        if (q.w() < 0.0)
            q.coeffs() *= -1.0;
        const Vec3& t = poses[k].translation;
        out << timestamps[k] << ' ' << num(t.x()) << ' ' << num(t.y()) << ' ' << num(t.z()) << ' ' << num(q.x())
            << ' ' << num(q.y()) << ' ' << num(q.z()) << ' ' << num(q.w()) << '\n';
    }
}

/**
 * Pairs each estimated pose with the ground-truth pose of nearest timestamp
 * within `max_difference` seconds. Each ground-truth entry is used at most once.
 */
inline std::pair<std::vector<RigidTransform>, std::vector<RigidTransform>>
associate_trajectories(const std::vector<StampedPose>& estimated, const std::vector<StampedPose>& ground_truth,
                       double max_difference = 0.02)
{
    std::vector<RigidTransform> est, gt;
    std::vector<bool> used(ground_truth.size(), false);
    for (const auto& e : estimated) {
        std::size_t best = ground_truth.size();
        double best_d = max_difference;
        for (std::size_t k = 0; k < ground_truth.size(); ++k) {
            const double d = std::abs(ground_truth[k].timestamp - e.timestamp);
            if (!used[k] && d <= best_d) {
                best = k;
                best_d = d;
            }
        }
        if (best == ground_truth.size())
            continue;
        used[best] = true;
        est.push_back(e.pose);
        gt.push_back(ground_truth[best].pose);
    }
    if (est.empty())
        throw DataError("no estimated pose has a ground-truth pose within " + num(max_difference) + " s");
    return {est, gt};
}

// ---------------------------------------------------------------------------
// datasets

/// Frames listed by an association file; image paths are relative to its directory.
class Dataset
{
public:
    Dataset(const std::string& association_path, const Intrinsics& intrinsics, double depth_scale)
        : rows_(read_associations(association_path)), base_(fs::path(association_path).parent_path()),
          intrinsics_(intrinsics), depth_scale_(depth_scale)
    {
    }

    int size() const { return static_cast<int>(rows_.size()); }
    const std::vector<Association>& rows() const { return rows_; }

    std::vector<std::string> timestamps() const
    {
        std::vector<std::string> out;
        for (const auto& a : rows_)
            out.push_back(a.ts_depth);
        return out;
    }

    fs::path resolve(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : base_ / p; }

    Frame load(int k, bool with_color = true) const
    {
        if (k < 0 || k >= size())
            throw UsageError("frame index out of range: " + std::to_string(k));
        Frame f;
        f.index = k;
        f.intrinsics = intrinsics_;
        f.depth = read_depth_png(resolve(rows_[static_cast<std::size_t>(k)].depth_path).string(), depth_scale_);
        if (with_color) {
            f.color = read_color(resolve(rows_[static_cast<std::size_t>(k)].rgb_path).string());
            if (f.color.width() != f.depth.width() || f.color.height() != f.depth.height())
                throw DataError("color and depth sizes differ in frame " + std::to_string(k));
        }
        return f;
    }

    /**
     * Depth lookup for keypoint back-projection. Inverse depth is interpolated
     * bilinearly when all four neighbors are valid (exact on planes); otherwise
     * the nearest pixel is used. Returns 0 outside the image.
     */
    DepthLookup depth_lookup() const
    {
        auto cache = std::make_shared<std::map<int, Image<float>>>();
        return [this, cache](int frame, double px, double py) {
            auto it = cache->find(frame);
            if (it == cache->end())
                it = cache->emplace(frame, load(frame, false).depth).first;
            return sample_depth(it->second, px, py);
        };
    }

    static double sample_depth(const Image<float>& depth, double px, double py)
    {
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        if (depth.contains(x0, y0) && depth.contains(x0 + 1, y0 + 1)) {
            const double d00 = depth(x0, y0), d10 = depth(x0 + 1, y0);
            const double d01 = depth(x0, y0 + 1), d11 = depth(x0 + 1, y0 + 1);
            if (d00 > 0.0 && d10 > 0.0 && d01 > 0.0 && d11 > 0.0) {
                const double ax = px - x0, ay = py - y0;
                const double inv = (1 - ay) * ((1 - ax) / d00 + ax / d10) + ay * ((1 - ax) / d01 + ax / d11);
                return 1.0 / inv;
            }
        }
        const int x = static_cast<int>(std::lround(px));
        const int y = static_cast<int>(std::lround(py));
        return depth.contains(x, y) ? static_cast<double>(depth(x, y)) : 0.0;
    }

private:
    std::vector<Association> rows_;
    fs::path base_;
    Intrinsics intrinsics_;
    double depth_scale_;
};

// ---------------------------------------------------------------------------
// patches and pairs

namespace detail {

inline std::string frame_file(int frame, const std::string& ext)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d", frame);
    return buf + ext;
}

/// Splits a CSV line; the fields here never contain commas or quotes.
inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ','))
        out.push_back(f);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

template <class T>
T field(const std::vector<std::string>& row, std::size_t k, const std::string& where)
{
    T v{};
    if (k >= row.size())
        throw DataError(where + ": missing column " + std::to_string(k + 1));
    const std::string& s = row[k];
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw DataError(where + ": bad number '" + s + "'");
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(v))
            throw DataError(where + ": non-finite value '" + s + "'");
    return v;
}

/// Reads a CSV whose first line must equal `header`; calls `row` for each data line.
template <class F>
void read_csv(const std::string& path, const std::string& header, F row)
{
    require_path(path, "CSV file");
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw DataError(path + ":1: expected header '" + header + "'");
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        row(split_csv(line), path + ":" + std::to_string(line_no));
    }
}

}  // namespace detail

inline const std::string kPatchHeader =
    "frame,patch,pixel_count,area,nx,ny,nz,px,py,pz,cx,cy,cz,bbox_x,bbox_y,bbox_w,bbox_h";
inline const std::string kSampleHeader = "frame,patch,x,y,z";
inline const std::string kPairHeader = "frame_p,patch_p,frame_q,patch_q,feature_distance,weight,selection";
inline const std::string kTraceHeader =
    "outer,inner,mu,E_total,E_data_cop,E_reg_cop,E_data_kp,E_reg_kp,selected_cop,selected_kp";
inline const std::string kTripletHeader = "anchor_frame,anchor_patch,pos_frame,pos_patch,neg_frame,neg_patch";

/**
 * Writes `patches.csv` and `patch_samples.csv` into `dir`. When `width` is
 * positive, also writes one label image per frame under `labels/`.
 */
inline void write_patches(const fs::path& dir, const std::vector<PlanePatch>& patches, int n_frames = 0,
                          int width = 0, int height = 0)
{
    auto out = open_output(dir / "patches.csv");
    auto samples = open_output(dir / "patch_samples.csv");
    out << kPatchHeader << '\n';
    samples << kSampleHeader << '\n';
    for (const auto& p : patches) {
        const Vec3& n = p.plane.normal;
        const Vec3& q = p.plane.point;
        out << p.frame_id << ',' << p.id << ',' << p.pixel_count << ',' << num(p.area) << ',' << num(n.x()) << ','
            << num(n.y()) << ',' << num(n.z()) << ',' << num(q.x()) << ',' << num(q.y()) << ',' << num(q.z()) << ','
            << num(p.centroid.x()) << ',' << num(p.centroid.y()) << ',' << num(p.centroid.z()) << ',' << p.bbox.x
            << ',' << p.bbox.y << ',' << p.bbox.width << ',' << p.bbox.height << '\n';
        for (const auto& s : p.samples)
            samples << p.frame_id << ',' << p.id << ',' << num(s.x()) << ',' << num(s.y()) << ',' << num(s.z()) << '\n';
    }
    if (width > 0)
        for (int f = 0; f < n_frames; ++f) {
            std::vector<PlanePatch> in_frame;
            for (const auto& p : patches)
                if (p.frame_id == f)
                    in_frame.push_back(p);
            write_label_png((dir / "labels" / detail::frame_file(f, ".png")).string(), width, height, in_frame);
        }
}

/// Reads what write_patches() wrote. Pixel lists are restored when label images exist.
inline std::vector<PlanePatch> read_patches(const fs::path& dir)
{
    std::vector<PlanePatch> patches;
    std::map<std::pair<int, int>, std::size_t> index;
    detail::read_csv((dir / "patches.csv").string(), kPatchHeader, [&](const auto& row, const std::string& where) {
        using detail::field;
        PlanePatch p;
        p.frame_id = field<int>(row, 0, where);
        p.id = field<int>(row, 1, where);
        p.pixel_count = field<int>(row, 2, where);
        p.area = field<double>(row, 3, where);
        const Vec3 n(field<double>(row, 4, where), field<double>(row, 5, where), field<double>(row, 6, where));
        const Vec3 q(field<double>(row, 7, where), field<double>(row, 8, where), field<double>(row, 9, where));
        if (!(std::abs(n.norm() - 1.0) < 1e-6))
            throw DataError(where + ": plane normal is not unit length");
        p.plane = Plane(q, n);
        p.centroid = Vec3(field<double>(row, 10, where), field<double>(row, 11, where), field<double>(row, 12, where));
        p.bbox = {field<int>(row, 13, where), field<int>(row, 14, where), field<int>(row, 15, where),
                  field<int>(row, 16, where)};
        if (!index.emplace(std::make_pair(p.frame_id, p.id), patches.size()).second)
            throw DataError(where + ": duplicate patch");
        patches.push_back(std::move(p));
    });
    detail::read_csv((dir / "patch_samples.csv").string(), kSampleHeader, [&](const auto& row, const std::string& where) {
        using detail::field;
        const auto it = index.find({field<int>(row, 0, where), field<int>(row, 1, where)});
        if (it == index.end())
            throw DataError(where + ": sample of unknown patch");
        patches[it->second].samples.emplace_back(field<double>(row, 2, where), field<double>(row, 3, where),
                                                 field<double>(row, 4, where));
    });
    std::set<int> frames;
    for (const auto& p : patches)
        frames.insert(p.frame_id);
    for (const int f : frames) {
        const fs::path label = dir / "labels" / detail::frame_file(f, ".png");
        if (!fs::exists(label))
            continue;
        for (auto& [id, pixels] : read_label_png(label.string()))
            if (const auto it = index.find({f, id}); it != index.end())
                patches[it->second].pixels = std::move(pixels);
    }
    return patches;
}

inline void write_pairs(const fs::path& path, const std::vector<PlanePatch>& patches,
                        const std::vector<CoplanarPair>& pairs)
{
    auto out = open_output(path);
    out << kPairHeader << '\n';
    for (const auto& pr : pairs) {
        const auto& p = patches.at(pr.p);
        const auto& q = patches.at(pr.q);
        out << p.frame_id << ',' << p.id << ',' << q.frame_id << ',' << q.id << ',' << num(pr.feature_distance) << ','
            << num(pr.weight) << ',' << num(pr.selection) << '\n';
    }
}

/// Reads pairs and resolves (frame, patch) ids against `patches`.
inline std::vector<CoplanarPair> read_pairs(const fs::path& path, const std::vector<PlanePatch>& patches)
{
    std::map<std::pair<int, int>, std::size_t> index;
    for (std::size_t k = 0; k < patches.size(); ++k)
        index[{patches[k].frame_id, patches[k].id}] = k;
    std::vector<CoplanarPair> out;
    detail::read_csv(path.string(), kPairHeader, [&](const auto& row, const std::string& where) {
        using detail::field;
        const auto a = index.find({field<int>(row, 0, where), field<int>(row, 1, where)});
        const auto b = index.find({field<int>(row, 2, where), field<int>(row, 3, where)});
        if (a == index.end() || b == index.end())
            throw DataError(where + ": pair references an unknown patch");
        CoplanarPair pr;
        pr.p = a->second;
        pr.q = b->second;
        if (patches[pr.p].frame_id == patches[pr.q].frame_id)
            throw DataError(where + ": pair within a single frame");
        if (patches[pr.p].frame_id > patches[pr.q].frame_id)
            std::swap(pr.p, pr.q);
        pr.feature_distance = field<double>(row, 4, where);
        pr.weight = field<double>(row, 5, where);
        pr.selection = field<double>(row, 6, where);
        out.push_back(pr);
    });
    return out;
}

inline void write_trace(const fs::path& path, const std::vector<TraceRow>& trace)
{
    auto out = open_output(path);
    out << kTraceHeader << '\n';
    for (const auto& r : trace)
        out << r.outer << ',' << r.inner << ',' << num(r.mu) << ',' << num(r.terms.total()) << ','
            << num(r.terms.data_cop) << ',' << num(r.terms.reg_cop) << ',' << num(r.terms.data_kp) << ','
            << num(r.terms.reg_kp) << ',' << r.selected_cop << ',' << r.selected_kp << '\n';
}

inline void write_triplets(const fs::path& path, const std::vector<PlanePatch>& patches,
                           const std::vector<Triplet>& triplets)
{
    auto out = open_output(path);
    out << kTripletHeader << '\n';
    for (const auto& t : triplets) {
        const auto& a = patches.at(t.anchor);
        const auto& p = patches.at(t.positive);
        const auto& n = patches.at(t.negative);
        out << a.frame_id << ',' << a.id << ',' << p.frame_id << ',' << p.id << ',' << n.frame_id << ',' << n.id << '\n';
    }
}

/// Writes the `D N` header and one `frame_id patch_id v1 ... vD` line per entry.
inline void write_embeddings(const fs::path& path, const std::map<std::pair<int, int>, DescriptorVector>& table)
{
    Eigen::Index dim = table.empty() ? 0 : table.begin()->second.dimension();
    for (const auto& [key, v] : table)
        if (v.dimension() != dim)
            throw UsageError("embeddings of different dimensions");
    auto out = open_output(path);
    out << dim << ' ' << table.size() << '\n';
    for (const auto& [key, v] : table) {
        out << key.first << ' ' << key.second;
        for (Eigen::Index k = 0; k < dim; ++k)
            out << ' ' << num(v.values(k));
        out << '\n';
    }
}

/**
 * Exports a patch's network inputs to `dir`: eight images (RGB, depth, normal
 * and mask at both scales) plus `meta.txt` with the patch id, frame id, bbox,
 * crop regions and plane.
 */
inline void export_patch_inputs(const fs::path& dir, const PlanePatch& patch, const PatchInputBundle& bundle,
                                double depth_scale)
{
    for (const auto& [name, crops] : {std::pair<std::string, const PatchCrops*>{"local", &bundle.local},
                                      std::pair<std::string, const PatchCrops*>{"global", &bundle.global}}) {
        write_color_png((dir / (name + "_rgb.png")).string(), crops->rgb);
        write_depth_png((dir / (name + "_depth.png")).string(), crops->depth, depth_scale);
        write_normal_png((dir / (name + "_normal.png")).string(), crops->normal);
        write_mask_png((dir / (name + "_mask.png")).string(), crops->mask);
    }
    auto meta = open_output(dir / "meta.txt");
    auto rect = [](const PixelRect& r) {
        return std::to_string(r.x) + ' ' + std::to_string(r.y) + ' ' + std::to_string(r.width) + ' ' +
               std::to_string(r.height);
    };
    meta << "patch_id " << patch.id << '\n'
         << "frame_id " << patch.frame_id << '\n'
         << "bbox " << rect(patch.bbox) << '\n'
         << "local_region " << rect(bundle.local.region) << '\n'
         << "global_region " << rect(bundle.global.region) << '\n'
         << "plane_normal " << num(patch.plane.normal.x()) << ' ' << num(patch.plane.normal.y()) << ' '
         << num(patch.plane.normal.z()) << '\n'
         << "plane_offset " << num(patch.plane.offset()) << '\n'
         << "depth_scale " << num(depth_scale) << '\n';
}

}  // namespace coplanar
