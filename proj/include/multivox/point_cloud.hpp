#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "multivox/common.hpp"

namespace mvx {

// One LiDAR return. Coordinates in meters; timestamp is seconds relative to
// the current frame (0 for current, negative for past sweeps).
struct Point {
    float x = 0.f, y = 0.f, z = 0.f;
    float intensity = 0.f;
    float elongation = 0.f;
    float timestamp = 0.f;
};

constexpr int32_t kPointFeatureDim = 6;  // x,y,z + intensity, elongation, timestamp

struct PointCloud {
    std::vector<Point> points;
    std::vector<int32_t> labels;        // empty, or one class id per point
    std::vector<uint8_t> current_mask;  // 1 iff the point belongs to the current frame

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_labels() const { return !labels.empty(); }

    void resize_mask_current() { current_mask.assign(points.size(), 1); }
};

// Rigid transform mapping a past frame into the current frame. Row-major 4x4.
struct Pose {
    std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    static Pose translation(double tx, double ty, double tz) {
        Pose p;
        p.m[3] = tx;
        p.m[7] = ty;
        p.m[11] = tz;
        return p;
    }
    static Pose yaw_about_origin(double a) {
        Pose p;
        p.m[0] = std::cos(a);
        p.m[1] = -std::sin(a);
        p.m[4] = std::sin(a);
        p.m[5] = std::cos(a);
        return p;
    }

    bool valid(double tol = 1e-6) const {
        // rotation block orthonormal, last row (0,0,0,1)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double dot = 0;
                for (int k = 0; k < 3; ++k) dot += m[k * 4 + i] * m[k * 4 + j];
                if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
            }
        return std::abs(m[12]) <= tol && std::abs(m[13]) <= tol && std::abs(m[14]) <= tol &&
               std::abs(m[15] - 1.0) <= tol;
    }

    void apply(float& x, float& y, float& z) const {
        const double px = x, py = y, pz = z;
        x = float(m[0] * px + m[1] * py + m[2] * pz + m[3]);
        y = float(m[4] * px + m[5] * py + m[6] * pz + m[7]);
        z = float(m[8] * px + m[9] * py + m[10] * pz + m[11]);
    }
};

enum class TransformKind : uint8_t {
    identity,
    flip_xz,  // negates y
    flip_yz,  // negates x
    scale,
    rot_yaw,    // right-handed about z
    rot_pitch,  // right-handed about y
    rot_roll,   // right-handed about x
    translate,
};

struct GeomTransform {
    TransformKind kind = TransformKind::identity;
    double value = 0.0;  // scale factor or angle in radians
    double dx = 0.0, dy = 0.0, dz = 0.0;

    static GeomTransform identity() { return {}; }
    static GeomTransform flip_xz() { return {TransformKind::flip_xz}; }
    static GeomTransform flip_yz() { return {TransformKind::flip_yz}; }
    static GeomTransform scale(double f) { return {TransformKind::scale, f}; }
    static GeomTransform rot_yaw(double a) { return {TransformKind::rot_yaw, a}; }
    static GeomTransform rot_pitch(double a) { return {TransformKind::rot_pitch, a}; }
    static GeomTransform rot_roll(double a) { return {TransformKind::rot_roll, a}; }
    static GeomTransform translate(double x, double y, double z) {
        GeomTransform t{TransformKind::translate};
        t.dx = x;
        t.dy = y;
        t.dz = z;
        return t;
    }

    bool valid() const {
        if (kind == TransformKind::scale) return value > 0.0 && std::isfinite(value);
        return std::isfinite(value) && std::isfinite(dx) && std::isfinite(dy) && std::isfinite(dz);
    }

    std::string describe() const {
        switch (kind) {
            case TransformKind::identity: return "identity";
            case TransformKind::flip_xz: return "flip_xz";
            case TransformKind::flip_yz: return "flip_yz";
            case TransformKind::scale: return "scale(" + std::to_string(value) + ")";
            case TransformKind::rot_yaw: return "rot_yaw(" + std::to_string(value) + ")";
            case TransformKind::rot_pitch: return "rot_pitch(" + std::to_string(value) + ")";
            case TransformKind::rot_roll: return "rot_roll(" + std::to_string(value) + ")";
            case TransformKind::translate:
                return "translate(" + std::to_string(dx) + "," + std::to_string(dy) + "," +
                       std::to_string(dz) + ")";
        }
        return "?";
    }
};

inline void transform_xyz(const GeomTransform& t, float& x, float& y, float& z) {
    const double px = x, py = y, pz = z;
    switch (t.kind) {
        case TransformKind::identity: break;
        case TransformKind::flip_xz: y = float(-py); break;
        case TransformKind::flip_yz: x = float(-px); break;
        case TransformKind::scale:
            x = float(px * t.value);
            y = float(py * t.value);
            z = float(pz * t.value);
            break;
        case TransformKind::rot_yaw: {
            const double c = std::cos(t.value), s = std::sin(t.value);
            x = float(c * px - s * py);
            y = float(s * px + c * py);
            break;
        }
        case TransformKind::rot_pitch: {
            const double c = std::cos(t.value), s = std::sin(t.value);
            x = float(c * px + s * pz);
            z = float(-s * px + c * pz);
            break;
        }
        case TransformKind::rot_roll: {
            const double c = std::cos(t.value), s = std::sin(t.value);
            y = float(c * py - s * pz);
            z = float(s * py + c * pz);
            break;
        }
        case TransformKind::translate:
            x = float(px + t.dx);
            y = float(py + t.dy);
            z = float(pz + t.dz);
            break;
    }
}

// Coordinates move; labels, mask and non-geometric features stay untouched.
inline PointCloud apply_transform(const PointCloud& pc, const GeomTransform& t) {
    PointCloud out = pc;
    for (auto& p : out.points) transform_xyz(t, p.x, p.y, p.z);
    return out;
}

struct PastFrame {
    PointCloud cloud;
    Pose pose;  // maps the past frame into the current frame
};

// Concatenate current + pose-transformed past sweeps. Past points keep the
// (negative) timestamps their source carried; current points are stamped 0.
// Only current points are flagged in current_mask, so downstream label/loss
// paths ignore the past sweeps while features still see them.
inline PointCloud merge_frames(const PointCloud& current, const std::vector<PastFrame>& past) {
    for (const auto& f : past)
        if (!f.pose.valid()) throw DataError("merge_frames: pose is not a rigid transform");

    PointCloud out;
    size_t total = current.size();
    for (const auto& f : past) total += f.cloud.size();
    out.points.reserve(total);
    out.current_mask.reserve(total);
    const bool keep_labels = current.has_labels();
    if (keep_labels) out.labels.reserve(total);

    for (size_t i = 0; i < current.size(); ++i) {
        Point p = current.points[i];
        p.timestamp = 0.f;
        out.points.push_back(p);
        out.current_mask.push_back(1);
        if (keep_labels) out.labels.push_back(current.labels[i]);
    }
    for (const auto& f : past) {
        for (size_t i = 0; i < f.cloud.size(); ++i) {
            Point p = f.cloud.points[i];
            f.pose.apply(p.x, p.y, p.z);
            out.points.push_back(p);
            out.current_mask.push_back(0);
            if (keep_labels) out.labels.push_back(kIgnoreLabel);
        }
    }
    return out;
}

// Test-time augmentation sweep. Each variant applies exactly one transform.
struct TtaConfig {
    bool flip_xz = true;
    bool flip_yz = true;
    std::vector<double> scales{0.95, 1.05};
    std::vector<double> yaw_rad{22.5 * kPi / 180.0,  -22.5 * kPi / 180.0, 45.0 * kPi / 180.0,
                                -45.0 * kPi / 180.0, 135.0 * kPi / 180.0, -135.0 * kPi / 180.0,
                                157.5 * kPi / 180.0, -157.5 * kPi / 180.0, 180.0 * kPi / 180.0};
    std::vector<double> pitch_rad{8.0 * kPi / 180.0, -8.0 * kPi / 180.0};
    std::vector<double> roll_rad{5.0 * kPi / 180.0, -5.0 * kPi / 180.0};
    std::vector<double> translate_z{0.2, -0.2};

    static TtaConfig none() {
        TtaConfig c;
        c.flip_xz = c.flip_yz = false;
        c.scales.clear();
        c.yaw_rad.clear();
        c.pitch_rad.clear();
        c.roll_rad.clear();
        c.translate_z.clear();
        return c;
    }

    std::vector<GeomTransform> transforms() const {
        std::vector<GeomTransform> ts;
        ts.push_back(GeomTransform::identity());
        if (flip_xz) ts.push_back(GeomTransform::flip_xz());
        if (flip_yz) ts.push_back(GeomTransform::flip_yz());
        for (double s : scales) ts.push_back(GeomTransform::scale(s));
        for (double a : yaw_rad) ts.push_back(GeomTransform::rot_yaw(a));
        for (double a : pitch_rad) ts.push_back(GeomTransform::rot_pitch(a));
        for (double a : roll_rad) ts.push_back(GeomTransform::rot_roll(a));
        for (double d : translate_z) ts.push_back(GeomTransform::translate(0, 0, d));
        return ts;
    }
};

// First element is always the identity clone; point order is preserved in
// every variant so per-point predictions line up without inverse mapping.
inline std::vector<std::pair<GeomTransform, PointCloud>> make_tta_set(const PointCloud& pc,
                                                                      const TtaConfig& cfg) {
    std::vector<std::pair<GeomTransform, PointCloud>> out;
    for (const auto& t : cfg.transforms()) out.emplace_back(t, apply_transform(pc, t));
    return out;
}

// Element-wise mean of per-variant probability matrices, rows renormalized.
inline Mat aggregate_tta_probs(const std::vector<Mat>& per_variant) {
    if (per_variant.empty()) throw DataError("aggregate_tta_probs: no inputs");
    const int32_t rows = per_variant[0].rows, cols = per_variant[0].cols;
    for (const auto& m : per_variant)
        if (m.rows != rows || m.cols != cols)
            throw DataError("aggregate_tta_probs: shape mismatch");

    Mat out(rows, cols, 0.f);
    for (const auto& m : per_variant)
        for (size_t i = 0; i < m.v.size(); ++i) out.v[i] += m.v[i];
    const float inv = 1.f / float(per_variant.size());
    for (auto& x : out.v) x *= inv;
    for (int32_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (int32_t c = 0; c < cols; ++c) sum += out.at(r, c);
        if (sum > 0.0) {
            for (int32_t c = 0; c < cols; ++c) out.at(r, c) = float(out.at(r, c) / sum);
        } else {
            for (int32_t c = 0; c < cols; ++c) out.at(r, c) = 1.f / float(cols);
        }
    }
    return out;
}

}  // namespace mvx
