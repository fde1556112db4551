#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "multivox/common.hpp"
#include "multivox/heads.hpp"
#include "multivox/point_cloud.hpp"

namespace mvx {

// Desk-scale synthetic scene: a ground plane, walls and poles (stuff), and
// labeled cuboid objects with exact ground-truth boxes (things).
constexpr int32_t kVehicleClass = 1;
constexpr int32_t kPedestrianClass = 2;
constexpr int32_t kRoadClass = 3;
constexpr int32_t kWallClass = 4;
constexpr int32_t kPoleClass = 5;
constexpr int32_t kSceneClasses = 5;

struct SceneSpec {
    double extent = 6.0;  // ground half-extent in meters
    int32_t vehicles = 4;
    int32_t pedestrians = 0;
    int32_t poles = 4;
    int32_t walls = 2;
    int32_t points_per_object = 400;
    int32_t ground_points = 15000;
    double noise_sigma = 0.01;
    uint64_t seed = 1;

    void validate() const {
        if (extent <= 0) throw DataError("scene: extent must be positive");
        if (vehicles < 0 || pedestrians < 0 || poles < 0 || walls < 0 ||
            points_per_object < 0 || ground_points < 0)
            throw DataError("scene: counts must be nonnegative");
    }
};

struct Scene {
    PointCloud cloud;
    std::vector<Box> gt_boxes;
};

namespace detail {

// Sample on the cuboid surface in the local frame, jitter, clamp strictly
// inside so the exact GT box always contains the point.
inline void add_box_points(Scene& scene, Rng& rng, const Box& b, int32_t count, double sigma,
                           int32_t label) {
    const double hx = b.l * 0.5, hy = b.w * 0.5, hz = b.h * 0.5;
    const double margin = 1e-4;
    const double areas[3] = {hy * hz, hx * hz, hx * hy};  // faces normal to x,y,z
    const double total = 2 * (areas[0] + areas[1] + areas[2]);
    for (int32_t i = 0; i < count; ++i) {
        double pick = rng.uniform() * total;
        int face = 0;
        for (; face < 5; ++face) {
            pick -= areas[face / 2];
            if (pick < 0) break;
        }
        const int axis = face / 2;
        const double sign = face % 2 == 0 ? 1.0 : -1.0;
        double local[3] = {rng.uniform(-hx, hx), rng.uniform(-hy, hy), rng.uniform(-hz, hz)};
        local[axis] = sign * (axis == 0 ? hx : axis == 1 ? hy : hz);
        for (int a = 0; a < 3; ++a) local[a] += rng.normal(0.0, sigma);
        local[0] = std::clamp(local[0], -hx + margin, hx - margin);
        local[1] = std::clamp(local[1], -hy + margin, hy - margin);
        local[2] = std::clamp(local[2], -hz + margin, hz - margin);

        const double c = std::cos(b.yaw), s = std::sin(b.yaw);
        Point p;
        p.x = float(b.x + c * local[0] - s * local[1]);
        p.y = float(b.y + s * local[0] + c * local[1]);
        p.z = float(b.z + local[2]);
        p.intensity = rng.uniformf(0.f, 1.f);
        p.elongation = rng.uniformf(0.f, 1.f);
        scene.cloud.points.push_back(p);
        scene.cloud.labels.push_back(label);
    }
}

}  // namespace detail

inline Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Scene scene;
    Rng rng(spec.seed);

    // ground plane
    for (int32_t i = 0; i < spec.ground_points; ++i) {
        Point p;
        p.x = rng.uniformf(float(-spec.extent), float(spec.extent));
        p.y = rng.uniformf(float(-spec.extent), float(spec.extent));
        p.z = float(rng.normal(0.0, spec.noise_sigma));
        p.intensity = rng.uniformf(0.f, 1.f);
        p.elongation = rng.uniformf(0.f, 1.f);
        scene.cloud.points.push_back(p);
        scene.cloud.labels.push_back(kRoadClass);
    }

    // walls along alternating scene edges
    for (int32_t wi = 0; wi < spec.walls; ++wi) {
        const bool along_x = wi % 2 == 0;
        const double offset = (wi % 4 < 2 ? 1.0 : -1.0) * (spec.extent - 0.3);
        for (int32_t i = 0; i < spec.points_per_object; ++i) {
            Point p;
            const float run = rng.uniformf(float(-spec.extent), float(spec.extent));
            p.x = along_x ? run : float(offset + rng.normal(0.0, spec.noise_sigma));
            p.y = along_x ? float(offset + rng.normal(0.0, spec.noise_sigma)) : run;
            p.z = rng.uniformf(0.f, 2.5f);
            p.intensity = rng.uniformf(0.f, 1.f);
            p.elongation = rng.uniformf(0.f, 1.f);
            scene.cloud.points.push_back(p);
            scene.cloud.labels.push_back(kWallClass);
        }
    }

    // poles
    for (int32_t pi = 0; pi < spec.poles; ++pi) {
        const double px = rng.uniform(-spec.extent + 1.0, spec.extent - 1.0);
        const double py = rng.uniform(-spec.extent + 1.0, spec.extent - 1.0);
        for (int32_t i = 0; i < spec.points_per_object / 2; ++i) {
            const double ang = rng.uniform(0.0, 2.0 * kPi);
            Point p;
            p.x = float(px + 0.05 * std::cos(ang));
            p.y = float(py + 0.05 * std::sin(ang));
            p.z = rng.uniformf(0.f, 3.f);
            p.intensity = rng.uniformf(0.f, 1.f);
            p.elongation = rng.uniformf(0.f, 1.f);
            scene.cloud.points.push_back(p);
            scene.cloud.labels.push_back(kPoleClass);
        }
    }

    // thing objects with exact GT boxes, placed with a minimum separation
    auto place_boxes = [&](int32_t count, int32_t cls, double l, double w, double h) {
        for (int32_t bi = 0; bi < count; ++bi) {
            Box b;
            b.cls = cls;
            b.l = float(l);
            b.w = float(w);
            b.h = float(h);
            b.score = 1.f;
            b.rect_score = 1.f;
            for (int attempt = 0; attempt < 200; ++attempt) {
                b.x = float(rng.uniform(-spec.extent + 2.5, spec.extent - 2.5));
                b.y = float(rng.uniform(-spec.extent + 2.5, spec.extent - 2.5));
                bool clear = true;
                for (const Box& other : scene.gt_boxes) {
                    const double d = std::hypot(b.x - other.x, b.y - other.y);
                    if (d < 0.75 * (b.l + other.l)) clear = false;
                }
                if (clear) break;
            }
            b.z = float(h * 0.5);
            b.yaw = rng.uniformf(float(-kPi), float(kPi));
            scene.gt_boxes.push_back(b);
            detail::add_box_points(scene, rng, b, spec.points_per_object, spec.noise_sigma, cls);
        }
    };
    place_boxes(spec.vehicles, kVehicleClass, 4.2, 1.9, 1.6);
    place_boxes(spec.pedestrians, kPedestrianClass, 0.8, 0.8, 1.75);

    scene.cloud.resize_mask_current();
    return scene;
}

}  // namespace mvx
