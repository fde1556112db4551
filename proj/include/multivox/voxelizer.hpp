#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "multivox/common.hpp"
#include "multivox/point_cloud.hpp"

namespace mvx {

// Voxel coordinate triple in canonical (z,y,x) order.
using Coord = std::array<int32_t, 3>;

inline uint64_t pack_coord(int32_t z, int32_t y, int32_t x) {
    return (uint64_t(uint32_t(z)) << 42) | (uint64_t(uint32_t(y) & 0x1fffff) << 21) |
           uint64_t(uint32_t(x) & 0x1fffff);
}
inline uint64_t pack_coord(const Coord& c) { return pack_coord(c[0], c[1], c[2]); }
inline Coord unpack_coord(uint64_t key) {
    return Coord{int32_t(key >> 42), int32_t((key >> 21) & 0x1fffff), int32_t(key & 0x1fffff)};
}

enum class OobPolicy : uint8_t { drop, clamp };

struct VoxelizationConfig {
    std::array<double, 3> voxel_size{0.1, 0.1, 0.15};        // (sx, sy, sz) meters
    std::array<double, 3> range_min{-75.2, -75.2, -2.0};
    std::array<double, 3> range_max{75.2, 75.2, 4.0};
    OobPolicy oob_policy = OobPolicy::drop;

    // Grid extents, canonical (D,H,W) = (z,y,x) order.
    std::array<int32_t, 3> grid_shape() const {
        std::array<int32_t, 3> g{};
        for (int a = 0; a < 3; ++a) {
            const double span = (range_max[a] - range_min[a]) / voxel_size[a];
            g[2 - a] = int32_t(std::llround(span));
        }
        return g;
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (!(voxel_size[a] > 0)) throw DataError("voxel_size must be positive");
            if (!(range_max[a] > range_min[a])) throw DataError("range_max must exceed range_min");
            const double span = (range_max[a] - range_min[a]) / voxel_size[a];
            if (std::abs(span - std::llround(span)) > 1e-6 || std::llround(span) < 1)
                throw DataError("range span must be an integer number of voxels");
        }
    }
};

// Point -> voxel assignment. coords are unique, sorted lexicographically by
// (z,y,x). point_to_voxel holds kNoVoxel for dropped points; fallback_row
// additionally resolves dropped points to their clamped in-range neighbor
// when that voxel happens to be active.
struct VoxelMap {
    std::vector<Coord> coords;
    std::vector<int32_t> point_to_voxel;
    std::vector<int32_t> fallback_row;
    std::vector<int32_t> counts;
    std::array<int32_t, 3> grid{0, 0, 0};
    int64_t dropped = 0;

    int32_t num_voxels() const { return int32_t(coords.size()); }
    bool all_dropped() const { return coords.empty() && !point_to_voxel.empty(); }
};

inline VoxelMap compute_voxel_indices(const PointCloud& pc, const VoxelizationConfig& cfg) {
    cfg.validate();
    const auto grid = cfg.grid_shape();  // (D,H,W)
    const size_t n = pc.size();

    VoxelMap vm;
    vm.grid = grid;
    vm.point_to_voxel.assign(n, kNoVoxel);
    vm.fallback_row.assign(n, kNoVoxel);

    // Raw indices per point; clamp/drop decided on the unclamped values.
    std::vector<uint64_t> point_key(n, 0);
    std::vector<uint8_t> kept(n, 0);
    std::vector<uint64_t> clamped_key(n, 0);
    std::vector<uint64_t> keys;
    keys.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const Point& p = pc.points[i];
        const double raw[3] = {
            std::floor((double(p.x) - cfg.range_min[0]) / cfg.voxel_size[0]),
            std::floor((double(p.y) - cfg.range_min[1]) / cfg.voxel_size[1]),
            std::floor((double(p.z) - cfg.range_min[2]) / cfg.voxel_size[2]),
        };
        // grid is (D,H,W); raw is (x,y,z)
        bool in_range = true;
        int32_t idx[3];  // (x,y,z)
        int32_t cl[3];
        for (int a = 0; a < 3; ++a) {
            const int32_t extent = grid[2 - a];
            const int64_t v = int64_t(raw[a]);
            idx[a] = int32_t(v);
            cl[a] = int32_t(std::clamp<int64_t>(v, 0, extent - 1));
            if (v < 0 || v >= extent) in_range = false;
        }
        clamped_key[i] = pack_coord(cl[2], cl[1], cl[0]);
        if (in_range || cfg.oob_policy == OobPolicy::clamp) {
            point_key[i] = in_range ? pack_coord(idx[2], idx[1], idx[0]) : clamped_key[i];
            kept[i] = 1;
            keys.push_back(point_key[i]);
        } else {
            ++vm.dropped;
        }
    }

    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

    vm.coords.reserve(keys.size());
    std::unordered_map<uint64_t, int32_t> row_of;
    row_of.reserve(keys.size() * 2);
    for (size_t r = 0; r < keys.size(); ++r) {
        vm.coords.push_back(unpack_coord(keys[r]));
        row_of.emplace(keys[r], int32_t(r));
    }
    vm.counts.assign(keys.size(), 0);
    for (size_t i = 0; i < n; ++i) {
        if (kept[i]) {
            const int32_t r = row_of.at(point_key[i]);
            vm.point_to_voxel[i] = r;
            vm.fallback_row[i] = r;
            ++vm.counts[r];
        } else {
            auto it = row_of.find(clamped_key[i]);
            vm.fallback_row[i] = it == row_of.end() ? kNoVoxel : it->second;
        }
    }
    return vm;
}

// Per-point MLP for the voxel feature encoder. ReLU between layers, none
// after the last, so a single identity layer is exactly the identity.
struct VfeParams {
    std::vector<Mat> weights;                 // layer l: in x out
    std::vector<std::vector<float>> biases;   // layer l: out

    int32_t in_dim() const { return weights.empty() ? 0 : weights.front().rows; }
    int32_t out_dim() const { return weights.empty() ? 0 : weights.back().cols; }

    void validate() const {
        if (weights.size() != biases.size()) throw DataError("vfe: weight/bias count mismatch");
        for (size_t l = 0; l < weights.size(); ++l) {
            if (int32_t(biases[l].size()) != weights[l].cols)
                throw DataError("vfe: bias length mismatch at layer " + std::to_string(l));
            if (l + 1 < weights.size() && weights[l].cols != weights[l + 1].rows)
                throw DataError("vfe: layer shapes do not chain at layer " + std::to_string(l));
        }
    }

    static VfeParams identity(int32_t dim) {
        VfeParams p;
        p.weights.push_back(Mat::identity(dim));
        p.biases.emplace_back(dim, 0.f);
        return p;
    }

    void apply(const float* in, std::vector<float>& scratch, std::vector<float>& out) const {
        const float* cur = in;
        int32_t cur_dim = in_dim();
        for (size_t l = 0; l < weights.size(); ++l) {
            const Mat& w = weights[l];
            out.assign(size_t(w.cols), 0.f);
            for (int32_t c = 0; c < w.cols; ++c) out[c] = biases[l][c];
            for (int32_t r = 0; r < cur_dim; ++r) {
                const float a = cur[r];
                const float* wr = w.row(r);
                for (int32_t c = 0; c < w.cols; ++c) out[c] += a * wr[c];
            }
            if (l + 1 < weights.size())
                for (auto& v : out) v = std::max(v, 0.f);
            scratch = out;
            cur = scratch.data();
            cur_dim = w.cols;
        }
    }
};

// Per-voxel max over MLP-encoded points (current and past alike).
inline Mat vfe_encode(const PointCloud& pc, const VoxelMap& vm, const VfeParams& params) {
    params.validate();
    if (params.in_dim() != kPointFeatureDim)
        throw DataError("vfe: first layer expects " + std::to_string(kPointFeatureDim) +
                        " inputs, got " + std::to_string(params.in_dim()));
    const int32_t m = vm.num_voxels();
    const int32_t c = params.out_dim();
    Mat feats(m, c, -std::numeric_limits<float>::infinity());

    std::vector<float> scratch, enc;
    for (size_t i = 0; i < pc.size(); ++i) {
        const int32_t r = vm.point_to_voxel[i];
        if (r < 0) continue;
        const Point& p = pc.points[i];
        const float in[kPointFeatureDim] = {p.x, p.y, p.z, p.intensity, p.elongation, p.timestamp};
        params.apply(in, scratch, enc);
        float* row = feats.row(r);
        for (int32_t k = 0; k < c; ++k) row[k] = std::max(row[k], enc[k]);
    }
    return feats;
}

// Most frequent current-frame label per voxel; ties go to the smallest class
// id, voxels with no voting points get kIgnoreLabel.
inline std::vector<int32_t> majority_vote_labels(const PointCloud& pc, const VoxelMap& vm) {
    if (!pc.has_labels()) throw DataError("majority_vote_labels: cloud has no labels");
    int32_t max_label = 0;
    for (int32_t l : pc.labels) max_label = std::max(max_label, l);
    const int32_t m = vm.num_voxels();
    std::vector<int32_t> votes(size_t(m) * size_t(max_label + 1), 0);

    for (size_t i = 0; i < pc.size(); ++i) {
        const int32_t r = vm.point_to_voxel[i];
        if (r < 0) continue;
        if (!pc.current_mask.empty() && !pc.current_mask[i]) continue;
        const int32_t l = pc.labels[i];
        if (l == kIgnoreLabel) continue;
        ++votes[size_t(r) * (max_label + 1) + l];
    }

    std::vector<int32_t> out(m, kIgnoreLabel);
    for (int32_t r = 0; r < m; ++r) {
        int32_t best = kIgnoreLabel, best_count = 0;
        for (int32_t l = 1; l <= max_label; ++l) {
            const int32_t cnt = votes[size_t(r) * (max_label + 1) + l];
            if (cnt > best_count) {
                best_count = cnt;
                best = l;
            }
        }
        out[r] = best;
    }
    return out;
}

inline int32_t most_frequent_label(const std::vector<int32_t>& labels) {
    std::unordered_map<int32_t, int32_t> counts;
    for (int32_t l : labels)
        if (l != kIgnoreLabel) ++counts[l];
    int32_t best = kIgnoreLabel, best_count = 0;
    for (const auto& [l, c] : counts)
        if (c > best_count || (c == best_count && best != kIgnoreLabel && l < best)) {
            best_count = c;
            best = l;
        }
    return best;
}

// Project voxel labels back to points. Dropped points fall back to their
// clamped neighbor voxel when active, else to the most frequent prediction.
inline std::vector<int32_t> devoxelize_labels(const VoxelMap& vm,
                                              const std::vector<int32_t>& voxel_labels) {
    if (int32_t(voxel_labels.size()) != vm.num_voxels())
        throw DataError("devoxelize_labels: label count does not match voxel count");
    const int32_t global = most_frequent_label(voxel_labels);
    std::vector<int32_t> out(vm.point_to_voxel.size(), kIgnoreLabel);
    for (size_t i = 0; i < out.size(); ++i) {
        const int32_t r = vm.point_to_voxel[i] >= 0 ? vm.point_to_voxel[i] : vm.fallback_row[i];
        out[i] = r >= 0 ? voxel_labels[r] : global;
    }
    return out;
}

// Copy voxel feature rows to points; dropped points get zero rows.
inline Mat devoxelize_features(const VoxelMap& vm, const Mat& voxel_features) {
    if (voxel_features.rows != vm.num_voxels())
        throw DataError("devoxelize_features: row count does not match voxel count");
    Mat out(int32_t(vm.point_to_voxel.size()), voxel_features.cols, 0.f);
    for (size_t i = 0; i < vm.point_to_voxel.size(); ++i) {
        const int32_t r = vm.point_to_voxel[i];
        if (r < 0) continue;
        const float* src = voxel_features.row(r);
        std::copy(src, src + voxel_features.cols, out.row(int32_t(i)));
    }
    return out;
}

}  // namespace mvx
