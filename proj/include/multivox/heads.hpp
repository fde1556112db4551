#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "multivox/dense2d.hpp"
#include "multivox/point_cloud.hpp"
#include "multivox/sparse_tensor.hpp"
#include "multivox/voxelizer.hpp"

namespace mvx {

// Cell <-> meter mapping of the stride-8 BEV plane.
struct BevGeometry {
    double cell_x = 0.8, cell_y = 0.8;
    double min_x = -75.2, min_y = -75.2;
    double min_z = -2.0, max_z = 4.0;
    double max_x = 75.2, max_y = 75.2;
    int32_t h = 188, w = 188;

    static BevGeometry from(const VoxelizationConfig& cfg, int32_t stride = 8) {
        BevGeometry g;
        g.cell_x = cfg.voxel_size[0] * stride;
        g.cell_y = cfg.voxel_size[1] * stride;
        g.min_x = cfg.range_min[0];
        g.min_y = cfg.range_min[1];
        g.max_x = cfg.range_max[0];
        g.max_y = cfg.range_max[1];
        g.min_z = cfg.range_min[2];
        g.max_z = cfg.range_max[2];
        // repeated ceil-halving, matching the encoder's shape arithmetic
        auto grid = cfg.grid_shape();
        int32_t hh = grid[1], ww = grid[2];
        for (int32_t s = 1; s < stride; s *= 2) {
            hh = (hh + 1) / 2;
            ww = (ww + 1) / 2;
        }
        g.h = hh;
        g.w = ww;
        return g;
    }

    // continuous cell coordinates with cell centers at integers
    double cell_u(double x) const { return (x - min_x) / cell_x - 0.5; }
    double cell_v(double y) const { return (y - min_y) / cell_y - 0.5; }
};

// Per-voxel segmentation logits: one linear layer on the decoder output.
inline Mat seg_head(const SparseTensor& decoder_out, const Mat& w,
                    const std::vector<float>& bias) {
    return linear(decoder_out.features, w, bias);
}

struct BevSegWeights {
    Conv2dWeights c0, c1;  // 3x3 stack
    NormParams n0, n1;
    Conv2dWeights out;  // 1x1 to K channels
};

inline DenseBEV bev_seg_head(const DenseBEV& bev, const BevSegWeights& w) {
    DenseBEV x = conv2d(bev, w.c0);
    norm_relu_2d(x, w.n0);
    x = conv2d(x, w.c1);
    norm_relu_2d(x, w.n1);
    return conv2d(x, w.out);
}

// Coarse BEV ground truth: majority current-frame point label per cell,
// kIgnoreLabel where no labeled point falls.
inline std::vector<int32_t> bev_majority_targets(const PointCloud& pc, const BevGeometry& g) {
    if (!pc.has_labels()) throw DataError("bev_majority_targets: cloud has no labels");
    int32_t max_label = 0;
    for (int32_t l : pc.labels) max_label = std::max(max_label, l);
    std::vector<int32_t> votes(size_t(g.h) * g.w * (max_label + 1), 0);
    for (size_t i = 0; i < pc.size(); ++i) {
        if (!pc.current_mask.empty() && !pc.current_mask[i]) continue;
        const int32_t l = pc.labels[i];
        if (l == kIgnoreLabel) continue;
        const int32_t cx = int32_t(std::floor((pc.points[i].x - g.min_x) / g.cell_x));
        const int32_t cy = int32_t(std::floor((pc.points[i].y - g.min_y) / g.cell_y));
        if (cx < 0 || cx >= g.w || cy < 0 || cy >= g.h) continue;
        ++votes[(size_t(cy) * g.w + cx) * (max_label + 1) + l];
    }
    std::vector<int32_t> out(size_t(g.h) * g.w, kIgnoreLabel);
    for (size_t cell = 0; cell < out.size(); ++cell) {
        int32_t best = kIgnoreLabel, best_count = 0;
        for (int32_t l = 1; l <= max_label; ++l) {
            const int32_t cnt = votes[cell * (max_label + 1) + l];
            if (cnt > best_count) {
                best_count = cnt;
                best = l;
            }
        }
        out[cell] = best;
    }
    return out;
}

// Center-style detection output. Heatmap/iou are post-sigmoid; reg channels
// are (dx, dy, z, log w, log l, log h, sin yaw, cos yaw).
struct DetGrid {
    DenseBEV heatmap;  // thing classes x H x W, in (0,1)
    DenseBEV reg;      // 8 x H x W
    DenseBEV iou;      // 1 x H x W, in (0,1)
};

constexpr int32_t kRegChannels = 8;

struct DetBranchWeights {
    Conv2dWeights c0;  // 3x3
    NormParams n0;
    Conv2dWeights out;  // 1x1
};

struct DetHeadWeights {
    DetBranchWeights hm, reg, iou;
};

inline void sigmoid_inplace(DenseBEV& m) {
    for (auto& v : m.v) v = 1.f / (1.f + std::exp(-v));
}

inline DenseBEV det_branch(const DenseBEV& bev, const DetBranchWeights& w) {
    DenseBEV x = conv2d(bev, w.c0);
    norm_relu_2d(x, w.n0);
    return conv2d(x, w.out);
}

inline DetGrid det_head(const DenseBEV& bev, const DetHeadWeights& w) {
    DetGrid g;
    g.heatmap = det_branch(bev, w.hm);
    sigmoid_inplace(g.heatmap);
    g.reg = det_branch(bev, w.reg);
    g.iou = det_branch(bev, w.iou);
    sigmoid_inplace(g.iou);
    if (g.reg.channels != kRegChannels) throw DataError("det_head: reg branch must have 8 channels");
    return g;
}

// Decoded oriented box. size is (w,l,h) with l along the heading axis.
struct Box {
    float x = 0, y = 0, z = 0;
    float w = 0, l = 0, h = 0;
    float yaw = 0;
    int32_t cls = 0;       // semantic class id
    float score = 0;       // raw heatmap peak
    float rect_score = 0;  // IoU-rectified score
};

// Peak selection (3x3 max pool equality) + top_k + IoU rectification
// raw^(1-beta) * iou^beta. Output sorted by rectified score descending,
// ties by (class, y, x).
inline std::vector<Box> decode_boxes(const DetGrid& g, const BevGeometry& geo,
                                     const std::vector<int32_t>& thing_classes,
                                     int32_t top_k = 100, float score_thresh = 0.1f,
                                     float beta = 0.5f) {
    struct Peak {
        float score;
        int32_t c, y, x;
    };
    std::vector<Peak> peaks;
    const DenseBEV& hm = g.heatmap;
    if (int32_t(thing_classes.size()) != hm.channels)
        throw DataError("decode_boxes: thing class list does not match heatmap channels");
    for (int32_t c = 0; c < hm.channels; ++c)
        for (int32_t y = 0; y < hm.h; ++y)
            for (int32_t x = 0; x < hm.w; ++x) {
                const float v = hm.at(c, y, x);
                if (v < score_thresh) continue;
                bool is_max = true;
                for (int32_t dy = -1; dy <= 1 && is_max; ++dy)
                    for (int32_t dx = -1; dx <= 1; ++dx) {
                        const int32_t ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= hm.h || nx < 0 || nx >= hm.w) continue;
                        if (hm.at(c, ny, nx) > v) {
                            is_max = false;
                            break;
                        }
                    }
                if (is_max) peaks.push_back({v, c, y, x});
            }
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.c, a.y, a.x) < std::tie(b.c, b.y, b.x);
    });
    if (int32_t(peaks.size()) > top_k) peaks.resize(size_t(top_k));

    std::vector<Box> boxes;
    boxes.reserve(peaks.size());
    for (const Peak& p : peaks) {
        Box b;
        const float dx = g.reg.at(0, p.y, p.x), dy = g.reg.at(1, p.y, p.x);
        b.x = float(std::clamp((p.x + double(dx)) * geo.cell_x + geo.min_x, geo.min_x, geo.max_x));
        b.y = float(std::clamp((p.y + double(dy)) * geo.cell_y + geo.min_y, geo.min_y, geo.max_y));
        b.z = float(std::clamp(double(g.reg.at(2, p.y, p.x)), geo.min_z, geo.max_z));
        b.w = std::exp(g.reg.at(3, p.y, p.x));
        b.l = std::exp(g.reg.at(4, p.y, p.x));
        b.h = std::exp(g.reg.at(5, p.y, p.x));
        b.yaw = std::atan2(g.reg.at(6, p.y, p.x), g.reg.at(7, p.y, p.x));
        b.cls = thing_classes[p.c];
        b.score = p.score;
        const float iou = g.iou.at(0, p.y, p.x);
        b.rect_score = std::pow(p.score, 1.f - beta) * std::pow(iou, beta);
        boxes.push_back(b);
    }
    std::sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) {
        if (a.rect_score != b.rect_score) return a.rect_score > b.rect_score;
        return std::tie(a.cls, a.y, a.x) < std::tie(b.cls, b.y, b.x);
    });
    return boxes;
}

inline void write_boxes_csv(const std::vector<Box>& boxes, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "class,score,rect_score,x,y,z,w,l,h,yaw\n";
    char line[256];
    for (const Box& b : boxes) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      b.cls, b.score, b.rect_score, b.x, b.y, b.z, b.w, b.l, b.h, b.yaw);
        out << line;
    }
}

inline std::vector<Box> read_boxes_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<Box> boxes;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("class,", 0) == 0 || line[0] == '#') continue;
        Box b;
        if (std::sscanf(line.c_str(), "%d,%f,%f,%f,%f,%f,%f,%f,%f,%f", &b.cls, &b.score,
                        &b.rect_score, &b.x, &b.y, &b.z, &b.w, &b.l, &b.h, &b.yaw) != 10)
            throw ParseError(path + ":" + std::to_string(line_no) + ": bad box row");
        boxes.push_back(b);
    }
    return boxes;
}

}  // namespace mvx
