#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "multivox/dense2d.hpp"
#include "multivox/heads.hpp"
#include "multivox/losses.hpp"
#include "multivox/point_cloud.hpp"
#include "multivox/sparse_ops.hpp"

namespace mvx {

constexpr int32_t kNoBox = -1;  // the "unrefined" assignment

constexpr int32_t kLocalFeatureDim = 6;  // local xyz + half-size-normalized xyz

inline bool is_thing_class(int32_t label, const std::vector<int32_t>& thing_classes) {
    return std::find(thing_classes.begin(), thing_classes.end(), label) != thing_classes.end();
}

// Yaw-aligned local coordinates relative to the box center.
inline std::array<float, 3> box_local_xyz(float px, float py, float pz, const Box& b) {
    const double dx = double(px) - b.x, dy = double(py) - b.y, dz = double(pz) - b.z;
    const double c = std::cos(-double(b.yaw)), s = std::sin(-double(b.yaw));
    return {float(c * dx - s * dy), float(s * dx + c * dy), float(dz)};
}

inline bool point_in_box(float px, float py, float pz, const Box& b, float margin) {
    const auto local = box_local_xyz(px, py, pz, b);
    return std::abs(local[0]) <= b.l * 0.5f + margin && std::abs(local[1]) <= b.w * 0.5f + margin &&
           std::abs(local[2]) <= b.h * 0.5f + margin;
}

// Local coordinates plus half-size-normalized coordinates.
inline std::array<float, kLocalFeatureDim> local_transform(float px, float py, float pz,
                                                           const Box& b) {
    const auto local = box_local_xyz(px, py, pz, b);
    return {local[0], local[1], local[2],
            local[0] / std::max(b.l * 0.5f, 1e-6f),
            local[1] / std::max(b.w * 0.5f, 1e-6f),
            local[2] / std::max(b.h * 0.5f, 1e-6f)};
}

// Point-box index: inside the (margin-enlarged) yaw-oriented volume, ties to
// the highest rectified score; stuff-labeled points stay unassigned.
inline std::vector<int32_t> assign_points_to_boxes(const PointCloud& pc,
                                                   const std::vector<Box>& boxes,
                                                   const std::vector<int32_t>& stage1_labels,
                                                   const std::vector<int32_t>& thing_classes,
                                                   float margin = 0.1f) {
    if (stage1_labels.size() != pc.size())
        throw DataError("assign_points_to_boxes: label count mismatch");
    std::vector<int32_t> idx(pc.size(), kNoBox);
    for (size_t i = 0; i < pc.size(); ++i) {
        if (!is_thing_class(stage1_labels[i], thing_classes)) continue;
        const Point& p = pc.points[i];
        int32_t best = kNoBox;
        float best_score = -1.f;
        for (size_t b = 0; b < boxes.size(); ++b) {
            if (!point_in_box(p.x, p.y, p.z, boxes[b], margin)) continue;
            if (boxes[b].rect_score > best_score) {
                best_score = boxes[b].rect_score;
                best = int32_t(b);
            }
        }
        idx[i] = best;
    }
    return idx;
}

// Bilinear BEV samples at the box center and 4 side midpoints, concatenated.
inline std::vector<float> extract_box_bev_features(const DenseBEV& bev, const Box& b,
                                                   const BevGeometry& geo) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hx = 0.5 * b.l * c, hy = 0.5 * b.l * s;   // heading half-offset
    const double px = -0.5 * b.w * s, py = 0.5 * b.w * c;  // perpendicular half-offset
    const std::array<std::array<double, 2>, 5> samples{{{double(b.x), double(b.y)},
                                                        {b.x + hx, b.y + hy},
                                                        {b.x - hx, b.y - hy},
                                                        {b.x + px, b.y + py},
                                                        {b.x - px, b.y - py}}};
    std::vector<float> out(size_t(5) * bev.channels, 0.f);
    for (size_t i = 0; i < samples.size(); ++i)
        bilinear_sample(bev, geo.cell_u(samples[i][0]), geo.cell_v(samples[i][1]),
                        out.data() + i * bev.channels);
    return out;
}

// Point-based refinement backbone: per-point MLP, per-box max + attention
// aggregation fused with the BEV box features, softmax box scores and sigmoid
// point mask scores.
struct Stage2Weights {
    Mat point_w0, point_w1;
    std::vector<float> point_b0, point_b1;
    std::vector<float> attn;  // scoring vector, length = point hidden
    Mat box_w0, box_w1, box_cls_w;
    std::vector<float> box_b0, box_b1, box_cls_b;
    Mat mask_w0, mask_w1;
    std::vector<float> mask_b0, mask_b1;
};

struct Stage2Scores {
    std::vector<float> s_point;  // length N, 0 for unassigned points
    Mat s_box;                   // B x (thing classes + 1), rows sum to 1
};

inline Stage2Scores stage2_forward(const Mat& point_feats, const Mat& box_bev_feats,
                                   const std::vector<int32_t>& idx, const Stage2Weights& w,
                                   int32_t num_thing) {
    const int32_t n = point_feats.rows;
    const int32_t num_boxes = box_bev_feats.rows;
    if (int32_t(idx.size()) != n) throw DataError("stage2_forward: index length mismatch");

    Stage2Scores out;
    out.s_point.assign(size_t(n), 0.f);
    out.s_box = Mat(num_boxes, num_thing + 1, 0.f);

    // per-point MLP (relu between layers, relu on the embedding)
    Mat h = linear(point_feats, w.point_w0, w.point_b0);
    for (auto& v : h.v) v = std::max(v, 0.f);
    h = linear(h, w.point_w1, w.point_b1);
    for (auto& v : h.v) v = std::max(v, 0.f);
    const int32_t hidden = h.cols;

    std::vector<std::vector<int32_t>> members(size_t(std::max(num_boxes, 0)));
    for (int32_t i = 0; i < n; ++i)
        if (idx[i] >= 0 && idx[i] < num_boxes) members[idx[i]].push_back(i);

    Mat box_embed(num_boxes, hidden, 0.f);
    for (int32_t b = 0; b < num_boxes; ++b) {
        const auto& m = members[b];
        if (m.empty()) {
            out.s_box.at(b, num_thing) = 1.f;  // empty box: certain "unrefined"
            continue;
        }
        // max pool over members
        std::vector<float> mx(hidden, -std::numeric_limits<float>::infinity());
        for (int32_t i : m)
            for (int32_t c = 0; c < hidden; ++c) mx[c] = std::max(mx[c], h.at(i, c));
        // dot-product attention over members
        std::vector<double> scores(m.size());
        double smax = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < m.size(); ++j) {
            double acc = 0;
            for (int32_t c = 0; c < hidden; ++c) acc += double(w.attn[c]) * h.at(m[j], c);
            scores[j] = acc;
            smax = std::max(smax, acc);
        }
        double denom = 0;
        for (double& sc : scores) {
            sc = std::exp(sc - smax);
            denom += sc;
        }
        std::vector<double> attn_sum(hidden, 0.0);
        for (size_t j = 0; j < m.size(); ++j)
            for (int32_t c = 0; c < hidden; ++c)
                attn_sum[c] += scores[j] / denom * h.at(m[j], c);

        // box feature: concat(max, attention, bev samples) -> MLP -> softmax
        Mat feat(1, 2 * hidden + box_bev_feats.cols);
        for (int32_t c = 0; c < hidden; ++c) feat.at(0, c) = mx[c];
        for (int32_t c = 0; c < hidden; ++c) feat.at(0, hidden + c) = float(attn_sum[c]);
        for (int32_t c = 0; c < box_bev_feats.cols; ++c)
            feat.at(0, 2 * hidden + c) = box_bev_feats.at(b, c);
        Mat bh = linear(feat, w.box_w0, w.box_b0);
        for (auto& v : bh.v) v = std::max(v, 0.f);
        bh = linear(bh, w.box_w1, w.box_b1);
        for (auto& v : bh.v) v = std::max(v, 0.f);
        for (int32_t c = 0; c < bh.cols; ++c) box_embed.at(b, c) = bh.at(0, c);
        Mat logits = linear(bh, w.box_cls_w, w.box_cls_b);
        Mat probs = softmax_rows(logits);
        for (int32_t c = 0; c < probs.cols; ++c) out.s_box.at(b, c) = probs.at(0, c);
    }

    // per-point mask score: concat(point embedding, box embedding) -> sigmoid
    Mat pm(1, 2 * hidden);
    for (int32_t i = 0; i < n; ++i) {
        const int32_t b = idx[i];
        if (b < 0 || b >= num_boxes) continue;
        for (int32_t c = 0; c < hidden; ++c) {
            pm.at(0, c) = h.at(i, c);
            pm.at(0, hidden + c) = box_embed.at(b, c);
        }
        Mat mh = linear(pm, w.mask_w0, w.mask_b0);
        for (auto& v : mh.v) v = std::max(v, 0.f);
        Mat s = linear(mh, w.mask_w1, w.mask_b1);
        out.s_point[i] = 1.f / (1.f + std::exp(-s.at(0, 0)));
    }
    return out;
}

// Fusion rule: a point flips to its box's class iff the box is confidently
// classified as a real thing class and the point's mask score passes.
struct FusedLabels {
    std::vector<int32_t> labels;
    std::vector<int32_t> refined_box;  // box index per refined point, kNoBox otherwise
};

inline FusedLabels fuse_scores(const Mat& stage1_probs, const Stage2Scores& s2,
                               const std::vector<int32_t>& idx, const std::vector<Box>& boxes,
                               const std::vector<int32_t>& thing_classes, float tau_mask = 0.5f,
                               float tau_box = 0.5f) {
    const int32_t n = stage1_probs.rows;
    if (s2.s_box.rows != int32_t(boxes.size()))
        throw DataError("fuse_scores: score rows do not match the box list");
    FusedLabels out;
    out.labels.resize(size_t(n));
    out.refined_box.assign(size_t(n), kNoBox);
    const int32_t unref_col = int32_t(thing_classes.size());

    for (int32_t i = 0; i < n; ++i) {
        out.labels[i] = argmax_row(stage1_probs, i) + 1;
        const int32_t b = idx[i];
        if (b < 0 || b >= s2.s_box.rows) continue;
        const int32_t cls_col = argmax_row(s2.s_box, b);
        if (cls_col == unref_col) continue;
        if (s2.s_box.at(b, cls_col) < tau_box) continue;
        if (s2.s_point[i] < tau_mask) continue;
        out.labels[i] = thing_classes[cls_col];
        out.refined_box[i] = b;
    }
    return out;
}

// Panoptic pairs: refined points get their box index + 1, everything else 0.
inline std::vector<std::pair<int32_t, int32_t>> build_panoptic(
    const FusedLabels& fused) {
    std::vector<std::pair<int32_t, int32_t>> out(fused.labels.size());
    for (size_t i = 0; i < fused.labels.size(); ++i) {
        const int32_t inst = fused.refined_box[i] >= 0 ? fused.refined_box[i] + 1 : 0;
        out[i] = {fused.labels[i], inst};
    }
    return out;
}

// BEV IoU of yaw-oriented rectangles via convex polygon clipping.
namespace detail {

using Poly = std::vector<std::array<double, 2>>;

inline Poly box_corners(const Box& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = b.l * 0.5, hw = b.w * 0.5;
    Poly p(4);
    // counter-clockwise, as the clipper's inside test expects
    const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
    for (int i = 0; i < 4; ++i)
        p[i] = {b.x + c * local[i][0] - s * local[i][1], b.y + s * local[i][0] + c * local[i][1]};
    return p;
}

inline double poly_area(const Poly& p) {
    double a = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        const auto& u = p[i];
        const auto& v = p[(i + 1) % p.size()];
        a += u[0] * v[1] - v[0] * u[1];
    }
    return std::abs(a) * 0.5;
}

// Sutherland-Hodgman clip of subject against a convex clipper.
inline Poly clip_poly(const Poly& subject, const Poly& clipper) {
    Poly out = subject;
    for (size_t i = 0; i < clipper.size() && !out.empty(); ++i) {
        const auto& a = clipper[i];
        const auto& b = clipper[(i + 1) % clipper.size()];
        auto inside = [&](const std::array<double, 2>& p) {
            return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12;
        };
        auto intersect = [&](const std::array<double, 2>& p, const std::array<double, 2>& q) {
            const double a1 = b[1] - a[1], b1 = a[0] - b[0];
            const double c1 = a1 * a[0] + b1 * a[1];
            const double a2 = q[1] - p[1], b2 = p[0] - q[0];
            const double c2 = a2 * p[0] + b2 * p[1];
            const double det = a1 * b2 - a2 * b1;
            if (std::abs(det) < 1e-12) return p;
            return std::array<double, 2>{(b2 * c1 - b1 * c2) / det, (a1 * c2 - a2 * c1) / det};
        };
        Poly next;
        for (size_t j = 0; j < out.size(); ++j) {
            const auto& cur = out[j];
            const auto& prev = out[(j + out.size() - 1) % out.size()];
            const bool cur_in = inside(cur), prev_in = inside(prev);
            if (cur_in) {
                if (!prev_in) next.push_back(intersect(prev, cur));
                next.push_back(cur);
            } else if (prev_in) {
                next.push_back(intersect(prev, cur));
            }
        }
        out = std::move(next);
    }
    return out;
}

}  // namespace detail

inline double rotated_iou_bev(const Box& a, const Box& b) {
    const auto pa = detail::box_corners(a);
    const auto pb = detail::box_corners(b);
    const double inter = detail::poly_area(detail::clip_poly(pa, pb));
    const double uni = detail::poly_area(pa) + detail::poly_area(pb) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

// Training targets for the refinement stage: box rows get their best-matching
// GT class (or the unrefined column when IoU < 0.5), point rows get GT box
// membership. Gradients are w.r.t. the predicted probabilities.
struct Stage2LossParts {
    double box_ce = 0.0;
    double point_bce = 0.0;
    Mat box_grad;                    // d box_ce / d s_box
    std::vector<double> point_grad;  // d point_bce / d s_point
};

inline Stage2LossParts stage2_losses(const Stage2Scores& s2, const std::vector<int32_t>& idx,
                                     const PointCloud& pc, const std::vector<Box>& pred_boxes,
                                     const std::vector<Box>& gt_boxes,
                                     const std::vector<int32_t>& thing_classes) {
    Stage2LossParts out;
    const int32_t unref_col = int32_t(thing_classes.size());

    // box-wise cross-entropy on probability rows
    out.box_grad = Mat(s2.s_box.rows, s2.s_box.cols, 0.f);
    if (s2.s_box.rows > 0) {
        double total = 0.0;
        for (int32_t b = 0; b < s2.s_box.rows; ++b) {
            int32_t target = unref_col;
            double best_iou = 0.0;
            for (const Box& g : gt_boxes) {
                const double iou = rotated_iou_bev(pred_boxes[b], g);
                if (iou >= 0.5 && iou > best_iou) {
                    best_iou = iou;
                    for (size_t c = 0; c < thing_classes.size(); ++c)
                        if (thing_classes[c] == g.cls) target = int32_t(c);
                }
            }
            const double p = std::clamp(double(s2.s_box.at(b, target)), double(kProbClamp),
                                        1.0 - kProbClamp);
            total += -std::log(p);
            out.box_grad.at(b, target) = float(-1.0 / (p * double(s2.s_box.rows)));
        }
        out.box_ce = total / double(s2.s_box.rows);
    }

    // point-wise BCE against GT box membership, over assigned points only
    std::vector<uint8_t> member(pc.size(), 0), valid(pc.size(), 0);
    for (size_t i = 0; i < pc.size(); ++i) {
        if (idx[i] < 0) continue;
        valid[i] = 1;
        for (const Box& g : gt_boxes)
            if (point_in_box(pc.points[i].x, pc.points[i].y, pc.points[i].z, g, 0.f)) {
                member[i] = 1;
                break;
            }
    }
    VecLossGrad bce = binary_cross_entropy(s2.s_point, member, valid);
    out.point_bce = bce.value;
    out.point_grad = std::move(bce.grad);
    return out;
}

}  // namespace mvx
