#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "multivox/backbone.hpp"
#include "multivox/config.hpp"
#include "multivox/gcp.hpp"
#include "multivox/heads.hpp"
#include "multivox/point_cloud.hpp"
#include "multivox/stage2.hpp"
#include "multivox/voxelizer.hpp"
#include "multivox/weights.hpp"

namespace mvx {

struct StageTiming {
    std::string name;
    double ms = 0.0;
};

struct Stage1Result {
    bool empty = true;
    VoxelMap vm;
    SparseTensor decoder_out;
    Mat voxel_logits;
    Mat point_probs;                  // N x K, dropped rows one-hot on their fallback label
    std::vector<int32_t> point_labels;
    DenseBEV bev;                     // shared head input
    DenseBEV bev_seg_logits;
    DetGrid det;
    std::vector<Box> boxes;
    std::vector<StageTiming> timings;
};

namespace detail {

struct ScopedTimer {
    std::vector<StageTiming>& sink;
    std::string name;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    ~ScopedTimer() {
        const auto end = std::chrono::steady_clock::now();
        sink.push_back({name, std::chrono::duration<double, std::milli>(end - start).count()});
    }
};

}  // namespace detail

inline Stage1Result run_stage1(const PointCloud& pc, const PipelineConfig& cfg,
                               const PipelineWeights& pw) {
    Stage1Result r;
    {
        detail::ScopedTimer t{r.timings, "voxelize"};
        r.vm = compute_voxel_indices(pc, cfg.vox);
    }
    if (r.vm.num_voxels() == 0) {
        r.point_labels.assign(pc.size(), kIgnoreLabel);
        r.point_probs = Mat(int32_t(pc.size()), cfg.num_classes, 0.f);
        return r;
    }
    r.empty = false;

    SparseTensor feats;
    {
        detail::ScopedTimer t{r.timings, "vfe"};
        feats = sparse_from_voxel_map(r.vm, vfe_encode(pc, r.vm, pw.vfe));
    }
    BackboneState st;
    {
        detail::ScopedTimer t{r.timings, "encoder"};
        st = encode(feats, cfg.backbone, pw.backbone);
    }
    GcpOutput g;
    {
        detail::ScopedTimer t{r.timings, "gcp"};
        g = gcp_forward(st.enc_out[3], cfg.gcp, pw.gcp);
    }
    {
        detail::ScopedTimer t{r.timings, "decoder"};
        r.decoder_out = decode(g.sparse_out, st, cfg.backbone, pw.backbone);
    }
    {
        detail::ScopedTimer t{r.timings, "seg_head"};
        r.voxel_logits = seg_head(r.decoder_out, pw.heads.seg_w, pw.heads.seg_b);
    }
    const Mat voxel_probs = softmax_rows(r.voxel_logits);
    {
        detail::ScopedTimer t{r.timings, "devoxelize"};
        std::vector<int32_t> voxel_labels(r.vm.num_voxels());
        for (int32_t v = 0; v < r.vm.num_voxels(); ++v)
            voxel_labels[v] = argmax_row(voxel_probs, v) + 1;
        r.point_labels = devoxelize_labels(r.vm, voxel_labels);
        r.point_probs = devoxelize_features(r.vm, voxel_probs);
        for (size_t i = 0; i < pc.size(); ++i)
            if (r.vm.point_to_voxel[i] < 0 && r.point_labels[i] != kIgnoreLabel)
                r.point_probs.at(int32_t(i), r.point_labels[i] - 1) = 1.f;
    }
    r.bev = std::move(g.bev);
    {
        detail::ScopedTimer t{r.timings, "bev_seg_head"};
        r.bev_seg_logits = bev_seg_head(r.bev, pw.heads.bev);
    }
    {
        detail::ScopedTimer t{r.timings, "det_head"};
        r.det = det_head(r.bev, pw.heads.det);
        r.boxes = decode_boxes(r.det, BevGeometry::from(cfg.vox), cfg.thing_classes, cfg.top_k,
                               cfg.score_thresh, cfg.iou_beta);
    }
    return r;
}

struct PipelineFlags {
    bool tta = false;
    bool stage2 = false;
    bool panoptic = false;
};

struct PipelineResult {
    std::vector<int32_t> labels;
    Mat point_probs;  // aggregated over TTA variants
    std::vector<Box> boxes;
    std::vector<std::pair<int32_t, int32_t>> panoptic;  // (semantic, instance)
    Stage1Result stage1;  // identity-variant internals
    int32_t tta_variants = 1;
};

// Per-point second-stage features: box-local coordinates for assigned points
// concatenated with the devoxelized decoder features.
inline Mat build_stage2_point_features(const PointCloud& pc, const std::vector<int32_t>& idx,
                                       const std::vector<Box>& boxes, const Mat& point_voxel_feats) {
    Mat out(int32_t(pc.size()), kLocalFeatureDim + point_voxel_feats.cols, 0.f);
    for (size_t i = 0; i < pc.size(); ++i) {
        float* dst = out.row(int32_t(i));
        if (idx[i] >= 0) {
            const auto local =
                local_transform(pc.points[i].x, pc.points[i].y, pc.points[i].z, boxes[idx[i]]);
            std::copy(local.begin(), local.end(), dst);
        }
        const float* vf = point_voxel_feats.row(int32_t(i));
        std::copy(vf, vf + point_voxel_feats.cols, dst + kLocalFeatureDim);
    }
    return out;
}

inline PipelineResult run_pipeline(const PointCloud& pc, const PipelineConfig& cfg,
                                   const PipelineWeights& pw, const PipelineFlags& flags) {
    PipelineResult res;

    std::vector<Mat> variant_probs;
    if (flags.tta) {
        auto variants = make_tta_set(pc, cfg.tta);
        res.tta_variants = int32_t(variants.size());
        for (size_t v = 0; v < variants.size(); ++v) {
            Stage1Result r = run_stage1(variants[v].second, cfg, pw);
            variant_probs.push_back(std::move(r.point_probs));
            if (v == 0) res.stage1 = std::move(r);
        }
    } else {
        res.stage1 = run_stage1(pc, cfg, pw);
        variant_probs.push_back(res.stage1.point_probs);
    }

    if (res.stage1.empty) {
        res.labels.assign(pc.size(), kIgnoreLabel);
        res.point_probs = Mat(int32_t(pc.size()), cfg.num_classes, 0.f);
        return res;
    }

    res.point_probs = aggregate_tta_probs(variant_probs);
    res.labels.resize(pc.size());
    for (size_t i = 0; i < pc.size(); ++i)
        res.labels[i] = argmax_row(res.point_probs, int32_t(i)) + 1;
    res.boxes = res.stage1.boxes;

    FusedLabels fused;
    fused.labels = res.labels;
    fused.refined_box.assign(pc.size(), kNoBox);
    if (flags.stage2 && pw.has_stage2 && !res.boxes.empty()) {
        const std::vector<int32_t> idx = assign_points_to_boxes(pc, res.boxes, res.labels,
                                                                cfg.thing_classes, cfg.box_margin);
        const Mat point_voxel_feats =
            devoxelize_features(res.stage1.vm, res.stage1.decoder_out.features);
        const Mat p2nd = build_stage2_point_features(pc, idx, res.boxes, point_voxel_feats);
        const BevGeometry geo = BevGeometry::from(cfg.vox);
        Mat b2(int32_t(res.boxes.size()), 5 * res.stage1.bev.channels);
        for (size_t b = 0; b < res.boxes.size(); ++b) {
            const auto f = extract_box_bev_features(res.stage1.bev, res.boxes[b], geo);
            std::copy(f.begin(), f.end(), b2.row(int32_t(b)));
        }
        const Stage2Scores scores =
            stage2_forward(p2nd, b2, idx, pw.stage2, int32_t(cfg.thing_classes.size()));
        fused = fuse_scores(res.point_probs, scores, idx, res.boxes, cfg.thing_classes,
                            cfg.tau_mask, cfg.tau_box);
        res.labels = fused.labels;
    }
    if (flags.panoptic) res.panoptic = build_panoptic(fused);
    return res;
}

// Architecture arithmetic without running anything: per-stage shapes, BEV
// channel bookkeeping, decoder widths.
struct ShapeAudit {
    std::array<std::array<int32_t, 3>, 4> stage_shapes;  // (D,H,W) at strides 1,2,4,8
    std::array<int32_t, 4> stage_widths;
    std::array<int32_t, 4> dec_widths;
    int32_t bev_in_channels = 0;
    int32_t gcp_concat_channels = 0;
    int32_t bev_h = 0, bev_w = 0;
};

inline ShapeAudit audit_shapes(const PipelineConfig& cfg) {
    ShapeAudit a;
    std::array<int32_t, 3> shape = cfg.vox.grid_shape();
    for (int32_t s = 0; s < 4; ++s) {
        if (s > 0)
            for (auto& d : shape) d = (d + 1) / 2;
        a.stage_shapes[s] = shape;
        a.stage_widths[s] = cfg.backbone.enc_widths[s];
    }
    a.dec_widths = cfg.backbone.dec_widths;
    a.bev_in_channels = cfg.backbone.enc_widths[3] * a.stage_shapes[3][0];
    a.gcp_concat_channels = cfg.gcp.concat_channels();
    a.bev_h = a.stage_shapes[3][1];
    a.bev_w = a.stage_shapes[3][2];
    return a;
}

}  // namespace mvx
