#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "multivox/common.hpp"

namespace mvx {

// K x K prediction/ground-truth counts. The ignore class is tallied
// separately and never scored.
struct ConfusionMatrix {
    int32_t num_classes = 0;
    std::vector<int64_t> counts;  // gt-major: counts[gt*K + pred]
    std::vector<int64_t> missed;  // gt class c scored but prediction was the ignore class
    int64_t ignored = 0;

    explicit ConfusionMatrix(int32_t k = 0)
        : num_classes(k), counts(size_t(k) * size_t(k), 0), missed(size_t(k), 0) {}

    int64_t& at(int32_t gt, int32_t pred) { return counts[size_t(gt) * num_classes + pred]; }
    int64_t at(int32_t gt, int32_t pred) const {
        return counts[size_t(gt) * num_classes + pred];
    }
    void merge(const ConfusionMatrix& other) {
        if (other.num_classes != num_classes) throw DataError("confusion merge: K mismatch");
        for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
        for (size_t i = 0; i < missed.size(); ++i) missed[i] += other.missed[i];
        ignored += other.ignored;
    }
};

inline ConfusionMatrix confusion(const std::vector<int32_t>& pred,
                                 const std::vector<int32_t>& gt, int32_t num_classes) {
    if (pred.size() != gt.size()) throw DataError("confusion: length mismatch");
    ConfusionMatrix cm(num_classes);
    for (size_t i = 0; i < pred.size(); ++i) {
        if (gt[i] == kIgnoreLabel) {
            ++cm.ignored;
            continue;
        }
        if (gt[i] < 1 || gt[i] > num_classes || pred[i] < 0 || pred[i] > num_classes)
            throw DataError("confusion: label out of range");
        if (pred[i] == kIgnoreLabel) {
            // a refusal to predict counts as a false negative for the gt class
            ++cm.missed[gt[i] - 1];
            continue;
        }
        ++cm.at(gt[i] - 1, pred[i] - 1);
    }
    return cm;
}

// IoU_c = TP / (TP + FP + FN); classes absent from both gt and pred are
// excluded from the mean.
inline std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
    std::vector<double> iou(cm.num_classes, -1.0);  // -1 marks "undefined"
    for (int32_t c = 0; c < cm.num_classes; ++c) {
        int64_t tp = cm.at(c, c), fp = 0, fn = cm.missed[c];
        for (int32_t o = 0; o < cm.num_classes; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const int64_t denom = tp + fp + fn;
        if (denom > 0) iou[c] = double(tp) / double(denom);
    }
    return iou;
}

inline double miou(const ConfusionMatrix& cm) {
    const auto ious = per_class_iou(cm);
    double sum = 0.0;
    int64_t n = 0;
    for (double v : ious)
        if (v >= 0.0) {
            sum += v;
            ++n;
        }
    return n ? sum / double(n) : 0.0;
}

inline std::string iou_report(const ConfusionMatrix& cm) {
    const auto ious = per_class_iou(cm);
    std::string out;
    char line[64];
    for (int32_t c = 0; c < cm.num_classes; ++c) {
        if (ious[c] < 0.0)
            std::snprintf(line, sizeof(line), "class %2d  iou   n/a\n", c + 1);
        else
            std::snprintf(line, sizeof(line), "class %2d  iou %.4f\n", c + 1, ious[c]);
        out += line;
    }
    std::snprintf(line, sizeof(line), "mIoU %.4f\n", miou(cm));
    out += line;
    return out;
}

// Panoptic quality. Segments are nonempty (class, instance) point sets;
// a match requires IoU > 0.5, PQ = sum(IoU) / (TP + FP/2 + FN/2).
struct PanopticResult {
    std::vector<double> pq, sq, rq;  // per class, -1 where undefined
    double mean_pq = 0.0, mean_sq = 0.0, mean_rq = 0.0;
};

inline PanopticResult panoptic_quality(const std::vector<std::pair<int32_t, int32_t>>& pred,
                                       const std::vector<std::pair<int32_t, int32_t>>& gt,
                                       int32_t num_classes) {
    if (pred.size() != gt.size()) throw DataError("panoptic_quality: length mismatch");

    using SegKey = std::pair<int32_t, int32_t>;  // (class, instance)
    std::map<SegKey, int64_t> pred_size, gt_size;
    std::map<std::pair<SegKey, SegKey>, int64_t> overlap;
    for (size_t i = 0; i < pred.size(); ++i) {
        const auto [ps, pi] = pred[i];
        const auto [gs, gi] = gt[i];
        if (gs != kIgnoreLabel) ++gt_size[{gs, gi}];
        if (ps != kIgnoreLabel) ++pred_size[{ps, pi}];
        if (gs != kIgnoreLabel && ps != kIgnoreLabel) ++overlap[{{ps, pi}, {gs, gi}}];
    }

    PanopticResult r;
    r.pq.assign(num_classes, -1.0);
    r.sq.assign(num_classes, -1.0);
    r.rq.assign(num_classes, -1.0);

    for (int32_t cls = 1; cls <= num_classes; ++cls) {
        int64_t tp = 0, fp = 0, fn = 0;
        double iou_sum = 0.0;
        std::set<SegKey> matched_pred, matched_gt;
        for (const auto& [key, inter] : overlap) {
            const auto& [pk, gk] = key;
            if (pk.first != cls || gk.first != cls) continue;
            const double uni = double(pred_size[pk] + gt_size[gk] - inter);
            const double iou = uni > 0 ? double(inter) / uni : 0.0;
            if (iou > 0.5) {
                ++tp;
                iou_sum += iou;
                matched_pred.insert(pk);
                matched_gt.insert(gk);
            }
        }
        for (const auto& [k, n] : pred_size)
            if (k.first == cls && !matched_pred.count(k)) ++fp;
        for (const auto& [k, n] : gt_size)
            if (k.first == cls && !matched_gt.count(k)) ++fn;

        if (tp + fp + fn == 0) continue;
        const double denom = tp + fp / 2.0 + fn / 2.0;
        r.pq[cls - 1] = iou_sum / denom;
        r.sq[cls - 1] = tp ? iou_sum / tp : 0.0;
        r.rq[cls - 1] = tp / denom;
    }

    int64_t n = 0;
    for (int32_t c = 0; c < num_classes; ++c) {
        if (r.pq[c] < 0.0) continue;
        r.mean_pq += r.pq[c];
        r.mean_sq += r.sq[c];
        r.mean_rq += r.rq[c];
        ++n;
    }
    if (n) {
        r.mean_pq /= double(n);
        r.mean_sq /= double(n);
        r.mean_rq /= double(n);
    }
    return r;
}

inline std::string panoptic_report(const PanopticResult& r) {
    std::string out;
    char line[96];
    for (size_t c = 0; c < r.pq.size(); ++c) {
        if (r.pq[c] < 0.0) continue;
        std::snprintf(line, sizeof(line), "class %2d  PQ %.4f  SQ %.4f  RQ %.4f\n", int(c + 1),
                      r.pq[c], r.sq[c], r.rq[c]);
        out += line;
    }
    std::snprintf(line, sizeof(line), "PQ %.4f  SQ %.4f  RQ %.4f\n", r.mean_pq, r.mean_sq,
                  r.mean_rq);
    out += line;
    return out;
}

}  // namespace mvx
