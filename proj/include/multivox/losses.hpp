#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "multivox/common.hpp"
#include "multivox/dense2d.hpp"
#include "multivox/heads.hpp"

namespace mvx {

// Every loss returns its value together with the analytic gradient w.r.t. the
// predictions, so finite-difference oracles can pin them down.

constexpr float kProbClamp = 1e-7f;

inline double safe_log(double p) { return std::log(std::clamp(p, double(kProbClamp), 1.0 - kProbClamp)); }

struct LossGrad {
    double value = 0.0;
    Mat grad;
};

// Mean over non-ignored rows of -log softmax[target]. Targets are class ids
// 1..K mapped onto columns 0..K-1; kIgnoreLabel rows contribute nothing.
inline LossGrad cross_entropy(const Mat& logits, const std::vector<int32_t>& targets) {
    if (int32_t(targets.size()) != logits.rows) throw DataError("cross_entropy: row mismatch");
    LossGrad out;
    out.grad = Mat(logits.rows, logits.cols, 0.f);
    int64_t count = 0;
    for (int32_t r = 0; r < logits.rows; ++r)
        if (targets[r] != kIgnoreLabel) ++count;
    if (count == 0) return out;

    double total = 0.0;
    for (int32_t r = 0; r < logits.rows; ++r) {
        if (targets[r] == kIgnoreLabel) continue;
        const int32_t t = targets[r] - 1;
        if (t < 0 || t >= logits.cols) throw DataError("cross_entropy: target out of range");
        const float* in = logits.row(r);
        double mx = in[0];
        for (int32_t c = 1; c < logits.cols; ++c) mx = std::max(mx, double(in[c]));
        double sum = 0.0;
        for (int32_t c = 0; c < logits.cols; ++c) sum += std::exp(double(in[c]) - mx);
        total += -(double(in[t]) - mx - std::log(sum));
        for (int32_t c = 0; c < logits.cols; ++c) {
            const double p = std::exp(double(in[c]) - mx) / sum;
            out.grad.at(r, c) = float((p - (c == t ? 1.0 : 0.0)) / double(count));
        }
    }
    out.value = total / double(count);
    return out;
}

// Lovasz extension of the per-class Jaccard loss, averaged over the classes
// present in the targets. Ignored rows are excluded.
struct LovaszResult {
    double value = 0.0;
    Mat grad;
    std::vector<std::pair<int32_t, double>> per_class;  // (class id, loss)
};

inline LovaszResult lovasz_softmax(const Mat& probs, const std::vector<int32_t>& targets) {
    if (int32_t(targets.size()) != probs.rows) throw DataError("lovasz_softmax: row mismatch");
    LovaszResult out;
    out.grad = Mat(probs.rows, probs.cols, 0.f);

    std::vector<int32_t> rows;
    rows.reserve(targets.size());
    std::vector<uint8_t> present(size_t(probs.cols) + 1, 0);
    for (int32_t r = 0; r < probs.rows; ++r) {
        if (targets[r] == kIgnoreLabel) continue;
        if (targets[r] < 1 || targets[r] > probs.cols)
            throw DataError("lovasz_softmax: target out of range");
        rows.push_back(r);
        present[targets[r]] = 1;
    }
    std::vector<int32_t> classes;
    for (int32_t cls = 1; cls <= probs.cols; ++cls)
        if (present[cls]) classes.push_back(cls);
    if (classes.empty()) return out;

    const int32_t n = int32_t(rows.size());
    std::vector<double> errors(n);
    std::vector<int32_t> order(n);
    std::vector<double> grad_sorted(n);

    double total = 0.0;
    for (int32_t cls : classes) {
        const int32_t col = cls - 1;
        int64_t gt_total = 0;
        for (int32_t i = 0; i < n; ++i) {
            const bool is_gt = targets[rows[i]] == cls;
            gt_total += is_gt;
            const double p = probs.at(rows[i], col);
            errors[i] = is_gt ? 1.0 - p : p;
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int32_t a, int32_t b) { return errors[a] > errors[b]; });

        // discrete Jaccard gradient along the sorted prefix
        double inter = double(gt_total), uni = double(gt_total);
        double prev_jac = 0.0;
        double value = 0.0;
        for (int32_t i = 0; i < n; ++i) {
            const int32_t idx = order[i];
            const bool is_gt = targets[rows[idx]] == cls;
            if (is_gt)
                inter -= 1.0;
            else
                uni += 1.0;
            const double jac = uni > 0.0 ? 1.0 - inter / uni : 0.0;
            const double g = jac - prev_jac;
            prev_jac = jac;
            grad_sorted[idx] = g;
            value += errors[idx] * g;
        }
        total += value;
        out.per_class.emplace_back(cls, value);
        const double inv = 1.0 / double(classes.size());
        for (int32_t i = 0; i < n; ++i) {
            const bool is_gt = targets[rows[i]] == cls;
            out.grad.at(rows[i], col) += float((is_gt ? -1.0 : 1.0) * grad_sorted[i] * inv);
        }
    }
    out.value = total / double(classes.size());
    return out;
}

// Penalty-reduced center heatmap focal loss. gt uses 1.0 at object centers
// and Gaussian tails elsewhere; normalization is by the positive count.
struct GridLossGrad {
    double value = 0.0;
    DenseBEV grad;
};

enum class FocalVariant : uint8_t { penalty_reduced, classic };

inline GridLossGrad focal_heatmap(const DenseBEV& pred, const DenseBEV& gt, double alpha = 2.0,
                                  double beta_pen = 4.0,
                                  FocalVariant variant = FocalVariant::penalty_reduced) {
    if (pred.channels != gt.channels || pred.h != gt.h || pred.w != gt.w)
        throw DataError("focal_heatmap: shape mismatch");
    GridLossGrad out;
    out.grad = DenseBEV(pred.channels, pred.h, pred.w);

    int64_t n_pos = 0;
    for (float g : gt.v) n_pos += g == 1.f;
    const double norm = double(std::max<int64_t>(n_pos, 1));

    double total = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const double p = std::clamp(double(pred.v[i]), double(kProbClamp), 1.0 - kProbClamp);
        const double g = gt.v[i];
        double term, dterm;
        if (g == 1.f) {
            term = std::pow(1.0 - p, alpha) * std::log(p);
            dterm = -alpha * std::pow(1.0 - p, alpha - 1.0) * std::log(p) +
                    std::pow(1.0 - p, alpha) / p;
        } else {
            const double pen =
                variant == FocalVariant::penalty_reduced ? std::pow(1.0 - g, beta_pen) : 1.0;
            term = pen * std::pow(p, alpha) * std::log(1.0 - p);
            dterm = pen * (alpha * std::pow(p, alpha - 1.0) * std::log(1.0 - p) -
                           std::pow(p, alpha) / (1.0 - p));
        }
        total += term;
        const bool clamped = pred.v[i] <= kProbClamp || pred.v[i] >= 1.f - kProbClamp;
        out.grad.v[i] = clamped ? 0.f : float(-dterm / norm);
    }
    out.value = -total / norm;
    return out;
}

// Mean absolute error over valid cells x channels. mask is per cell (h*w).
inline GridLossGrad l1_masked(const DenseBEV& pred, const DenseBEV& target,
                              const std::vector<uint8_t>& mask) {
    if (pred.channels != target.channels || pred.h != target.h || pred.w != target.w)
        throw DataError("l1_masked: shape mismatch");
    if (int32_t(mask.size()) != pred.h * pred.w) throw DataError("l1_masked: mask size mismatch");
    GridLossGrad out;
    out.grad = DenseBEV(pred.channels, pred.h, pred.w);
    int64_t valid = 0;
    for (uint8_t m : mask) valid += m != 0;
    if (valid == 0) return out;
    const double norm = double(valid) * pred.channels;

    double total = 0.0;
    for (int32_t c = 0; c < pred.channels; ++c)
        for (int32_t y = 0; y < pred.h; ++y)
            for (int32_t x = 0; x < pred.w; ++x) {
                if (!mask[size_t(y) * pred.w + x]) continue;
                const double d = double(pred.at(c, y, x)) - target.at(c, y, x);
                total += std::abs(d);
                out.grad.at(c, y, x) = float((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / norm);
            }
    out.value = total / norm;
    return out;
}

// Detection supervision targets: Gaussian-splatted heatmap, center-cell
// regression rows, and unit IoU targets at positive cells.
struct DetTargets {
    DenseBEV heatmap;
    DenseBEV reg;
    std::vector<uint8_t> reg_mask;
    DenseBEV iou;
    std::vector<uint8_t> iou_mask;
};

// Splat radius chosen so any box whose IoU with the GT is at least
// min_overlap still covers the center cell.
inline double gaussian_radius(double height, double width, double min_overlap = 0.7) {
    const double a1 = 1.0, b1 = height + width,
                 c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
    const double r1 = (b1 - std::sqrt(std::max(0.0, b1 * b1 - 4 * a1 * c1))) / (2.0 * a1);
    const double a2 = 4.0, b2 = 2.0 * (height + width), c2 = (1.0 - min_overlap) * width * height;
    const double r2 = (b2 - std::sqrt(std::max(0.0, b2 * b2 - 4 * a2 * c2))) / (2.0 * a2);
    const double a3 = 4.0 * min_overlap, b3 = -2.0 * min_overlap * (height + width),
                 c3 = (min_overlap - 1.0) * width * height;
    const double r3 = (b3 + std::sqrt(std::max(0.0, b3 * b3 - 4 * a3 * c3))) / (2.0 * a3);
    return std::min({r1, r2, r3});
}

inline DetTargets gaussian_splat_targets(const std::vector<Box>& boxes, const BevGeometry& geo,
                                         const std::vector<int32_t>& thing_classes) {
    DetTargets t;
    const int32_t kc = int32_t(thing_classes.size());
    t.heatmap = DenseBEV(kc, geo.h, geo.w);
    t.reg = DenseBEV(kRegChannels, geo.h, geo.w);
    t.reg_mask.assign(size_t(geo.h) * geo.w, 0);
    t.iou = DenseBEV(1, geo.h, geo.w);
    t.iou_mask.assign(size_t(geo.h) * geo.w, 0);

    for (const Box& b : boxes) {
        int32_t channel = -1;
        for (int32_t c = 0; c < kc; ++c)
            if (thing_classes[c] == b.cls) channel = c;
        if (channel < 0) continue;

        const double ux = (b.x - geo.min_x) / geo.cell_x;
        const double uy = (b.y - geo.min_y) / geo.cell_y;
        const int32_t cx = int32_t(std::floor(ux)), cy = int32_t(std::floor(uy));
        if (cx < 0 || cx >= geo.w || cy < 0 || cy >= geo.h) continue;

        const double w_cells = b.w / geo.cell_x, l_cells = b.l / geo.cell_y;
        const int32_t radius =
            std::max<int32_t>(2, int32_t(gaussian_radius(l_cells, w_cells, 0.7)));
        const double sigma = (2.0 * radius + 1.0) / 6.0;
        for (int32_t dy = -radius; dy <= radius; ++dy)
            for (int32_t dx = -radius; dx <= radius; ++dx) {
                const int32_t y = cy + dy, x = cx + dx;
                if (y < 0 || y >= geo.h || x < 0 || x >= geo.w) continue;
                const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                t.heatmap.at(channel, y, x) =
                    std::max(t.heatmap.at(channel, y, x), float(g));
            }
        t.heatmap.at(channel, cy, cx) = 1.f;

        const size_t cell = size_t(cy) * geo.w + cx;
        t.reg_mask[cell] = 1;
        t.iou_mask[cell] = 1;
        t.reg.at(0, cy, cx) = float(ux - cx);
        t.reg.at(1, cy, cx) = float(uy - cy);
        t.reg.at(2, cy, cx) = b.z;
        t.reg.at(3, cy, cx) = std::log(b.w);
        t.reg.at(4, cy, cx) = std::log(b.l);
        t.reg.at(5, cy, cx) = std::log(b.h);
        t.reg.at(6, cy, cx) = std::sin(b.yaw);
        t.reg.at(7, cy, cx) = std::cos(b.yaw);
        t.iou.at(0, cy, cx) = 1.f;
    }
    return t;
}

// L_det = 1*L_hm + 2*L_reg + 1*L_iou.
struct DetLossParts {
    double total = 0.0, hm = 0.0, reg = 0.0, iou = 0.0;
};

inline DetLossParts det_loss(const DetGrid& pred, const DetTargets& t,
                             std::array<double, 3> lambdas = {1.0, 2.0, 1.0},
                             FocalVariant variant = FocalVariant::penalty_reduced) {
    DetLossParts parts;
    parts.hm = focal_heatmap(pred.heatmap, t.heatmap, 2.0, 4.0, variant).value;
    parts.reg = l1_masked(pred.reg, t.reg, t.reg_mask).value;
    parts.iou = l1_masked(pred.iou, t.iou, t.iou_mask).value;
    parts.total = lambdas[0] * parts.hm + lambdas[1] * parts.reg + lambdas[2] * parts.iou;
    return parts;
}

// L_seg / L_bev = cross-entropy + Lovasz on the same logits.
struct SegLossParts {
    double total = 0.0, ce = 0.0, lovasz = 0.0;
};

inline SegLossParts seg_loss(const Mat& logits, const std::vector<int32_t>& targets) {
    SegLossParts parts;
    parts.ce = cross_entropy(logits, targets).value;
    parts.lovasz = lovasz_softmax(softmax_rows(logits), targets).value;
    parts.total = parts.ce + parts.lovasz;
    return parts;
}

inline Mat flatten_bev_logits(const DenseBEV& logits) {
    Mat out(logits.h * logits.w, logits.channels);
    for (int32_t c = 0; c < logits.channels; ++c)
        for (int32_t y = 0; y < logits.h; ++y)
            for (int32_t x = 0; x < logits.w; ++x) out.at(y * logits.w + x, c) = logits.at(c, y, x);
    return out;
}

inline SegLossParts bev_loss(const DenseBEV& logits, const std::vector<int32_t>& cell_targets) {
    if (int32_t(cell_targets.size()) != logits.h * logits.w)
        throw DataError("bev_loss: target size mismatch");
    return seg_loss(flatten_bev_logits(logits), cell_targets);
}

// Homoscedastic multi-task total: sum_i L_i/(2*s2_i) + log(s2_i)/2, with the
// gradient w.r.t. each sigma^2.
struct TaskSigmas {
    double seg = 1.0, det = 1.0, bev = 1.0;
};

struct MultitaskResult {
    double value = 0.0;
    std::array<double, 3> grad_sigma2{0, 0, 0};  // order: seg, det, bev
};

inline MultitaskResult multitask_total(double l_seg, double l_det, double l_bev,
                                       const TaskSigmas& s) {
    if (s.seg <= 0 || s.det <= 0 || s.bev <= 0)
        throw DataError("multitask_total: sigma^2 must be positive");
    MultitaskResult r;
    const std::array<double, 3> ls{l_seg, l_det, l_bev};
    const std::array<double, 3> s2{s.seg, s.det, s.bev};
    for (int i = 0; i < 3; ++i) {
        r.value += ls[i] / (2.0 * s2[i]) + 0.5 * std::log(s2[i]);
        r.grad_sigma2[i] = -ls[i] / (2.0 * s2[i] * s2[i]) + 1.0 / (2.0 * s2[i]);
    }
    return r;
}

// Binary cross-entropy over a flat vector with a validity mask.
struct VecLossGrad {
    double value = 0.0;
    std::vector<double> grad;
};

inline VecLossGrad binary_cross_entropy(const std::vector<float>& pred,
                                        const std::vector<uint8_t>& target,
                                        const std::vector<uint8_t>& valid) {
    if (pred.size() != target.size() || pred.size() != valid.size())
        throw DataError("binary_cross_entropy: size mismatch");
    VecLossGrad out;
    out.grad.assign(pred.size(), 0.0);
    int64_t count = 0;
    for (uint8_t v : valid) count += v != 0;
    if (count == 0) return out;

    double total = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!valid[i]) continue;
        const double p = std::clamp(double(pred[i]), double(kProbClamp), 1.0 - kProbClamp);
        const double y = target[i] ? 1.0 : 0.0;
        total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        out.grad[i] = (-(y / p) + (1.0 - y) / (1.0 - p)) / double(count);
    }
    out.value = total / double(count);
    return out;
}

}  // namespace mvx
