#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "multivox/rulebook.hpp"
#include "multivox/sparse_tensor.hpp"

namespace mvx {

// Kernel tensor laid out (offset, cin, cout), contiguous in cout so the inner
// accumulation loop vectorizes.
struct ConvWeights {
    int32_t kernel = 3;
    int32_t cin = 0, cout = 0;
    std::vector<float> w;
    std::vector<float> bias;  // empty or length cout

    int32_t volume() const { return kernel * kernel * kernel; }
    float& at(int32_t k, int32_t ci, int32_t co) {
        return w[(size_t(k) * cin + ci) * cout + co];
    }
    float at(int32_t k, int32_t ci, int32_t co) const {
        return w[(size_t(k) * cin + ci) * cout + co];
    }
    const float* slice(int32_t k) const { return w.data() + size_t(k) * cin * cout; }

    static ConvWeights zeros(int32_t kernel, int32_t cin, int32_t cout, bool with_bias = true) {
        ConvWeights cw;
        cw.kernel = kernel;
        cw.cin = cin;
        cw.cout = cout;
        cw.w.assign(size_t(kernel) * kernel * kernel * cin * cout, 0.f);
        if (with_bias) cw.bias.assign(cout, 0.f);
        return cw;
    }
    // Identity map through the center tap (requires cin == cout).
    static ConvWeights identity_center(int32_t kernel, int32_t c) {
        ConvWeights cw = zeros(kernel, c, c);
        const int32_t center = (cw.volume() - 1) / 2;
        for (int32_t i = 0; i < c; ++i) cw.at(center, i, i) = 1.f;
        return cw;
    }
};

namespace detail {

inline void rulebook_conv(const Mat& in, const Rulebook& rb, const ConvWeights& w, Mat& out) {
    if (in.cols != w.cin) throw DataError("sparse conv: input channel mismatch");
    if (int32_t(rb.pairs.size()) != w.volume())
        throw DataError("sparse conv: rulebook kernel does not match the weights");
    if (!w.bias.empty() && int32_t(w.bias.size()) != w.cout)
        throw DataError("sparse conv: bias length mismatch");
    out = Mat(int32_t(rb.out_coords.size()), w.cout, 0.f);
    if (!w.bias.empty())
        for (int32_t r = 0; r < out.rows; ++r)
            std::copy(w.bias.begin(), w.bias.end(), out.row(r));

    // Offsets in canonical order, pairs in (output,input) order: accumulation
    // order is fixed, so repeated runs are bit-identical.
    for (size_t k = 0; k < rb.pairs.size(); ++k) {
        const float* wk = w.slice(int32_t(k));
        for (const auto& [i, o] : rb.pairs[k]) {
            const float* src = in.row(i);
            float* dst = out.row(o);
            for (int32_t ci = 0; ci < w.cin; ++ci) {
                const float a = src[ci];
                const float* wr = wk + size_t(ci) * w.cout;
                for (int32_t co = 0; co < w.cout; ++co) dst[co] += a * wr[co];
            }
        }
    }
}

}  // namespace detail

// Submanifold convolution: output sites == input sites.
inline SparseTensor submanifold_conv3d(const SparseTensor& t, const Rulebook& rb,
                                       const ConvWeights& w) {
    if (rb.out_coords != t.coords) throw DataError("submanifold conv: rulebook/tensor mismatch");
    SparseTensor out;
    out.coords = t.coords;
    out.spatial_shape = t.spatial_shape;
    out.stride = t.stride;
    detail::rulebook_conv(t.features, rb, w, out.features);
    return out;
}

// Strided (downsampling) convolution; output geometry comes from the rulebook.
inline SparseTensor sparse_conv3d(const SparseTensor& t, const Rulebook& rb,
                                  const ConvWeights& w) {
    SparseTensor out;
    out.coords = rb.out_coords;
    out.spatial_shape = rb.out_shape;
    out.stride = rb.out_stride;
    detail::rulebook_conv(t.features, rb, w, out.features);
    return out;
}

// Inverse (transposed) convolution restoring a cached coordinate set.
inline SparseTensor inverse_sparse_conv3d(const SparseTensor& t, const Rulebook& rb,
                                          const ConvWeights& w) {
    if (rb.out_stride * 2 != t.stride)
        throw DataError("inverse conv: rulebook does not upsample this tensor");
    SparseTensor out;
    out.coords = rb.out_coords;
    out.spatial_shape = rb.out_shape;
    out.stride = rb.out_stride;
    detail::rulebook_conv(t.features, rb, w, out.features);
    return out;
}

// Eval-mode per-channel affine normalization.
struct NormParams {
    std::vector<float> scale, shift, mean, var;
    float eps = 1e-5f;

    static NormParams identity(int32_t c, float eps = 0.f) {
        NormParams p;
        p.scale.assign(c, 1.f);
        p.shift.assign(c, 0.f);
        p.mean.assign(c, 0.f);
        p.var.assign(c, 1.f);
        p.eps = eps;
        return p;
    }
    void validate(int32_t c) const {
        if (int32_t(scale.size()) != c || int32_t(shift.size()) != c ||
            int32_t(mean.size()) != c || int32_t(var.size()) != c)
            throw DataError("norm params: channel count mismatch");
        for (float v : var)
            if (v < 0.f) throw DataError("norm params: negative running variance");
    }
};

inline void norm_relu_rows(Mat& m, const NormParams& p) {
    p.validate(m.cols);
    std::vector<float> a(m.cols), b(m.cols);
    for (int32_t c = 0; c < m.cols; ++c) {
        const float inv = 1.f / std::sqrt(p.var[c] + p.eps);
        a[c] = p.scale[c] * inv;
        b[c] = p.shift[c] - p.mean[c] * a[c];
    }
    for (int32_t r = 0; r < m.rows; ++r) {
        float* row = m.row(r);
        for (int32_t c = 0; c < m.cols; ++c) row[c] = std::max(a[c] * row[c] + b[c], 0.f);
    }
}

inline SparseTensor norm_relu(const SparseTensor& t, const NormParams& p) {
    SparseTensor out = t;
    norm_relu_rows(out.features, p);
    return out;
}

struct ResblockWeights {
    ConvWeights conv1, conv2;
    NormParams norm1, norm2;
};

// relu(norm2(conv2(relu(norm1(conv1(t))))) + t); coordinates never change.
inline SparseTensor resblock(const SparseTensor& t, const Rulebook& rb,
                             const ResblockWeights& w) {
    SparseTensor h = submanifold_conv3d(t, rb, w.conv1);
    norm_relu_rows(h.features, w.norm1);
    h = submanifold_conv3d(h, rb, w.conv2);
    w.norm2.validate(h.features.cols);
    if (h.features.cols != t.features.cols)
        throw DataError("resblock: channel count must be preserved");
    std::vector<float> a(h.features.cols), b(h.features.cols);
    for (int32_t c = 0; c < h.features.cols; ++c) {
        const float inv = 1.f / std::sqrt(w.norm2.var[c] + w.norm2.eps);
        a[c] = w.norm2.scale[c] * inv;
        b[c] = w.norm2.shift[c] - w.norm2.mean[c] * a[c];
    }
    for (int32_t r = 0; r < h.features.rows; ++r) {
        float* hr = h.features.row(r);
        const float* tr = t.features.row(r);
        for (int32_t c = 0; c < h.features.cols; ++c)
            hr[c] = std::max(a[c] * hr[c] + b[c] + tr[c], 0.f);
    }
    return h;
}

// Plain fully-connected layer: out = x * w + bias.
inline Mat linear(const Mat& x, const Mat& w, const std::vector<float>& bias) {
    if (x.cols != w.rows) throw DataError("linear: shape mismatch");
    if (!bias.empty() && int32_t(bias.size()) != w.cols)
        throw DataError("linear: bias length mismatch");
    Mat out(x.rows, w.cols, 0.f);
    for (int32_t r = 0; r < x.rows; ++r) {
        float* dst = out.row(r);
        if (!bias.empty()) std::copy(bias.begin(), bias.end(), dst);
        const float* src = x.row(r);
        for (int32_t i = 0; i < x.cols; ++i) {
            const float a = src[i];
            const float* wr = w.row(i);
            for (int32_t c = 0; c < w.cols; ++c) dst[c] += a * wr[c];
        }
    }
    return out;
}

}  // namespace mvx
