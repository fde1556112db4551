#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "multivox/common.hpp"
#include "multivox/sparse_ops.hpp"

namespace mvx {

// Dense channels x H x W grid, the bird's-eye-view currency.
struct DenseBEV {
    int32_t channels = 0, h = 0, w = 0;
    std::vector<float> v;

    DenseBEV() = default;
    DenseBEV(int32_t c_, int32_t h_, int32_t w_, float fill = 0.f)
        : channels(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, fill) {}

    float& at(int32_t c, int32_t y, int32_t x) { return v[(size_t(c) * h + y) * w + x]; }
    float at(int32_t c, int32_t y, int32_t x) const { return v[(size_t(c) * h + y) * w + x]; }
    bool empty() const { return v.empty(); }
};

// 2D kernel laid out (ky*k+kx, cin, cout), same convention as ConvWeights.
struct Conv2dWeights {
    int32_t kernel = 3;
    int32_t cin = 0, cout = 0;
    std::vector<float> w;
    std::vector<float> bias;

    int32_t volume() const { return kernel * kernel; }
    float& at(int32_t k, int32_t ci, int32_t co) { return w[(size_t(k) * cin + ci) * cout + co]; }
    float at(int32_t k, int32_t ci, int32_t co) const {
        return w[(size_t(k) * cin + ci) * cout + co];
    }

    static Conv2dWeights zeros(int32_t kernel, int32_t cin, int32_t cout, bool with_bias = true) {
        Conv2dWeights cw;
        cw.kernel = kernel;
        cw.cin = cin;
        cw.cout = cout;
        cw.w.assign(size_t(kernel) * kernel * cin * cout, 0.f);
        if (with_bias) cw.bias.assign(cout, 0.f);
        return cw;
    }
    static Conv2dWeights identity_center(int32_t kernel, int32_t c) {
        Conv2dWeights cw = zeros(kernel, c, c);
        const int32_t center = (kernel * kernel - 1) / 2;
        for (int32_t i = 0; i < c; ++i) cw.at(center, i, i) = 1.f;
        return cw;
    }
};

// Stride-1 conv with zero padding (k-1)/2.
inline DenseBEV conv2d(const DenseBEV& in, const Conv2dWeights& cw) {
    if (in.channels != cw.cin) throw DataError("conv2d: channel mismatch");
    const int32_t k = cw.kernel, pad = (cw.kernel - 1) / 2;
    DenseBEV out(cw.cout, in.h, in.w);
    if (!cw.bias.empty())
        for (int32_t co = 0; co < cw.cout; ++co)
            std::fill_n(out.v.begin() + size_t(co) * in.h * in.w, size_t(in.h) * in.w,
                        cw.bias[co]);

    for (int32_t ky = 0; ky < k; ++ky)
        for (int32_t kx = 0; kx < k; ++kx) {
            const int32_t off = ky * k + kx;
            for (int32_t ci = 0; ci < cw.cin; ++ci) {
                for (int32_t y = 0; y < in.h; ++y) {
                    const int32_t iy = y + ky - pad;
                    if (iy < 0 || iy >= in.h) continue;
                    const int32_t x0 = std::max(0, pad - kx);
                    const int32_t x1 = std::min(in.w, in.w + pad - kx);
                    const float* src = &in.v[(size_t(ci) * in.h + iy) * in.w];
                    for (int32_t co = 0; co < cw.cout; ++co) {
                        const float wv = cw.at(off, ci, co);
                        if (wv == 0.f) continue;
                        float* dst = &out.v[(size_t(co) * in.h + y) * in.w];
                        for (int32_t x = x0; x < x1; ++x) dst[x] += wv * src[x + kx - pad];
                    }
                }
            }
        }
    return out;
}

inline void norm_relu_2d(DenseBEV& m, const NormParams& p) {
    p.validate(m.channels);
    for (int32_t c = 0; c < m.channels; ++c) {
        const float inv = 1.f / std::sqrt(p.var[c] + p.eps);
        const float a = p.scale[c] * inv;
        const float b = p.shift[c] - p.mean[c] * a;
        float* plane = &m.v[size_t(c) * m.h * m.w];
        for (size_t i = 0; i < size_t(m.h) * m.w; ++i) plane[i] = std::max(a * plane[i] + b, 0.f);
    }
}

// 2x2 average pool, stride 2, high-side zero pad for odd extents.
inline DenseBEV avg_pool2(const DenseBEV& in) {
    DenseBEV out(in.channels, (in.h + 1) / 2, (in.w + 1) / 2);
    for (int32_t c = 0; c < in.channels; ++c)
        for (int32_t y = 0; y < out.h; ++y)
            for (int32_t x = 0; x < out.w; ++x) {
                float acc = 0.f;
                for (int32_t dy = 0; dy < 2; ++dy)
                    for (int32_t dx = 0; dx < 2; ++dx) {
                        const int32_t iy = 2 * y + dy, ix = 2 * x + dx;
                        if (iy < in.h && ix < in.w) acc += in.at(c, iy, ix);
                    }
                out.at(c, y, x) = acc * 0.25f;
            }
    return out;
}

// Bilinear sample of all channels at continuous cell coordinates (u along W,
// v along H, cell centers at integers). Out-of-map neighbors read as zero.
inline void bilinear_sample(const DenseBEV& m, double u, double v, float* out) {
    const int32_t x0 = int32_t(std::floor(u)), y0 = int32_t(std::floor(v));
    const double fx = u - x0, fy = v - y0;
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
    const double w10 = (1 - fx) * fy, w11 = fx * fy;
    for (int32_t c = 0; c < m.channels; ++c) {
        double acc = 0.0;
        auto tap = [&](int32_t y, int32_t x, double wgt) {
            if (wgt != 0.0 && y >= 0 && y < m.h && x >= 0 && x < m.w) acc += wgt * m.at(c, y, x);
        };
        tap(y0, x0, w00);
        tap(y0, x0 + 1, w01);
        tap(y0 + 1, x0, w10);
        tap(y0 + 1, x0 + 1, w11);
        out[c] = float(acc);
    }
}

// x2 bilinear upsample, then crop to (out_h, out_w). Sample positions follow
// the half-cell convention src = (dst + 0.5)/2 - 0.5, edges clamped.
inline DenseBEV bilinear_upsample2(const DenseBEV& in, int32_t out_h, int32_t out_w) {
    DenseBEV out(in.channels, out_h, out_w);
    for (int32_t y = 0; y < out_h; ++y) {
        const double sy = std::clamp((y + 0.5) / 2.0 - 0.5, 0.0, double(in.h - 1));
        const int32_t y0 = std::min(int32_t(sy), in.h - 1);
        const int32_t y1 = std::min(y0 + 1, in.h - 1);
        const double fy = sy - y0;
        for (int32_t x = 0; x < out_w; ++x) {
            const double sx = std::clamp((x + 0.5) / 2.0 - 0.5, 0.0, double(in.w - 1));
            const int32_t x0 = std::min(int32_t(sx), in.w - 1);
            const int32_t x1 = std::min(x0 + 1, in.w - 1);
            const double fx = sx - x0;
            for (int32_t c = 0; c < in.channels; ++c) {
                const double top = (1 - fx) * in.at(c, y0, x0) + fx * in.at(c, y0, x1);
                const double bot = (1 - fx) * in.at(c, y1, x0) + fx * in.at(c, y1, x1);
                out.at(c, y, x) = float((1 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

inline DenseBEV concat_bev(const DenseBEV& a, const DenseBEV& b) {
    if (a.h != b.h || a.w != b.w) throw DataError("concat_bev: spatial mismatch");
    DenseBEV out(a.channels + b.channels, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + ptrdiff_t(a.v.size()));
    return out;
}

}  // namespace mvx
