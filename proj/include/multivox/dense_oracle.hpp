#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "multivox/sparse_ops.hpp"
#include "multivox/sparse_tensor.hpp"

namespace mvx {

// Dense little-brother of SparseTensor, used as the brute-force reference for
// the rulebook-driven kernels and as the slow side of the bench comparison.
struct DenseVolume {
    int32_t c = 0, d = 0, h = 0, w = 0;
    std::vector<float> v;

    DenseVolume() = default;
    DenseVolume(int32_t c_, int32_t d_, int32_t h_, int32_t w_, float fill = 0.f)
        : c(c_), d(d_), h(h_), w(w_), v(size_t(c_) * d_ * h_ * w_, fill) {}

    float& at(int32_t ci, int32_t z, int32_t y, int32_t x) {
        return v[((size_t(ci) * d + z) * h + y) * w + x];
    }
    float at(int32_t ci, int32_t z, int32_t y, int32_t x) const {
        return v[((size_t(ci) * d + z) * h + y) * w + x];
    }
};

inline DenseVolume densify(const SparseTensor& t) {
    DenseVolume vol(t.channels(), t.spatial_shape[0], t.spatial_shape[1], t.spatial_shape[2]);
    for (int32_t r = 0; r < t.num_active(); ++r) {
        const Coord& cd = t.coords[r];
        for (int32_t ci = 0; ci < t.channels(); ++ci)
            vol.at(ci, cd[0], cd[1], cd[2]) = t.features.at(r, ci);
    }
    return vol;
}

// Direct 7-loop convolution with zero padding (k-1)/2. stride 1 keeps the
// extent, stride 2 produces ceil(extent/2), matching the sparse kernels.
inline DenseVolume dense_conv3d_oracle(const DenseVolume& in, const ConvWeights& cw,
                                       int32_t stride = 1) {
    const int32_t k = cw.kernel, pad = (cw.kernel - 1) / 2;
    const int32_t od = (in.d + 2 * pad - k) / stride + 1;
    const int32_t oh = (in.h + 2 * pad - k) / stride + 1;
    const int32_t ow = (in.w + 2 * pad - k) / stride + 1;
    DenseVolume out(cw.cout, od, oh, ow);

    for (int32_t co = 0; co < cw.cout; ++co)
        for (int32_t oz = 0; oz < od; ++oz)
            for (int32_t oy = 0; oy < oh; ++oy)
                for (int32_t ox = 0; ox < ow; ++ox) {
                    double acc = cw.bias.empty() ? 0.0 : cw.bias[co];
                    for (int32_t dz = 0; dz < k; ++dz) {
                        const int32_t iz = oz * stride + dz - pad;
                        if (iz < 0 || iz >= in.d) continue;
                        for (int32_t dy = 0; dy < k; ++dy) {
                            const int32_t iy = oy * stride + dy - pad;
                            if (iy < 0 || iy >= in.h) continue;
                            for (int32_t dx = 0; dx < k; ++dx) {
                                const int32_t ix = ox * stride + dx - pad;
                                if (ix < 0 || ix >= in.w) continue;
                                const int32_t off = (dz * k + dy) * k + dx;
                                for (int32_t ci = 0; ci < cw.cin; ++ci)
                                    acc += double(in.at(ci, iz, iy, ix)) * cw.at(off, ci, co);
                            }
                        }
                    }
                    out.at(co, oz, oy, ox) = float(acc);
                }
    return out;
}

// Read the dense volume at a sparse coordinate list.
inline Mat sample_dense_at(const DenseVolume& vol, const std::vector<Coord>& coords) {
    Mat out(int32_t(coords.size()), vol.c, 0.f);
    for (size_t r = 0; r < coords.size(); ++r)
        for (int32_t ci = 0; ci < vol.c; ++ci)
            out.at(int32_t(r), ci) = vol.at(ci, coords[r][0], coords[r][1], coords[r][2]);
    return out;
}

}  // namespace mvx
