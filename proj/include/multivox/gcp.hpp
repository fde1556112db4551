#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "multivox/dense2d.hpp"
#include "multivox/sparse_tensor.hpp"

namespace mvx {

// Global context pooling: flatten the stride-8 sparse tensor into a dense BEV
// map (z-slices stacked into channels), run a two-level 2D CNN, and gather the
// enriched features back onto the same sparse coordinate set. This is the one
// path through which features cross empty gaps; submanifold stacks cannot.
struct GcpSpec {
    std::array<int32_t, 2> depths{6, 6};
    std::array<int32_t, 2> widths{128, 256};
    int32_t out_channels = 256;  // sparse return width

    int32_t concat_channels() const { return widths[0] + widths[1]; }
};

struct GcpWeights {
    Conv2dWeights stem;  // 1x1, C*D -> widths[0]
    NormParams stem_norm;
    std::vector<Conv2dWeights> level1;  // depth[0] 3x3 convs at widths[0]
    std::vector<NormParams> level1_norm;
    std::vector<Conv2dWeights> level2;  // depth[1] 3x3 convs at widths[1], after 2x pool
    std::vector<NormParams> level2_norm;
    Conv2dWeights out_proj;  // 1x1, concat -> out_channels*D, linear (no norm)
};

// Stack z-slices into channels: BEV channel z*C + c holds feature c of voxel
// (z,y,x); inactive sites stay zero.
inline DenseBEV sparse_to_bev(const SparseTensor& t) {
    const int32_t c = t.channels();
    const int32_t d = t.spatial_shape[0];
    DenseBEV bev(c * d, t.spatial_shape[1], t.spatial_shape[2]);
    for (int32_t r = 0; r < t.num_active(); ++r) {
        const Coord& cd = t.coords[r];
        const float* src = t.features.row(r);
        for (int32_t ci = 0; ci < c; ++ci) bev.at(cd[0] * c + ci, cd[1], cd[2]) = src[ci];
    }
    return bev;
}

// Two-resolution 2D extractor; returns the channel-concat of both levels at
// full BEV resolution.
inline DenseBEV bev_cnn(const DenseBEV& m, const GcpSpec& spec, const GcpWeights& w) {
    DenseBEV x = conv2d(m, w.stem);
    norm_relu_2d(x, w.stem_norm);

    DenseBEV l1 = x;
    for (size_t i = 0; i < w.level1.size(); ++i) {
        l1 = conv2d(l1, w.level1[i]);
        norm_relu_2d(l1, w.level1_norm[i]);
    }

    DenseBEV l2 = avg_pool2(x);
    for (size_t i = 0; i < w.level2.size(); ++i) {
        l2 = conv2d(l2, w.level2[i]);
        norm_relu_2d(l2, w.level2_norm[i]);
    }
    DenseBEV l2_up = bilinear_upsample2(l2, m.h, m.w);

    if (l1.channels != spec.widths[0] || l2_up.channels != spec.widths[1])
        throw DataError("bev_cnn: level widths do not match spec");
    return concat_bev(l1, l2_up);
}

// Project the BEV map back to the sparse set: 1x1 conv to out_channels*D
// channels, then gather each coordinate's (z,c) block.
inline SparseTensor bev_to_sparse(const DenseBEV& m, const std::vector<Coord>& coords,
                                  const std::array<int32_t, 3>& spatial_shape, int32_t stride,
                                  const Conv2dWeights& proj, int32_t out_channels) {
    if (proj.cout != out_channels * spatial_shape[0])
        throw DataError("bev_to_sparse: projection output must be out_channels * depth");
    DenseBEV dense = conv2d(m, proj);

    SparseTensor out;
    out.coords = coords;
    out.spatial_shape = spatial_shape;
    out.stride = stride;
    out.features = Mat(int32_t(coords.size()), out_channels);
    for (size_t r = 0; r < coords.size(); ++r) {
        const Coord& cd = coords[r];
        if (cd[1] < 0 || cd[1] >= m.h || cd[2] < 0 || cd[2] >= m.w)
            throw DataError("bev_to_sparse: coordinate outside the BEV map");
        float* dst = out.features.row(int32_t(r));
        for (int32_t ci = 0; ci < out_channels; ++ci)
            dst[ci] = dense.at(cd[0] * out_channels + ci, cd[1], cd[2]);
    }
    return out;
}

struct GcpOutput {
    SparseTensor sparse_out;  // decoder bottleneck input, out_channels wide
    DenseBEV bev;             // concat map shared with the BEV/detection heads
};

inline GcpOutput gcp_forward(const SparseTensor& t, const GcpSpec& spec, const GcpWeights& w) {
    GcpOutput out;
    DenseBEV projected = sparse_to_bev(t);
    out.bev = bev_cnn(projected, spec, w);
    out.sparse_out =
        bev_to_sparse(out.bev, t.coords, t.spatial_shape, t.stride, w.out_proj, spec.out_channels);
    return out;
}

}  // namespace mvx
