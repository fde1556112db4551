#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "multivox/sparse_tensor.hpp"

namespace mvx {

// Per-kernel-offset (input_row, output_row) pair lists driving every sparse
// convolution as gather-multiply-scatter. Offsets are enumerated z-major
// (dz, dy, dx), the canonical order; pair lists are sorted by output row then
// input row, which fixes the floating-point accumulation order.
struct Rulebook {
    int32_t kernel = 3;
    std::vector<std::vector<std::pair<int32_t, int32_t>>> pairs;
    std::vector<Coord> out_coords;
    std::array<int32_t, 3> out_shape{0, 0, 0};
    int32_t out_stride = 1;

    int32_t volume() const { return kernel * kernel * kernel; }
    int32_t center_offset() const { return (volume() - 1) / 2; }
    size_t total_pairs() const {
        size_t n = 0;
        for (const auto& p : pairs) n += p.size();
        return n;
    }
};

// Submanifold: output sites equal input sites; a pair (i,o) exists for offset
// d iff coords[o] + d - center is active. Isolated voxels only ever see their
// own center tap.
inline Rulebook build_submanifold_rulebook(const SparseTensor& t, int32_t kernel = 3) {
    if (kernel < 1 || kernel % 2 == 0) throw DataError("submanifold kernel must be odd");
    const CoordIndex idx = build_coord_index(t);
    const int32_t c = (kernel - 1) / 2;

    Rulebook rb;
    rb.kernel = kernel;
    rb.out_coords = t.coords;
    rb.out_shape = t.spatial_shape;
    rb.out_stride = t.stride;
    rb.pairs.resize(size_t(rb.volume()));

    int32_t k = 0;
    for (int32_t dz = 0; dz < kernel; ++dz)
        for (int32_t dy = 0; dy < kernel; ++dy)
            for (int32_t dx = 0; dx < kernel; ++dx, ++k) {
                auto& list = rb.pairs[k];
                for (int32_t o = 0; o < t.num_active(); ++o) {
                    const Coord& oc = t.coords[o];
                    const int32_t i =
                        idx.lookup(oc[0] + dz - c, oc[1] + dy - c, oc[2] + dx - c);
                    if (i >= 0) list.emplace_back(i, o);
                }
            }
    return rb;
}

// Downsampling convolution, kernel 3 / stride 2 / padding 1. Output sites are
// every o with at least one active input i = 2*o + d - 1, d in {0,1,2}^3;
// output shape is ceil(shape/2).
inline Rulebook build_strided_rulebook(const SparseTensor& t) {
    constexpr int32_t kKernel = 3, kStride = 2, kPad = 1;
    const CoordIndex idx = build_coord_index(t);

    Rulebook rb;
    rb.kernel = kKernel;
    rb.out_stride = t.stride * kStride;
    for (int a = 0; a < 3; ++a) rb.out_shape[a] = (t.spatial_shape[a] + 1) / 2;

    // Output coordinate set, derived from the inputs each site would cover.
    std::vector<uint64_t> keys;
    keys.reserve(t.coords.size());
    for (const Coord& ic : t.coords) {
        int32_t lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            const int32_t v = ic[a] + kPad;  // = 2*o + d
            lo[a] = std::max(0, (v - 2 + 1) / 2);  // ceil((v-2)/2)
            hi[a] = std::min(rb.out_shape[a] - 1, v / 2);
        }
        for (int32_t z = lo[0]; z <= hi[0]; ++z)
            for (int32_t y = lo[1]; y <= hi[1]; ++y)
                for (int32_t x = lo[2]; x <= hi[2]; ++x) keys.push_back(pack_coord(z, y, x));
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    rb.out_coords.reserve(keys.size());
    for (uint64_t key : keys) rb.out_coords.push_back(unpack_coord(key));

    rb.pairs.resize(size_t(rb.volume()));
    int32_t k = 0;
    for (int32_t dz = 0; dz < kKernel; ++dz)
        for (int32_t dy = 0; dy < kKernel; ++dy)
            for (int32_t dx = 0; dx < kKernel; ++dx, ++k) {
                auto& list = rb.pairs[k];
                for (int32_t o = 0; o < int32_t(rb.out_coords.size()); ++o) {
                    const Coord& oc = rb.out_coords[o];
                    const int32_t i = idx.lookup(kStride * oc[0] + dz - kPad,
                                                 kStride * oc[1] + dy - kPad,
                                                 kStride * oc[2] + dx - kPad);
                    if (i >= 0) list.emplace_back(i, o);
                }
            }
    return rb;
}

// Coordinate set, lookup index and shape the encoder recorded at one scale.
struct ScaleEntry {
    std::vector<Coord> coords;
    CoordIndex index;
    std::array<int32_t, 3> shape{0, 0, 0};
    int32_t stride = 1;
};

// Key indices shared between encoder and decoder at the same scale, so the
// decoder restores exactly the coordinate sets the encoder saw.
struct KeyIndexCache {
    std::map<int32_t, ScaleEntry> scales;

    void record(const SparseTensor& t) {
        ScaleEntry e;
        e.coords = t.coords;
        e.index = build_coord_index(t);
        e.shape = t.spatial_shape;
        e.stride = t.stride;
        scales[t.stride] = std::move(e);
    }
    bool has(int32_t stride) const { return scales.count(stride) != 0; }
    const ScaleEntry& at(int32_t stride) const {
        auto it = scales.find(stride);
        if (it == scales.end())
            throw DataError("key index cache: no entry for stride " + std::to_string(stride));
        return it->second;
    }
};

// Transpose of the strided rulebook: output coords are exactly the cached
// finer-scale coords; a pair (l,h) exists at offset d iff h = 2*l + d - 1.
inline Rulebook build_inverse_rulebook(const SparseTensor& low, const ScaleEntry& target) {
    constexpr int32_t kKernel = 3, kStride = 2, kPad = 1;
    if (target.stride * kStride != low.stride)
        throw DataError("inverse rulebook: cache entry is not one scale finer");
    const CoordIndex low_idx = build_coord_index(low);

    Rulebook rb;
    rb.kernel = kKernel;
    rb.out_coords = target.coords;
    rb.out_shape = target.shape;
    rb.out_stride = target.stride;
    rb.pairs.resize(size_t(rb.volume()));

    int32_t k = 0;
    for (int32_t dz = 0; dz < kKernel; ++dz)
        for (int32_t dy = 0; dy < kKernel; ++dy)
            for (int32_t dx = 0; dx < kKernel; ++dx, ++k) {
                auto& list = rb.pairs[k];
                for (int32_t h = 0; h < int32_t(rb.out_coords.size()); ++h) {
                    const Coord& hc = rb.out_coords[h];
                    const int32_t tz = hc[0] + kPad - dz;
                    const int32_t ty = hc[1] + kPad - dy;
                    const int32_t tx = hc[2] + kPad - dx;
                    if ((tz | ty | tx) < 0 || (tz % kStride) || (ty % kStride) || (tx % kStride))
                        continue;
                    const int32_t l = low_idx.lookup(tz / kStride, ty / kStride, tx / kStride);
                    if (l >= 0) list.emplace_back(l, h);
                }
            }
    return rb;
}

}  // namespace mvx
