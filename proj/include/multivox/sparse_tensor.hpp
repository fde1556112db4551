#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "multivox/common.hpp"
#include "multivox/voxelizer.hpp"

namespace mvx {

// The universal currency of the 3D backbone: unique voxel coordinates in
// canonical (z,y,x) order plus a feature row per coordinate.
struct SparseTensor {
    std::vector<Coord> coords;
    Mat features;
    std::array<int32_t, 3> spatial_shape{0, 0, 0};  // (D,H,W)
    int32_t stride = 1;

    int32_t num_active() const { return int32_t(coords.size()); }
    int32_t channels() const { return features.cols; }

    void validate() const {
        if (int32_t(coords.size()) != features.rows)
            throw DataError("sparse tensor: coords/features row mismatch");
        for (size_t i = 0; i < coords.size(); ++i) {
            const Coord& c = coords[i];
            for (int a = 0; a < 3; ++a)
                if (c[a] < 0 || c[a] >= spatial_shape[a])
                    throw DataError("sparse tensor: coordinate outside spatial shape");
            if (i > 0 && !(coords[i - 1] < c))
                throw DataError("sparse tensor: coords not sorted/unique");
        }
    }
};

// Coordinate -> feature row lookup.
struct CoordIndex {
    std::unordered_map<uint64_t, int32_t> map;

    int32_t lookup(int32_t z, int32_t y, int32_t x) const {
        auto it = map.find(pack_coord(z, y, x));
        return it == map.end() ? -1 : it->second;
    }
    int32_t lookup(const Coord& c) const { return lookup(c[0], c[1], c[2]); }
    size_t size() const { return map.size(); }
};

inline CoordIndex build_coord_index(const SparseTensor& t) {
    CoordIndex idx;
    idx.map.reserve(t.coords.size() * 2);
    for (size_t i = 0; i < t.coords.size(); ++i) {
        auto [it, fresh] = idx.map.emplace(pack_coord(t.coords[i]), int32_t(i));
        if (!fresh) throw DataError("build_coord_index: duplicate coordinate");
        (void)it;
    }
    return idx;
}

inline SparseTensor sparse_from_voxel_map(const VoxelMap& vm, Mat features) {
    SparseTensor t;
    t.coords = vm.coords;
    t.features = std::move(features);
    t.spatial_shape = vm.grid;
    t.stride = 1;
    return t;
}

// Debug dump, one line per active voxel: "z y x | f0 f1 ...".
inline void dump_sparse_tensor(const SparseTensor& t, std::ostream& os) {
    for (int32_t r = 0; r < t.num_active(); ++r) {
        const Coord& c = t.coords[r];
        os << c[0] << ' ' << c[1] << ' ' << c[2] << " |";
        for (int32_t k = 0; k < t.channels(); ++k) os << ' ' << t.features.at(r, k);
        os << '\n';
    }
}

inline SparseTensor concat_channels(const SparseTensor& a, const SparseTensor& b) {
    if (a.coords != b.coords) throw DataError("concat_channels: coordinate sets differ");
    SparseTensor out;
    out.coords = a.coords;
    out.spatial_shape = a.spatial_shape;
    out.stride = a.stride;
    out.features = Mat(a.features.rows, a.channels() + b.channels());
    for (int32_t r = 0; r < a.features.rows; ++r) {
        float* dst = out.features.row(r);
        const float* pa = a.features.row(r);
        const float* pb = b.features.row(r);
        std::copy(pa, pa + a.channels(), dst);
        std::copy(pb, pb + b.channels(), dst + a.channels());
    }
    return out;
}

}  // namespace mvx
