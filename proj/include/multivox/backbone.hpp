#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "multivox/rulebook.hpp"
#include "multivox/sparse_ops.hpp"
#include "multivox/sparse_tensor.hpp"

namespace mvx {

// Four encoder stages (strides 1,2,4,8) and four decoder stages walking back
// to stride 1. Widths/depths default to the full-scale design.
struct BackboneSpec {
    std::array<int32_t, 4> enc_widths{32, 64, 128, 256};
    std::array<int32_t, 4> enc_depths{2, 3, 3, 3};
    std::array<int32_t, 4> dec_widths{128, 64, 32, 32};
    int32_t in_channels = 32;  // VFE output width

    static constexpr int32_t kStages = 4;
    int32_t downsampling() const { return 1 << (kStages - 1); }

    // Channel width of the tensor entering decoder stage s (stride 8 -> 1).
    int32_t dec_in_width(int32_t s) const { return dec_widths[s]; }
    // Width after concatenating the same-scale encoder output.
    int32_t dec_concat_width(int32_t s) const {
        return dec_widths[s] + enc_widths[kStages - 1 - s];
    }
    // Width produced by the stage's upsample (or final refine) conv.
    int32_t dec_out_width(int32_t s) const {
        return s + 1 < kStages ? dec_widths[s + 1] : dec_widths[kStages - 1];
    }
};

struct ConvLayerWeights {
    ConvWeights conv;
    NormParams norm;
};

struct EncoderStageWeights {
    ConvLayerWeights lead;                 // strided conv (plain submanifold at stage 1)
    std::vector<ResblockWeights> blocks;
};

struct DecoderStageWeights {
    ResblockWeights res;   // runs at the concatenated width
    ConvLayerWeights up;   // inverse conv to the next finer scale; refine conv at the last stage
};

struct BackboneWeights {
    std::array<EncoderStageWeights, 4> enc;
    ConvLayerWeights adapter;  // 1x1x1 bottleneck conv: enc_widths[3] -> dec_widths[0]
    std::array<DecoderStageWeights, 4> dec;
};

// Everything the decoder shares with the encoder: per-scale outputs, the
// submanifold rulebooks (reused verbatim since coordinate sets are shared),
// and the key-index cache.
struct BackboneState {
    std::array<SparseTensor, 4> enc_out;
    std::array<Rulebook, 4> subm_rb;  // index s: rulebook at stride 2^s
    KeyIndexCache cache;
};

inline BackboneState encode(const SparseTensor& vfe_out, const BackboneSpec& spec,
                            const BackboneWeights& w) {
    if (vfe_out.channels() != spec.in_channels)
        throw DataError("encode: input width does not match spec");

    BackboneState st;
    SparseTensor x = vfe_out;
    for (int32_t s = 0; s < BackboneSpec::kStages; ++s) {
        if (s == 0) {
            Rulebook lead_rb = build_submanifold_rulebook(x, 3);
            x = submanifold_conv3d(x, lead_rb, w.enc[s].lead.conv);
        } else {
            Rulebook lead_rb = build_strided_rulebook(x);
            x = sparse_conv3d(x, lead_rb, w.enc[s].lead.conv);
        }
        norm_relu_rows(x.features, w.enc[s].lead.norm);

        st.subm_rb[s] = build_submanifold_rulebook(x, 3);
        if (int32_t(w.enc[s].blocks.size()) != spec.enc_depths[s])
            throw DataError("encode: resblock count does not match spec depth");
        for (const auto& blk : w.enc[s].blocks) x = resblock(x, st.subm_rb[s], blk);

        st.cache.record(x);
        st.enc_out[s] = x;
    }
    return st;
}

// Decoder walk: adapter, then per scale concat(skip) -> resblock -> upsample;
// the last stage refines at stride 1 instead of upsampling further.
inline SparseTensor decode(const SparseTensor& bottleneck, const BackboneState& state,
                           const BackboneSpec& spec, const BackboneWeights& w) {
    if (bottleneck.coords != state.enc_out[3].coords)
        throw DataError("decode: bottleneck coordinates differ from the encoder's");

    const Rulebook adapter_rb = build_submanifold_rulebook(bottleneck, 1);
    SparseTensor x = submanifold_conv3d(bottleneck, adapter_rb, w.adapter.conv);
    norm_relu_rows(x.features, w.adapter.norm);

    for (int32_t s = 0; s < BackboneSpec::kStages; ++s) {
        const int32_t scale = BackboneSpec::kStages - 1 - s;  // 3,2,1,0
        const SparseTensor& skip = state.enc_out[scale];
        if (x.coords != skip.coords)
            throw DataError("decode: coordinate set mismatch at stride " +
                            std::to_string(x.stride));
        x = concat_channels(x, skip);
        x = resblock(x, state.subm_rb[scale], w.dec[s].res);
        if (scale > 0) {
            Rulebook up = build_inverse_rulebook(x, state.cache.at(x.stride / 2));
            x = inverse_sparse_conv3d(x, up, w.dec[s].up.conv);
        } else {
            x = submanifold_conv3d(x, state.subm_rb[0], w.dec[s].up.conv);
        }
        norm_relu_rows(x.features, w.dec[s].up.norm);
    }
    if (x.channels() != spec.dec_widths[BackboneSpec::kStages - 1])
        throw DataError("decode: output width does not match the configured decoder");
    return x;
}

}  // namespace mvx
