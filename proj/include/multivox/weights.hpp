#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "multivox/backbone.hpp"
#include "multivox/config.hpp"
#include "multivox/gcp.hpp"
#include "multivox/heads.hpp"
#include "multivox/stage2.hpp"
#include "multivox/voxelizer.hpp"

namespace mvx {

// Named tensor container. Binary format:
//   magic "LMNW", version u32 LE, tensor count u32 LE; per tensor:
//   name_len u32 + UTF-8 name, rank u32, dims u32[rank], f32 LE payload.
struct WeightTensor {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<float> data;

    size_t numel() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

struct WeightStore {
    std::vector<WeightTensor> tensors;
    std::unordered_map<std::string, size_t> index;
    mutable std::vector<uint8_t> accessed;  // consumption tracking for the orphan check

    void add(std::string name, std::vector<uint32_t> dims, std::vector<float> data) {
        WeightTensor t{std::move(name), std::move(dims), std::move(data)};
        if (t.numel() != t.data.size()) throw DataError("weight tensor size mismatch: " + t.name);
        if (index.count(t.name)) throw DataError("duplicate weight tensor: " + t.name);
        index.emplace(t.name, tensors.size());
        tensors.push_back(std::move(t));
        accessed.push_back(0);
    }

    bool has(const std::string& name) const { return index.count(name) != 0; }

    const WeightTensor& get(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw DataError("missing weight tensor: " + name);
        accessed[it->second] = 1;
        return tensors[it->second];
    }

    void reset_access() const { std::fill(accessed.begin(), accessed.end(), 0); }

    std::vector<std::string> unused_names() const {
        std::vector<std::string> out;
        for (size_t i = 0; i < tensors.size(); ++i)
            if (!accessed[i]) out.push_back(tensors[i].name);
        return out;
    }
};

inline void save_weights(const WeightStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write("LMNW", 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const uint32_t count = uint32_t(store.tensors.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& t : store.tensors) {
        const uint32_t name_len = uint32_t(t.name.size());
        out.write(reinterpret_cast<const char*>(&name_len), 4);
        out.write(t.name.data(), name_len);
        const uint32_t rank = uint32_t(t.dims.size());
        out.write(reinterpret_cast<const char*>(&rank), 4);
        out.write(reinterpret_cast<const char*>(t.dims.data()), std::streamsize(rank * 4));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  std::streamsize(t.data.size() * sizeof(float)));
    }
    if (!out) throw DataError("write failed: " + path);
}

inline WeightStore load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LMNW", 4) != 0)
        throw ParseError(path + ": bad magic at byte 0 (expected LMNW)");
    uint32_t version = 0, count = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&count), 4);
    if (!in || version != 1) throw ParseError(path + ": unsupported weight container version");

    WeightStore store;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), 4);
        if (!in || name_len > 4096) throw ParseError(path + ": truncated tensor header");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t rank = 0;
        in.read(reinterpret_cast<char*>(&rank), 4);
        if (!in || rank > 8) throw ParseError(path + ": bad tensor rank for " + name);
        std::vector<uint32_t> dims(rank);
        in.read(reinterpret_cast<char*>(dims.data()), std::streamsize(rank * 4));
        size_t numel = 1;
        for (uint32_t d : dims) numel *= d;
        std::vector<float> data(numel);
        in.read(reinterpret_cast<char*>(data.data()), std::streamsize(numel * sizeof(float)));
        if (!in) throw ParseError(path + ": truncated payload for " + name);
        store.add(std::move(name), std::move(dims), std::move(data));
    }
    return store;
}

// ---------------------------------------------------------------------------
// Seeded initialization. Every learnable tensor is drawn U(-k, k) with
// k = 1/sqrt(fan_in); norm parameters start as the identity transform.

namespace detail {

inline std::vector<float> uniform_fill(Rng& rng, size_t n, double bound) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.uniform(-bound, bound));
    return v;
}

struct WeightBuilder {
    WeightStore& store;
    Rng& rng;

    void conv3d(const std::string& base, int32_t k, int32_t cin, int32_t cout) {
        const size_t vol = size_t(k) * k * k;
        const double bound = 1.0 / std::sqrt(double(vol) * cin);
        store.add(base + ".w", {uint32_t(vol), uint32_t(cin), uint32_t(cout)},
                  uniform_fill(rng, vol * cin * cout, bound));
        store.add(base + ".b", {uint32_t(cout)}, uniform_fill(rng, size_t(cout), bound));
    }
    void conv2d(const std::string& base, int32_t k, int32_t cin, int32_t cout) {
        const size_t vol = size_t(k) * k;
        const double bound = 1.0 / std::sqrt(double(vol) * cin);
        store.add(base + ".w", {uint32_t(vol), uint32_t(cin), uint32_t(cout)},
                  uniform_fill(rng, vol * cin * cout, bound));
        store.add(base + ".b", {uint32_t(cout)}, uniform_fill(rng, size_t(cout), bound));
    }
    void norm(const std::string& base, int32_t c) {
        store.add(base + ".scale", {uint32_t(c)}, std::vector<float>(size_t(c), 1.f));
        store.add(base + ".shift", {uint32_t(c)}, std::vector<float>(size_t(c), 0.f));
        store.add(base + ".mean", {uint32_t(c)}, std::vector<float>(size_t(c), 0.f));
        store.add(base + ".var", {uint32_t(c)}, std::vector<float>(size_t(c), 1.f));
    }
    void linear(const std::string& base, int32_t in, int32_t out) {
        const double bound = 1.0 / std::sqrt(double(in));
        store.add(base + ".w", {uint32_t(in), uint32_t(out)},
                  uniform_fill(rng, size_t(in) * out, bound));
        store.add(base + ".b", {uint32_t(out)}, uniform_fill(rng, size_t(out), bound));
    }
    void vec(const std::string& name, int32_t n) {
        const double bound = 1.0 / std::sqrt(double(n));
        store.add(name, {uint32_t(n)}, uniform_fill(rng, size_t(n), bound));
    }
    void resblock(const std::string& base, int32_t c) {
        conv3d(base + ".conv1", 3, c, c);
        norm(base + ".norm1", c);
        conv3d(base + ".conv2", 3, c, c);
        norm(base + ".norm2", c);
    }
};

inline int32_t depth_at_stride8(const VoxelizationConfig& vox) {
    int32_t d = vox.grid_shape()[0];
    for (int i = 0; i < 3; ++i) d = (d + 1) / 2;
    return d;
}

}  // namespace detail

inline WeightStore init_weights(const PipelineConfig& cfg, uint64_t seed) {
    cfg.validate();
    WeightStore store;
    Rng rng(seed);
    detail::WeightBuilder b{store, rng};
    const BackboneSpec& bb = cfg.backbone;
    const GcpSpec& gcp = cfg.gcp;

    int32_t in = kPointFeatureDim;
    for (size_t l = 0; l < cfg.vfe_widths.size(); ++l) {
        b.linear("vfe.mlp" + std::to_string(l), in, cfg.vfe_widths[l]);
        in = cfg.vfe_widths[l];
    }

    int32_t cin = bb.in_channels;
    for (int32_t s = 0; s < 4; ++s) {
        const std::string base = "enc.s" + std::to_string(s + 1);
        b.conv3d(base + ".lead.conv", 3, cin, bb.enc_widths[s]);
        b.norm(base + ".lead.norm", bb.enc_widths[s]);
        for (int32_t d = 0; d < bb.enc_depths[s]; ++d)
            b.resblock(base + ".res" + std::to_string(d), bb.enc_widths[s]);
        cin = bb.enc_widths[s];
    }

    const int32_t depth8 = detail::depth_at_stride8(cfg.vox);
    const int32_t bev_in = bb.enc_widths[3] * depth8;
    b.conv2d("gcp.stem.conv", 1, bev_in, gcp.widths[0]);
    b.norm("gcp.stem.norm", gcp.widths[0]);
    for (int32_t i = 0; i < gcp.depths[0]; ++i) {
        const std::string base = "gcp.l1.c" + std::to_string(i);
        b.conv2d(base + ".conv", 3, gcp.widths[0], gcp.widths[0]);
        b.norm(base + ".norm", gcp.widths[0]);
    }
    for (int32_t i = 0; i < gcp.depths[1]; ++i) {
        const std::string base = "gcp.l2.c" + std::to_string(i);
        b.conv2d(base + ".conv", 3, i == 0 ? gcp.widths[0] : gcp.widths[1], gcp.widths[1]);
        b.norm(base + ".norm", gcp.widths[1]);
    }
    b.conv2d("gcp.out.conv", 1, gcp.concat_channels(), gcp.out_channels * depth8);

    b.conv3d("dec.adapter.conv", 1, gcp.out_channels, bb.dec_widths[0]);
    b.norm("dec.adapter.norm", bb.dec_widths[0]);
    for (int32_t s = 0; s < 4; ++s) {
        const std::string base = "dec.s" + std::to_string(s + 1);
        b.resblock(base + ".res", bb.dec_concat_width(s));
        b.conv3d(base + ".up.conv", 3, bb.dec_concat_width(s), bb.dec_out_width(s));
        b.norm(base + ".up.norm", bb.dec_out_width(s));
    }

    const int32_t bev_c = gcp.concat_channels();
    b.linear("head.seg", bb.dec_widths[3], cfg.num_classes);
    b.conv2d("head.bev.c0.conv", 3, bev_c, cfg.head_width);
    b.norm("head.bev.c0.norm", cfg.head_width);
    b.conv2d("head.bev.c1.conv", 3, cfg.head_width, cfg.head_width);
    b.norm("head.bev.c1.norm", cfg.head_width);
    b.conv2d("head.bev.out", 1, cfg.head_width, cfg.num_classes);
    const int32_t num_thing = int32_t(cfg.thing_classes.size());
    const std::array<std::pair<std::string, int32_t>, 3> branches{
        {{"hm", num_thing}, {"reg", kRegChannels}, {"iou", 1}}};
    for (const auto& [name, cout] : branches) {
        const std::string base = "head.det." + name;
        b.conv2d(base + ".c0.conv", 3, bev_c, cfg.head_width);
        b.norm(base + ".c0.norm", cfg.head_width);
        b.conv2d(base + ".out", 1, cfg.head_width, cout);
    }

    if (cfg.stage2_enabled) {
        const int32_t hidden = cfg.stage2_hidden;
        const int32_t pin = kLocalFeatureDim + bb.dec_widths[3];
        b.linear("s2.point.mlp0", pin, hidden);
        b.linear("s2.point.mlp1", hidden, hidden);
        b.vec("s2.attn.w", hidden);
        b.linear("s2.box.mlp0", 2 * hidden + 5 * bev_c, hidden);
        b.linear("s2.box.mlp1", hidden, hidden);
        b.linear("s2.box.cls", hidden, num_thing + 1);
        b.linear("s2.mask.mlp0", 2 * hidden, hidden);
        b.linear("s2.mask.out", hidden, 1);
    }
    return store;
}

// ---------------------------------------------------------------------------
// Typed readers. Dims are checked against the architecture the config implies.

namespace detail {

inline void check_dims(const WeightTensor& t, std::vector<uint32_t> expect) {
    if (t.dims != expect) {
        std::string msg = "weight tensor " + t.name + ": dims [";
        for (uint32_t d : t.dims) msg += std::to_string(d) + " ";
        msg += "] do not match architecture [";
        for (uint32_t d : expect) msg += std::to_string(d) + " ";
        msg += "]";
        throw DataError(msg);
    }
}

inline ConvWeights load_conv3d(const WeightStore& s, const std::string& base, int32_t k,
                               int32_t cin, int32_t cout) {
    ConvWeights w;
    w.kernel = k;
    w.cin = cin;
    w.cout = cout;
    const WeightTensor& wt = s.get(base + ".w");
    check_dims(wt, {uint32_t(k * k * k), uint32_t(cin), uint32_t(cout)});
    w.w = wt.data;
    const WeightTensor& bt = s.get(base + ".b");
    check_dims(bt, {uint32_t(cout)});
    w.bias = bt.data;
    return w;
}

inline Conv2dWeights load_conv2d(const WeightStore& s, const std::string& base, int32_t k,
                                 int32_t cin, int32_t cout) {
    Conv2dWeights w;
    w.kernel = k;
    w.cin = cin;
    w.cout = cout;
    const WeightTensor& wt = s.get(base + ".w");
    check_dims(wt, {uint32_t(k * k), uint32_t(cin), uint32_t(cout)});
    w.w = wt.data;
    const WeightTensor& bt = s.get(base + ".b");
    check_dims(bt, {uint32_t(cout)});
    w.bias = bt.data;
    return w;
}

inline NormParams load_norm(const WeightStore& s, const std::string& base, int32_t c) {
    NormParams p;
    const WeightTensor& sc = s.get(base + ".scale");
    check_dims(sc, {uint32_t(c)});
    p.scale = sc.data;
    p.shift = s.get(base + ".shift").data;
    p.mean = s.get(base + ".mean").data;
    p.var = s.get(base + ".var").data;
    p.validate(c);
    return p;
}

inline Mat load_mat(const WeightStore& s, const std::string& name, int32_t rows, int32_t cols) {
    const WeightTensor& t = s.get(name);
    check_dims(t, {uint32_t(rows), uint32_t(cols)});
    Mat m(rows, cols);
    m.v = t.data;
    return m;
}

inline std::vector<float> load_vec(const WeightStore& s, const std::string& name, int32_t n) {
    const WeightTensor& t = s.get(name);
    check_dims(t, {uint32_t(n)});
    return t.data;
}

inline ResblockWeights load_resblock(const WeightStore& s, const std::string& base, int32_t c) {
    ResblockWeights r;
    r.conv1 = load_conv3d(s, base + ".conv1", 3, c, c);
    r.norm1 = load_norm(s, base + ".norm1", c);
    r.conv2 = load_conv3d(s, base + ".conv2", 3, c, c);
    r.norm2 = load_norm(s, base + ".norm2", c);
    return r;
}

}  // namespace detail

struct HeadsWeights {
    Mat seg_w;
    std::vector<float> seg_b;
    BevSegWeights bev;
    DetHeadWeights det;
};

struct PipelineWeights {
    VfeParams vfe;
    BackboneWeights backbone;
    GcpWeights gcp;
    HeadsWeights heads;
    Stage2Weights stage2;
    bool has_stage2 = false;
};

inline PipelineWeights load_pipeline_weights(const WeightStore& s, const PipelineConfig& cfg) {
    cfg.validate();
    PipelineWeights pw;
    const BackboneSpec& bb = cfg.backbone;
    const GcpSpec& gcp = cfg.gcp;

    int32_t in = kPointFeatureDim;
    for (size_t l = 0; l < cfg.vfe_widths.size(); ++l) {
        pw.vfe.weights.push_back(
            detail::load_mat(s, "vfe.mlp" + std::to_string(l) + ".w", in, cfg.vfe_widths[l]));
        pw.vfe.biases.push_back(
            detail::load_vec(s, "vfe.mlp" + std::to_string(l) + ".b", cfg.vfe_widths[l]));
        in = cfg.vfe_widths[l];
    }

    int32_t cin = bb.in_channels;
    for (int32_t st = 0; st < 4; ++st) {
        const std::string base = "enc.s" + std::to_string(st + 1);
        pw.backbone.enc[st].lead.conv =
            detail::load_conv3d(s, base + ".lead.conv", 3, cin, bb.enc_widths[st]);
        pw.backbone.enc[st].lead.norm = detail::load_norm(s, base + ".lead.norm", bb.enc_widths[st]);
        for (int32_t d = 0; d < bb.enc_depths[st]; ++d)
            pw.backbone.enc[st].blocks.push_back(detail::load_resblock(
                s, base + ".res" + std::to_string(d), bb.enc_widths[st]));
        cin = bb.enc_widths[st];
    }

    const int32_t depth8 = detail::depth_at_stride8(cfg.vox);
    const int32_t bev_in = bb.enc_widths[3] * depth8;
    pw.gcp.stem = detail::load_conv2d(s, "gcp.stem.conv", 1, bev_in, gcp.widths[0]);
    pw.gcp.stem_norm = detail::load_norm(s, "gcp.stem.norm", gcp.widths[0]);
    for (int32_t i = 0; i < gcp.depths[0]; ++i) {
        const std::string base = "gcp.l1.c" + std::to_string(i);
        pw.gcp.level1.push_back(detail::load_conv2d(s, base + ".conv", 3, gcp.widths[0], gcp.widths[0]));
        pw.gcp.level1_norm.push_back(detail::load_norm(s, base + ".norm", gcp.widths[0]));
    }
    for (int32_t i = 0; i < gcp.depths[1]; ++i) {
        const std::string base = "gcp.l2.c" + std::to_string(i);
        pw.gcp.level2.push_back(detail::load_conv2d(
            s, base + ".conv", 3, i == 0 ? gcp.widths[0] : gcp.widths[1], gcp.widths[1]));
        pw.gcp.level2_norm.push_back(detail::load_norm(s, base + ".norm", gcp.widths[1]));
    }
    pw.gcp.out_proj = detail::load_conv2d(s, "gcp.out.conv", 1, gcp.concat_channels(),
                                          gcp.out_channels * depth8);

    pw.backbone.adapter.conv =
        detail::load_conv3d(s, "dec.adapter.conv", 1, gcp.out_channels, bb.dec_widths[0]);
    pw.backbone.adapter.norm = detail::load_norm(s, "dec.adapter.norm", bb.dec_widths[0]);
    for (int32_t st = 0; st < 4; ++st) {
        const std::string base = "dec.s" + std::to_string(st + 1);
        pw.backbone.dec[st].res = detail::load_resblock(s, base + ".res", bb.dec_concat_width(st));
        pw.backbone.dec[st].up.conv = detail::load_conv3d(s, base + ".up.conv", 3,
                                                          bb.dec_concat_width(st), bb.dec_out_width(st));
        pw.backbone.dec[st].up.norm = detail::load_norm(s, base + ".up.norm", bb.dec_out_width(st));
    }

    const int32_t bev_c = gcp.concat_channels();
    pw.heads.seg_w = detail::load_mat(s, "head.seg.w", bb.dec_widths[3], cfg.num_classes);
    pw.heads.seg_b = detail::load_vec(s, "head.seg.b", cfg.num_classes);
    pw.heads.bev.c0 = detail::load_conv2d(s, "head.bev.c0.conv", 3, bev_c, cfg.head_width);
    pw.heads.bev.n0 = detail::load_norm(s, "head.bev.c0.norm", cfg.head_width);
    pw.heads.bev.c1 = detail::load_conv2d(s, "head.bev.c1.conv", 3, cfg.head_width, cfg.head_width);
    pw.heads.bev.n1 = detail::load_norm(s, "head.bev.c1.norm", cfg.head_width);
    pw.heads.bev.out = detail::load_conv2d(s, "head.bev.out", 1, cfg.head_width, cfg.num_classes);

    const int32_t num_thing = int32_t(cfg.thing_classes.size());
    auto load_branch = [&](const std::string& name, int32_t cout) {
        DetBranchWeights br;
        br.c0 = detail::load_conv2d(s, "head.det." + name + ".c0.conv", 3, bev_c, cfg.head_width);
        br.n0 = detail::load_norm(s, "head.det." + name + ".c0.norm", cfg.head_width);
        br.out = detail::load_conv2d(s, "head.det." + name + ".out", 1, cfg.head_width, cout);
        return br;
    };
    pw.heads.det.hm = load_branch("hm", num_thing);
    pw.heads.det.reg = load_branch("reg", kRegChannels);
    pw.heads.det.iou = load_branch("iou", 1);

    if (cfg.stage2_enabled) {
        const int32_t hidden = cfg.stage2_hidden;
        const int32_t pin = kLocalFeatureDim + bb.dec_widths[3];
        pw.stage2.point_w0 = detail::load_mat(s, "s2.point.mlp0.w", pin, hidden);
        pw.stage2.point_b0 = detail::load_vec(s, "s2.point.mlp0.b", hidden);
        pw.stage2.point_w1 = detail::load_mat(s, "s2.point.mlp1.w", hidden, hidden);
        pw.stage2.point_b1 = detail::load_vec(s, "s2.point.mlp1.b", hidden);
        pw.stage2.attn = detail::load_vec(s, "s2.attn.w", hidden);
        pw.stage2.box_w0 = detail::load_mat(s, "s2.box.mlp0.w", 2 * hidden + 5 * bev_c, hidden);
        pw.stage2.box_b0 = detail::load_vec(s, "s2.box.mlp0.b", hidden);
        pw.stage2.box_w1 = detail::load_mat(s, "s2.box.mlp1.w", hidden, hidden);
        pw.stage2.box_b1 = detail::load_vec(s, "s2.box.mlp1.b", hidden);
        pw.stage2.box_cls_w = detail::load_mat(s, "s2.box.cls.w", hidden, num_thing + 1);
        pw.stage2.box_cls_b = detail::load_vec(s, "s2.box.cls.b", num_thing + 1);
        pw.stage2.mask_w0 = detail::load_mat(s, "s2.mask.mlp0.w", 2 * hidden, hidden);
        pw.stage2.mask_b0 = detail::load_vec(s, "s2.mask.mlp0.b", hidden);
        pw.stage2.mask_w1 = detail::load_mat(s, "s2.mask.out.w", hidden, 1);
        pw.stage2.mask_b1 = detail::load_vec(s, "s2.mask.out.b", 1);
        pw.has_stage2 = true;
    }
    return pw;
}

}  // namespace mvx
