#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "multivox/backbone.hpp"
#include "multivox/gcp.hpp"
#include "multivox/losses.hpp"
#include "multivox/point_cloud.hpp"
#include "multivox/voxelizer.hpp"

namespace mvx {

// Everything the pipeline needs. Defaults are the full-scale design values;
// the desk preset shrinks the range only, never the structure.
struct PipelineConfig {
    VoxelizationConfig vox;
    int32_t num_classes = 22;
    std::vector<int32_t> thing_classes{1, 2, 3, 4, 5, 6, 7};
    std::vector<int32_t> vfe_widths{16, 32};
    BackboneSpec backbone;
    GcpSpec gcp;
    int32_t head_width = 64;
    int32_t top_k = 100;
    float score_thresh = 0.1f;
    float iou_beta = 0.5f;
    FocalVariant focal_variant = FocalVariant::penalty_reduced;
    bool stage2_enabled = true;
    float tau_mask = 0.5f;
    float tau_box = 0.5f;
    float box_margin = 0.1f;
    int32_t stage2_hidden = 64;
    TtaConfig tta;
    TaskSigmas sigmas;
    uint64_t seed = 0;

    void validate() const {
        vox.validate();
        if (num_classes < 2) throw DataError("config: num_classes must be >= 2");
        if (thing_classes.empty()) throw DataError("config: thing_classes must be non-empty");
        for (int32_t t : thing_classes)
            if (t < 1 || t > num_classes)
                throw DataError("config: thing class " + std::to_string(t) + " outside 1..K");
        if (vfe_widths.empty()) throw DataError("config: vfe_widths must be non-empty");
        if (vfe_widths.back() != backbone.in_channels)
            throw DataError("config: vfe output width must match backbone input width");
    }

    static PipelineConfig desk() {
        PipelineConfig c;
        c.vox.range_min = {-6.4, -6.4, -2.0};
        c.vox.range_max = {6.4, 6.4, 4.0};
        c.num_classes = 5;
        c.thing_classes = {1, 2};
        return c;
    }
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed) ok = ok || it.key() == k;
        if (!ok) throw ParseError("config: unknown key '" + where + it.key() + "'");
    }
}

template <size_t N>
std::array<double, N> as_darray(const nlohmann::json& j, const std::string& key) {
    if (!j.is_array() || j.size() != N)
        throw ParseError("config: '" + key + "' must be an array of " + std::to_string(N));
    std::array<double, N> out{};
    for (size_t i = 0; i < N; ++i) out[i] = j[i].get<double>();
    return out;
}

template <size_t N>
std::array<int32_t, N> as_iarray(const nlohmann::json& j, const std::string& key) {
    if (!j.is_array() || j.size() != N)
        throw ParseError("config: '" + key + "' must be an array of " + std::to_string(N));
    std::array<int32_t, N> out{};
    for (size_t i = 0; i < N; ++i) out[i] = j[i].get<int32_t>();
    return out;
}

inline std::vector<double> deg_list(const nlohmann::json& j) {
    std::vector<double> out;
    for (const auto& v : j) out.push_back(v.get<double>() * kPi / 180.0);
    return out;
}

}  // namespace detail

inline PipelineConfig parse_config_json(const nlohmann::json& j) {
    PipelineConfig c;
    detail::require_keys(
        j,
        {"voxel_size", "range_min", "range_max", "oob_policy", "num_classes", "thing_classes",
         "vfe_widths", "encoder", "decoder", "gcp", "heads", "stage2", "tta", "sigmas", "seed"},
        "");

    if (j.contains("voxel_size")) c.vox.voxel_size = detail::as_darray<3>(j["voxel_size"], "voxel_size");
    if (j.contains("range_min")) c.vox.range_min = detail::as_darray<3>(j["range_min"], "range_min");
    if (j.contains("range_max")) c.vox.range_max = detail::as_darray<3>(j["range_max"], "range_max");
    if (j.contains("oob_policy")) {
        const std::string p = j["oob_policy"].get<std::string>();
        if (p == "drop")
            c.vox.oob_policy = OobPolicy::drop;
        else if (p == "clamp")
            c.vox.oob_policy = OobPolicy::clamp;
        else
            throw ParseError("config: oob_policy must be 'drop' or 'clamp', got '" + p + "'");
    }
    if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<int32_t>();
    if (j.contains("thing_classes")) {
        c.thing_classes.clear();
        for (const auto& v : j["thing_classes"]) c.thing_classes.push_back(v.get<int32_t>());
    }
    if (j.contains("vfe_widths")) {
        c.vfe_widths.clear();
        for (const auto& v : j["vfe_widths"]) c.vfe_widths.push_back(v.get<int32_t>());
        c.backbone.in_channels = c.vfe_widths.back();
    }
    if (j.contains("encoder")) {
        const auto& e = j["encoder"];
        detail::require_keys(e, {"widths", "depths"}, "encoder.");
        if (e.contains("widths")) c.backbone.enc_widths = detail::as_iarray<4>(e["widths"], "encoder.widths");
        if (e.contains("depths")) c.backbone.enc_depths = detail::as_iarray<4>(e["depths"], "encoder.depths");
    }
    if (j.contains("decoder")) {
        const auto& d = j["decoder"];
        detail::require_keys(d, {"widths"}, "decoder.");
        if (d.contains("widths")) c.backbone.dec_widths = detail::as_iarray<4>(d["widths"], "decoder.widths");
    }
    if (j.contains("gcp")) {
        const auto& g = j["gcp"];
        detail::require_keys(g, {"depths", "widths", "out_channels"}, "gcp.");
        if (g.contains("depths")) c.gcp.depths = detail::as_iarray<2>(g["depths"], "gcp.depths");
        if (g.contains("widths")) c.gcp.widths = detail::as_iarray<2>(g["widths"], "gcp.widths");
        if (g.contains("out_channels")) c.gcp.out_channels = g["out_channels"].get<int32_t>();
    }
    if (j.contains("heads")) {
        const auto& h = j["heads"];
        detail::require_keys(h, {"width", "top_k", "score_thresh", "iou_beta", "focal"}, "heads.");
        if (h.contains("width")) c.head_width = h["width"].get<int32_t>();
        if (h.contains("top_k")) c.top_k = h["top_k"].get<int32_t>();
        if (h.contains("score_thresh")) c.score_thresh = h["score_thresh"].get<float>();
        if (h.contains("iou_beta")) c.iou_beta = h["iou_beta"].get<float>();
        if (h.contains("focal")) {
            const std::string f = h["focal"].get<std::string>();
            if (f == "penalty_reduced")
                c.focal_variant = FocalVariant::penalty_reduced;
            else if (f == "classic")
                c.focal_variant = FocalVariant::classic;
            else
                throw ParseError("config: heads.focal must be 'penalty_reduced' or 'classic'");
        }
    }
    if (j.contains("stage2")) {
        const auto& s = j["stage2"];
        detail::require_keys(s, {"enabled", "tau_mask", "tau_box", "margin", "hidden"}, "stage2.");
        if (s.contains("enabled")) c.stage2_enabled = s["enabled"].get<bool>();
        if (s.contains("tau_mask")) c.tau_mask = s["tau_mask"].get<float>();
        if (s.contains("tau_box")) c.tau_box = s["tau_box"].get<float>();
        if (s.contains("margin")) c.box_margin = s["margin"].get<float>();
        if (s.contains("hidden")) c.stage2_hidden = s["hidden"].get<int32_t>();
    }
    if (j.contains("tta")) {
        const auto& t = j["tta"];
        detail::require_keys(
            t, {"flip_xz", "flip_yz", "scales", "yaw_deg", "pitch_deg", "roll_deg", "translate_z"},
            "tta.");
        if (t.contains("flip_xz")) c.tta.flip_xz = t["flip_xz"].get<bool>();
        if (t.contains("flip_yz")) c.tta.flip_yz = t["flip_yz"].get<bool>();
        if (t.contains("scales")) {
            c.tta.scales.clear();
            for (const auto& v : t["scales"]) c.tta.scales.push_back(v.get<double>());
        }
        if (t.contains("yaw_deg")) c.tta.yaw_rad = detail::deg_list(t["yaw_deg"]);
        if (t.contains("pitch_deg")) c.tta.pitch_rad = detail::deg_list(t["pitch_deg"]);
        if (t.contains("roll_deg")) c.tta.roll_rad = detail::deg_list(t["roll_deg"]);
        if (t.contains("translate_z")) {
            c.tta.translate_z.clear();
            for (const auto& v : t["translate_z"]) c.tta.translate_z.push_back(v.get<double>());
        }
    }
    if (j.contains("sigmas")) {
        const auto& s = j["sigmas"];
        detail::require_keys(s, {"seg", "det", "bev"}, "sigmas.");
        if (s.contains("seg")) c.sigmas.seg = s["seg"].get<double>();
        if (s.contains("det")) c.sigmas.det = s["det"].get<double>();
        if (s.contains("bev")) c.sigmas.bev = s["bev"].get<double>();
    }
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();

    c.validate();
    return c;
}

inline PipelineConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
    return parse_config_json(j);
}

}  // namespace mvx
