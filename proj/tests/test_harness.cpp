#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "multivox/config.hpp"
#include "multivox/pipeline.hpp"
#include "multivox/ply.hpp"
#include "multivox/scene.hpp"
#include "multivox/weights.hpp"

using namespace mvx;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string write_temp(const std::string& name, const std::string& text) {
    const std::string path = temp_path(name);
    std::ofstream(path) << text;
    return path;
}

// small everything: full structure, desk range, narrow channels
PipelineConfig tiny_config() {
    PipelineConfig cfg = PipelineConfig::desk();
    cfg.vfe_widths = {8};
    cfg.backbone.in_channels = 8;
    cfg.backbone.enc_widths = {8, 12, 16, 20};
    cfg.backbone.enc_depths = {1, 1, 1, 1};
    cfg.backbone.dec_widths = {12, 8, 8, 8};
    cfg.gcp.depths = {2, 2};
    cfg.gcp.widths = {12, 16};
    cfg.gcp.out_channels = 16;
    cfg.head_width = 8;
    cfg.stage2_hidden = 16;
    return cfg;
}

Scene tiny_scene(uint64_t seed = 11) {
    SceneSpec spec;
    spec.extent = 5.0;
    spec.vehicles = 2;
    spec.pedestrians = 1;
    spec.poles = 2;
    spec.walls = 1;
    spec.ground_points = 2500;
    spec.points_per_object = 250;
    spec.seed = seed;
    return generate_scene(spec);
}

}  // namespace

TEST_CASE("minimal config file carries the full-scale defaults") {
    const std::string path = write_temp("mvx_cfg_min.json", "{}\n");
    PipelineConfig cfg = parse_config(path);
    CHECK(cfg.vox.voxel_size == std::array<double, 3>{0.1, 0.1, 0.15});
    CHECK(cfg.vox.range_min == std::array<double, 3>{-75.2, -75.2, -2.0});
    CHECK(cfg.vox.range_max == std::array<double, 3>{75.2, 75.2, 4.0});
    CHECK(cfg.vox.grid_shape() == std::array<int32_t, 3>{40, 1504, 1504});
    CHECK(cfg.num_classes == 22);
    CHECK(cfg.backbone.enc_widths == std::array<int32_t, 4>{32, 64, 128, 256});
    CHECK(cfg.backbone.enc_depths == std::array<int32_t, 4>{2, 3, 3, 3});
    CHECK(cfg.backbone.dec_widths == std::array<int32_t, 4>{128, 64, 32, 32});
    CHECK(cfg.gcp.depths == std::array<int32_t, 2>{6, 6});
    CHECK(cfg.gcp.widths == std::array<int32_t, 2>{128, 256});
    CHECK(cfg.seed == 0);
    std::remove(path.c_str());
}

TEST_CASE("unknown config keys are rejected by name") {
    const std::string path = write_temp("mvx_cfg_bad.json", R"({"voxel_sizes": [1,1,1]})");
    CHECK_THROWS_WITH_AS(parse_config(path), doctest::Contains("voxel_sizes"), ParseError);
    const std::string nested =
        write_temp("mvx_cfg_bad2.json", R"({"gcp": {"depth": [6,6]}})");
    CHECK_THROWS_WITH_AS(parse_config(nested), doctest::Contains("gcp.depth"), ParseError);
    std::remove(path.c_str());
    std::remove(nested.c_str());
}

TEST_CASE("config round trips through json values") {
    const std::string path = write_temp("mvx_cfg_desk.json", R"({
        "range_min": [-6.4, -6.4, -2.0],
        "range_max": [6.4, 6.4, 4.0],
        "num_classes": 5,
        "thing_classes": [1, 2],
        "heads": {"score_thresh": 0.25},
        "tta": {"yaw_deg": [90, -90], "scales": []},
        "seed": 42
    })");
    PipelineConfig cfg = parse_config(path);
    CHECK(cfg.vox.grid_shape() == std::array<int32_t, 3>{40, 128, 128});
    CHECK(cfg.num_classes == 5);
    CHECK(cfg.thing_classes == std::vector<int32_t>{1, 2});
    CHECK(cfg.score_thresh == 0.25f);
    CHECK(cfg.tta.yaw_rad.size() == 2);
    CHECK(cfg.tta.yaw_rad[0] == doctest::Approx(kPi / 2));
    CHECK(cfg.tta.scales.empty());
    CHECK(cfg.seed == 42);
    std::remove(path.c_str());
}

TEST_CASE("weight container round trip is lossless and ordered") {
    WeightStore store;
    Rng rng(1);
    std::vector<float> a(12), b(3), c(40);
    for (auto& v : a) v = rng.uniformf(-1, 1);
    for (auto& v : b) v = rng.uniformf(-1, 1);
    for (auto& v : c) v = rng.uniformf(-1, 1);
    store.add("alpha.w", {3, 4}, a);
    store.add("beta.b", {3}, b);
    store.add("gamma.w", {2, 4, 5}, c);

    const std::string path = temp_path("mvx_weights.lmnw");
    save_weights(store, path);
    WeightStore back = load_weights(path);
    REQUIRE(back.tensors.size() == 3);
    CHECK(back.tensors[0].name == "alpha.w");
    CHECK(back.tensors[1].name == "beta.b");
    CHECK(back.tensors[2].name == "gamma.w");
    CHECK(back.tensors[0].data == a);
    CHECK(back.tensors[2].dims == std::vector<uint32_t>{2, 4, 5});

    SUBCASE("truncated file reports a structured error") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), std::streamsize(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_weights(path), ParseError);
    }
    std::remove(path.c_str());
}

TEST_CASE("duplicate tensor names are rejected") {
    WeightStore store;
    store.add("x", {1}, {1.f});
    CHECK_THROWS_AS(store.add("x", {1}, {2.f}), DataError);
}

TEST_CASE("init_weights is seed-deterministic") {
    PipelineConfig cfg = tiny_config();
    WeightStore a = init_weights(cfg, 5);
    WeightStore b = init_weights(cfg, 5);
    WeightStore c = init_weights(cfg, 6);
    REQUIRE(a.tensors.size() == b.tensors.size());
    bool all_equal = true, any_diff = false;
    for (size_t i = 0; i < a.tensors.size(); ++i) {
        all_equal = all_equal && a.tensors[i].data == b.tensors[i].data;
        any_diff = any_diff || a.tensors[i].data != c.tensors[i].data;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("init_weights tensor set matches a hand enumeration") {
    PipelineConfig cfg = tiny_config();
    cfg.backbone.enc_depths = {1, 1, 1, 1};
    cfg.vfe_widths = {8};
    WeightStore store = init_weights(cfg, 0);

    // layer-walk oracle: every tensor this architecture must have
    std::set<std::string> expect;
    auto conv = [&](const std::string& base) {
        expect.insert(base + ".w");
        expect.insert(base + ".b");
    };
    auto norm = [&](const std::string& base) {
        for (const char* f : {".scale", ".shift", ".mean", ".var"}) expect.insert(base + f);
    };
    auto res = [&](const std::string& base) {
        conv(base + ".conv1");
        norm(base + ".norm1");
        conv(base + ".conv2");
        norm(base + ".norm2");
    };
    conv("vfe.mlp0");
    for (int s = 1; s <= 4; ++s) {
        conv("enc.s" + std::to_string(s) + ".lead.conv");
        norm("enc.s" + std::to_string(s) + ".lead.norm");
        res("enc.s" + std::to_string(s) + ".res0");
    }
    conv("gcp.stem.conv");
    norm("gcp.stem.norm");
    for (int i = 0; i < 2; ++i) {
        conv("gcp.l1.c" + std::to_string(i) + ".conv");
        norm("gcp.l1.c" + std::to_string(i) + ".norm");
        conv("gcp.l2.c" + std::to_string(i) + ".conv");
        norm("gcp.l2.c" + std::to_string(i) + ".norm");
    }
    conv("gcp.out.conv");
    conv("dec.adapter.conv");
    norm("dec.adapter.norm");
    for (int s = 1; s <= 4; ++s) {
        res("dec.s" + std::to_string(s) + ".res");
        conv("dec.s" + std::to_string(s) + ".up.conv");
        norm("dec.s" + std::to_string(s) + ".up.norm");
    }
    conv("head.seg");
    conv("head.bev.c0.conv");
    norm("head.bev.c0.norm");
    conv("head.bev.c1.conv");
    norm("head.bev.c1.norm");
    conv("head.bev.out");
    for (const char* br : {"hm", "reg", "iou"}) {
        conv(std::string("head.det.") + br + ".c0.conv");
        norm(std::string("head.det.") + br + ".c0.norm");
        conv(std::string("head.det.") + br + ".out");
    }
    conv("s2.point.mlp0");
    conv("s2.point.mlp1");
    expect.insert("s2.attn.w");
    conv("s2.box.mlp0");
    conv("s2.box.mlp1");
    conv("s2.box.cls");
    conv("s2.mask.mlp0");
    conv("s2.mask.out");

    std::set<std::string> got;
    for (const auto& t : store.tensors) got.insert(t.name);
    CHECK(got == expect);
}

TEST_CASE("every initialized tensor is consumed by the pipeline") {
    PipelineConfig cfg = tiny_config();
    WeightStore store = init_weights(cfg, 2);
    store.reset_access();
    PipelineWeights pw = load_pipeline_weights(store, cfg);
    CHECK(store.unused_names().empty());

    Scene scene = tiny_scene();
    PipelineFlags flags;
    flags.stage2 = true;
    flags.panoptic = true;
    PipelineResult res = run_pipeline(scene.cloud, cfg, pw, flags);
    CHECK(res.labels.size() == scene.cloud.size());
}

TEST_CASE("scene generation") {
    SUBCASE("zero objects leave only stuff labels") {
        SceneSpec spec;
        spec.vehicles = spec.pedestrians = 0;
        spec.ground_points = 500;
        spec.points_per_object = 50;
        Scene s = generate_scene(spec);
        CHECK(s.gt_boxes.empty());
        for (int32_t l : s.cloud.labels) {
            CHECK(l != kVehicleClass);
            CHECK(l != kPedestrianClass);
        }
    }
    SUBCASE("two vehicles give two GT boxes with the requested points") {
        SceneSpec spec;
        spec.vehicles = 2;
        spec.pedestrians = 0;
        spec.poles = 0;
        spec.walls = 0;
        spec.ground_points = 100;
        spec.points_per_object = 120;
        Scene s = generate_scene(spec);
        REQUIRE(s.gt_boxes.size() == 2);
        int64_t vehicle_points = 0;
        for (int32_t l : s.cloud.labels) vehicle_points += l == kVehicleClass;
        CHECK(vehicle_points == 240);
    }
    SUBCASE("every box point lies inside its GT box") {
        Scene s = tiny_scene(21);
        for (size_t i = 0; i < s.cloud.size(); ++i) {
            const int32_t l = s.cloud.labels[i];
            if (l != kVehicleClass && l != kPedestrianClass) continue;
            bool inside = false;
            for (const Box& b : s.gt_boxes)
                inside = inside || point_in_box(s.cloud.points[i].x, s.cloud.points[i].y,
                                                s.cloud.points[i].z, b, 1e-6f);
            CHECK(inside);
        }
    }
    SUBCASE("same seed reproduces the scene bit-exactly") {
        Scene a = tiny_scene(33), b = tiny_scene(33);
        REQUIRE(a.cloud.size() == b.cloud.size());
        for (size_t i = 0; i < a.cloud.size(); ++i) {
            CHECK(a.cloud.points[i].x == b.cloud.points[i].x);
            CHECK(a.cloud.points[i].z == b.cloud.points[i].z);
        }
    }
}

TEST_CASE("audit_shapes reproduces the design arithmetic") {
    SUBCASE("full scale") {
        const std::string path = write_temp("mvx_cfg_full.json", "{}\n");
        ShapeAudit a = audit_shapes(parse_config(path));
        CHECK(a.stage_shapes[0] == std::array<int32_t, 3>{40, 1504, 1504});
        CHECK(a.stage_shapes[3] == std::array<int32_t, 3>{5, 188, 188});
        CHECK(a.bev_in_channels == 1280);
        CHECK(a.gcp_concat_channels == 384);
        CHECK(a.bev_h == 188);
        CHECK(a.stage_widths == std::array<int32_t, 4>{32, 64, 128, 256});
        CHECK(a.dec_widths == std::array<int32_t, 4>{128, 64, 32, 32});
        std::remove(path.c_str());
    }
    SUBCASE("desk scale keeps the structure") {
        ShapeAudit a = audit_shapes(PipelineConfig::desk());
        CHECK(a.stage_shapes[0] == std::array<int32_t, 3>{40, 128, 128});
        CHECK(a.stage_shapes[3] == std::array<int32_t, 3>{5, 16, 16});
        CHECK(a.bev_in_channels == 1280);
        CHECK(a.gcp_concat_channels == 384);
    }
}

TEST_CASE("pipeline behavior on a tiny scene") {
    PipelineConfig cfg = tiny_config();
    WeightStore store = init_weights(cfg, 9);
    PipelineWeights pw = load_pipeline_weights(store, cfg);
    Scene scene = tiny_scene(44);

    SUBCASE("identity-only TTA matches the plain pass exactly") {
        cfg.tta = TtaConfig::none();
        PipelineFlags off, on;
        on.tta = true;
        PipelineResult plain = run_pipeline(scene.cloud, cfg, pw, off);
        PipelineResult tta = run_pipeline(scene.cloud, cfg, pw, on);
        CHECK(tta.tta_variants == 1);
        CHECK(plain.labels == tta.labels);
    }
    SUBCASE("flip TTA aggregates normalized rows") {
        cfg.tta = TtaConfig::none();
        cfg.tta.flip_xz = cfg.tta.flip_yz = true;
        PipelineFlags flags;
        flags.tta = true;
        PipelineResult res = run_pipeline(scene.cloud, cfg, pw, flags);
        CHECK(res.tta_variants == 3);
        for (int32_t r = 0; r < res.point_probs.rows; ++r) {
            double sum = 0;
            for (int32_t c = 0; c < res.point_probs.cols; ++c) sum += res.point_probs.at(r, c);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
    SUBCASE("empty cloud produces empty outputs") {
        PointCloud empty;
        PipelineFlags flags;
        flags.stage2 = true;
        flags.panoptic = true;
        PipelineResult res = run_pipeline(empty, cfg, pw, flags);
        CHECK(res.labels.empty());
        CHECK(res.boxes.empty());
        CHECK(res.panoptic.empty());
    }
    SUBCASE("all points out of range are flagged, not fatal") {
        PointCloud far;
        far.points = {Point{500.f, 500.f, 500.f}};
        far.resize_mask_current();
        PipelineResult res = run_pipeline(far, cfg, pw, {});
        REQUIRE(res.labels.size() == 1);
        CHECK(res.labels[0] == kIgnoreLabel);
        CHECK(res.stage1.vm.dropped == 1);
    }
    SUBCASE("repeat runs are bit-identical in-process") {
        PipelineFlags flags;
        flags.stage2 = true;
        PipelineResult a = run_pipeline(scene.cloud, cfg, pw, flags);
        PipelineResult b = run_pipeline(scene.cloud, cfg, pw, flags);
        CHECK(a.labels == b.labels);
        CHECK(a.point_probs.v == b.point_probs.v);
    }
}

TEST_CASE("ply export colors every point") {
    Scene scene = tiny_scene(55);
    const std::string path = temp_path("mvx_scene.ply");
    write_colored_ply(scene.cloud, scene.cloud.labels, path);
    std::ifstream in(path);
    std::string line;
    int64_t vertices = -1, rows = 0;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            if (line.rfind("element vertex ", 0) == 0) vertices = std::stoll(line.substr(15));
            if (line == "end_header") header = false;
            continue;
        }
        ++rows;
    }
    CHECK(vertices == int64_t(scene.cloud.size()));
    CHECK(rows == int64_t(scene.cloud.size()));
    std::remove(path.c_str());
}

TEST_CASE("conv time grows with the active-voxel count") {
    // coarse ramp: ~1k vs ~60k actives differ enough that ordering is stable
    Rng rng(61);
    auto conv_ms = [&](int32_t count) {
        std::vector<Coord> coords;
        for (int32_t i = 0; i < count; ++i)
            coords.push_back(Coord{int32_t(rng.below(40)), int32_t(rng.below(128)),
                                   int32_t(rng.below(128))});
        std::sort(coords.begin(), coords.end());
        coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        SparseTensor t;
        t.coords = std::move(coords);
        t.spatial_shape = {40, 128, 128};
        t.features = Mat(int32_t(t.coords.size()), 8, 0.5f);
        ConvWeights w = ConvWeights::zeros(3, 8, 8);
        for (auto& v : w.w) v = 0.01f;
        Rulebook rb = build_submanifold_rulebook(t, 3);
        const auto t0 = std::chrono::steady_clock::now();
        (void)submanifold_conv3d(t, rb, w);
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    };
    CHECK(conv_ms(64000) > conv_ms(1000));
}

TEST_CASE("cli exit codes") {
    const char* cli = std::getenv("MULTIVOX_CLI");
    REQUIRE_MESSAGE(cli != nullptr, "MULTIVOX_CLI not set by ctest");
    auto run = [&](const std::string& args) {
        const std::string cmd = std::string(cli) + " " + args + " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run("--help") == 0);
    CHECK(run("no-such-command") == 1);
    CHECK(run("infer") == 1);  // missing required arguments
    CHECK(run("eval --pred /nonexistent.u8 --gt /nonexistent.u8") == 2);
    const std::string bad_cfg = write_temp("mvx_cfg_broken.json", R"({"bogus_key": 1})");
    CHECK(run("init-weights " + bad_cfg + " --out /tmp/mvx_w_never.lmnw") == 2);
    std::remove(bad_cfg.c_str());
}
