// multivox command-line front end: scene generation, weight initialization,
// inference, evaluation and benchmarking over the sparse voxel pipeline.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "multivox/config.hpp"
#include "multivox/dense_oracle.hpp"
#include "multivox/metrics.hpp"
#include "multivox/pipeline.hpp"
#include "multivox/ply.hpp"
#include "multivox/point_cloud_io.hpp"
#include "multivox/scene.hpp"
#include "multivox/weights.hpp"

namespace {

using namespace mvx;

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

PointCloud load_input_cloud(const std::string& path, bool csv, bool csv_labels) {
    return load_point_cloud(path, csv ? CloudFormat::csv : CloudFormat::binary, csv_labels);
}

struct InferArgs {
    std::string config, weights, input;
    std::string labels_out = "pred_labels.u8";
    std::string boxes_out, panoptic_out, ply_out, probs_out;
    bool tta = false, stage2 = false, panoptic = false;
    bool csv = false, csv_labels = false;
};

int cmd_infer(const InferArgs& a) {
    const PipelineConfig cfg = parse_config(a.config);
    const WeightStore store = load_weights(a.weights);
    const PipelineWeights pw = load_pipeline_weights(store, cfg);
    const PointCloud pc = load_input_cloud(a.input, a.csv, a.csv_labels);

    PipelineFlags flags;
    flags.tta = a.tta;
    flags.stage2 = a.stage2;
    flags.panoptic = a.panoptic || !a.panoptic_out.empty();

    const double t0 = now_ms();
    const PipelineResult res = run_pipeline(pc, cfg, pw, flags);
    const double elapsed = now_ms() - t0;

    save_labels_u8(res.labels, a.labels_out);
    if (!a.boxes_out.empty()) write_boxes_csv(res.boxes, a.boxes_out);
    if (!a.panoptic_out.empty()) write_panoptic_pairs(res.panoptic, a.panoptic_out);
    if (!a.ply_out.empty()) write_colored_ply(pc, res.labels, a.ply_out);
    if (!a.probs_out.empty()) {
        WeightStore dump;
        dump.add("seg_probs", {uint32_t(res.point_probs.rows), uint32_t(res.point_probs.cols)},
                 res.point_probs.v);
        save_weights(dump, a.probs_out);
    }

    std::printf("points %zu\n", pc.size());
    std::printf("voxels %d (dropped %lld)\n", res.stage1.vm.num_voxels(),
                (long long)res.stage1.vm.dropped);
    std::printf("boxes %zu\n", res.boxes.size());
    std::printf("tta_variants %d\n", res.tta_variants);
    for (const auto& t : res.stage1.timings) std::printf("  %-14s %9.2f ms\n", t.name.c_str(), t.ms);
    std::printf("total %.2f ms\n", elapsed);
    return 0;
}

struct EvalArgs {
    std::string pred, gt;
    std::string pred_pan, gt_pan;
    std::string probs;
    int32_t classes = 22;
};

int cmd_eval(const EvalArgs& a) {
    if (!a.pred.empty() || !a.gt.empty()) {
        if (a.pred.empty() || a.gt.empty())
            throw DataError("eval: --pred and --gt must be given together");
        const auto pred = load_labels_u8(a.pred);
        const auto gt = load_labels_u8(a.gt);
        if (pred.size() != gt.size())
            throw DataError("eval: prediction and ground truth sizes differ (" +
                            std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + ")");
        const ConfusionMatrix cm = confusion(pred, gt, a.classes);
        std::fputs(iou_report(cm).c_str(), stdout);

        if (!a.probs.empty()) {
            const WeightStore dump = load_weights(a.probs);
            const WeightTensor& t = dump.get("seg_probs");
            if (t.dims.size() != 2 || t.dims[0] != pred.size())
                throw DataError("eval: probability dump does not match the label count");
            Mat probs(int32_t(t.dims[0]), int32_t(t.dims[1]));
            probs.v = t.data;
            Mat log_probs = probs;
            for (auto& v : log_probs.v) v = float(safe_log(v));
            const double ce = cross_entropy(log_probs, gt).value;
            const double lovasz = lovasz_softmax(probs, gt).value;
            std::printf("loss ce      %.6f\n", ce);
            std::printf("loss lovasz  %.6f\n", lovasz);
            std::printf("loss seg     %.6f\n", ce + lovasz);
        }
    }
    if (!a.pred_pan.empty() || !a.gt_pan.empty()) {
        if (a.pred_pan.empty() || a.gt_pan.empty())
            throw DataError("eval: --pred-pan and --gt-pan must be given together");
        const auto pred = read_panoptic_pairs(a.pred_pan);
        const auto gt = read_panoptic_pairs(a.gt_pan);
        std::fputs(panoptic_report(panoptic_quality(pred, gt, a.classes)).c_str(), stdout);
    }
    return 0;
}

struct SceneArgs {
    std::string out = "scene.lpcd";
    std::string boxes_out, labels_out;
    SceneSpec spec;
};

int cmd_gen_scene(const SceneArgs& a) {
    const Scene scene = generate_scene(a.spec);
    save_point_cloud_binary(scene.cloud, a.out);
    if (!a.boxes_out.empty()) write_boxes_csv(scene.gt_boxes, a.boxes_out);
    if (!a.labels_out.empty()) save_labels_u8(scene.cloud.labels, a.labels_out);
    std::printf("points %zu\n", scene.cloud.size());
    std::printf("boxes %zu\n", scene.gt_boxes.size());
    return 0;
}

struct InitArgs {
    std::string config;
    std::string out = "weights.lmnw";
    int64_t seed = -1;  // -1: take the config's seed
};

int cmd_init_weights(const InitArgs& a) {
    const PipelineConfig cfg = parse_config(a.config);
    const uint64_t seed = a.seed >= 0 ? uint64_t(a.seed) : cfg.seed;
    const WeightStore store = init_weights(cfg, seed);
    save_weights(store, a.out);
    size_t params = 0;
    for (const auto& t : store.tensors) params += t.numel();
    std::printf("tensors %zu\n", store.tensors.size());
    std::printf("parameters %zu\n", params);
    std::printf("seed %llu\n", (unsigned long long)seed);
    return 0;
}

struct BenchArgs {
    std::string config;
    std::vector<int64_t> sizes{2000, 8000, 13107};
    int32_t channels = 16;
    bool dense_compare = false;
    uint64_t seed = 7;
};

SparseTensor random_occupancy(Rng& rng, std::array<int32_t, 3> shape, int32_t channels,
                              int64_t count) {
    std::vector<Coord> coords;
    coords.reserve(size_t(count));
    for (int64_t i = 0; i < count; ++i)
        coords.push_back(Coord{int32_t(rng.below(shape[0])), int32_t(rng.below(shape[1])),
                               int32_t(rng.below(shape[2]))});
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    SparseTensor t;
    t.coords = std::move(coords);
    t.spatial_shape = shape;
    t.stride = 1;
    t.features = Mat(int32_t(t.coords.size()), channels);
    for (auto& v : t.features.v) v = rng.uniformf(-1.f, 1.f);
    return t;
}

int cmd_bench(const BenchArgs& a) {
    const PipelineConfig cfg = parse_config(a.config);
    const auto shape = cfg.vox.grid_shape();
    Rng rng(a.seed);
    const int32_t c = a.channels;

    ConvWeights subm_w = ConvWeights::zeros(3, c, c);
    for (auto& v : subm_w.w) v = rng.uniformf(-0.1f, 0.1f);
    ConvWeights strided_w = subm_w;
    NormParams norm = NormParams::identity(c);
    ResblockWeights res{subm_w, subm_w, norm, norm};

    std::printf("bench grid %dx%dx%d channels %d\n", shape[0], shape[1], shape[2], c);
    for (int64_t size : a.sizes) {
        SparseTensor t = random_occupancy(rng, shape, c, size);
        const double m = double(t.num_active());
        std::printf("size %lld (%.2f%% occupancy)\n", (long long)t.num_active(),
                    100.0 * m / (double(shape[0]) * shape[1] * shape[2]));

        auto timed = [&](const char* name, auto&& fn) {
            const double t0 = now_ms();
            fn();
            const double ms = now_ms() - t0;
            std::printf("  %-18s %10.2f ms %12.0f voxels/s\n", name, ms,
                        ms > 0 ? m / (ms / 1000.0) : 0.0);
            return ms;
        };

        Rulebook rb;
        timed("rulebook_subm", [&] { rb = build_submanifold_rulebook(t, 3); });
        const double subm_ms = timed("submanifold_conv",
                                     [&] { (void)submanifold_conv3d(t, rb, subm_w); });
        Rulebook srb;
        timed("rulebook_strided", [&] { srb = build_strided_rulebook(t); });
        SparseTensor low;
        timed("strided_conv", [&] { low = sparse_conv3d(t, srb, strided_w); });
        KeyIndexCache cache;
        cache.record(t);
        Rulebook irb;
        timed("rulebook_inverse", [&] { irb = build_inverse_rulebook(low, cache.at(1)); });
        timed("inverse_conv", [&] { (void)inverse_sparse_conv3d(low, irb, strided_w); });
        timed("norm_relu", [&] { (void)norm_relu(t, norm); });
        timed("resblock", [&] { (void)resblock(t, rb, res); });

        if (a.dense_compare) {
            DenseVolume dense = densify(t);
            const double dense_ms =
                timed("dense_oracle", [&] { (void)dense_conv3d_oracle(dense, subm_w, 1); });
            std::printf("  %-18s %10.1fx\n", "sparse_speedup",
                        subm_ms > 0 ? dense_ms / subm_ms : 0.0);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multivox: sparse voxel multi-task LiDAR perception pipeline"};
    app.require_subcommand(1);

    InferArgs infer;
    CLI::App* infer_cmd = app.add_subcommand("infer", "run the forward pipeline on a point cloud");
    infer_cmd->add_option("config", infer.config, "pipeline config (json)")->required();
    infer_cmd->add_option("weights", infer.weights, "weight container (lmnw)")->required();
    infer_cmd->add_option("input", infer.input, "input point cloud (lpcd or csv)")->required();
    infer_cmd->add_option("--labels-out", infer.labels_out, "per-point u8 label file");
    infer_cmd->add_option("--boxes-out", infer.boxes_out, "decoded boxes csv");
    infer_cmd->add_option("--panoptic", infer.panoptic_out, "per-point 'semantic instance' file");
    infer_cmd->add_option("--ply-out", infer.ply_out, "colored point cloud (ascii ply)");
    infer_cmd->add_option("--probs-out", infer.probs_out, "per-point probability dump");
    infer_cmd->add_flag("--tta", infer.tta, "average predictions over the tta transform set");
    infer_cmd->add_flag("--stage2", infer.stage2, "run the point-based refinement stage");
    infer_cmd->add_flag("--csv", infer.csv, "input is csv");
    infer_cmd->add_flag("--csv-labels", infer.csv_labels, "csv rows end with a label column");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
    eval_cmd->add_option("--pred", eval.pred, "predicted u8 labels");
    eval_cmd->add_option("--gt", eval.gt, "ground-truth u8 labels");
    eval_cmd->add_option("--classes", eval.classes, "number of classes K");
    eval_cmd->add_option("--pred-pan", eval.pred_pan, "predicted panoptic pairs");
    eval_cmd->add_option("--gt-pan", eval.gt_pan, "ground-truth panoptic pairs");
    eval_cmd->add_option("--probs", eval.probs, "probability dump from infer --probs-out");

    SceneArgs scene;
    CLI::App* scene_cmd = app.add_subcommand("gen-scene", "generate a synthetic labeled scene");
    scene_cmd->add_option("--out", scene.out, "output point cloud (lpcd with labels)");
    scene_cmd->add_option("--boxes-out", scene.boxes_out, "ground-truth boxes csv");
    scene_cmd->add_option("--labels-out", scene.labels_out, "ground-truth u8 labels");
    scene_cmd->add_option("--vehicles", scene.spec.vehicles, "vehicle count");
    scene_cmd->add_option("--pedestrians", scene.spec.pedestrians, "pedestrian count");
    scene_cmd->add_option("--poles", scene.spec.poles, "pole count");
    scene_cmd->add_option("--walls", scene.spec.walls, "wall count");
    scene_cmd->add_option("--points-per-object", scene.spec.points_per_object, "surface samples");
    scene_cmd->add_option("--ground-points", scene.spec.ground_points, "ground plane samples");
    scene_cmd->add_option("--noise", scene.spec.noise_sigma, "surface noise sigma (m)");
    scene_cmd->add_option("--extent", scene.spec.extent, "ground half extent (m)");
    scene_cmd->add_option("--seed", scene.spec.seed, "rng seed");

    InitArgs init;
    CLI::App* init_cmd = app.add_subcommand("init-weights", "write a seeded weight container");
    init_cmd->add_option("config", init.config, "pipeline config (json)")->required();
    init_cmd->add_option("--out", init.out, "output weight container");
    init_cmd->add_option("--seed", init.seed, "override the config seed");

    BenchArgs bench;
    CLI::App* bench_cmd = app.add_subcommand("bench", "time the sparse kernels");
    bench_cmd->add_option("config", bench.config, "pipeline config (json)")->required();
    bench_cmd->add_option("--sizes", bench.sizes, "active voxel counts to test");
    bench_cmd->add_option("--channels", bench.channels, "channel width");
    bench_cmd->add_flag("--dense-compare", bench.dense_compare,
                        "also time the dense reference convolution");
    bench_cmd->add_option("--seed", bench.seed, "rng seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (infer_cmd->parsed()) return cmd_infer(infer);
        if (eval_cmd->parsed()) return cmd_eval(eval);
        if (scene_cmd->parsed()) return cmd_gen_scene(scene);
        if (init_cmd->parsed()) return cmd_init_weights(init);
        if (bench_cmd->parsed()) return cmd_bench(bench);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
