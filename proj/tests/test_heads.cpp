#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "multivox/heads.hpp"

using namespace mvx;

namespace {

BevGeometry unit_geo(int32_t h, int32_t w) {
    BevGeometry g;
    g.cell_x = g.cell_y = 1.0;
    g.min_x = g.min_y = 0.0;
    g.max_x = double(w);
    g.max_y = double(h);
    g.min_z = -2.0;
    g.max_z = 4.0;
    g.h = h;
    g.w = w;
    return g;
}

void splat_gaussian(DenseBEV& hm, int32_t c, int32_t cy, int32_t cx, float amp, double sigma) {
    for (int32_t y = 0; y < hm.h; ++y)
        for (int32_t x = 0; x < hm.w; ++x) {
            const double d2 = double(y - cy) * (y - cy) + double(x - cx) * (x - cx);
            hm.at(c, y, x) =
                std::max(hm.at(c, y, x), float(amp * std::exp(-d2 / (2 * sigma * sigma))));
        }
}

DetGrid peaks_grid(int32_t h, int32_t w) {
    DetGrid g;
    g.heatmap = DenseBEV(2, h, w);
    g.reg = DenseBEV(kRegChannels, h, w);
    g.iou = DenseBEV(1, h, w, 0.64f);
    splat_gaussian(g.heatmap, 0, 5, 5, 0.9f, 2.0);
    splat_gaussian(g.heatmap, 1, 14, 13, 0.8f, 2.0);
    for (int32_t y = 0; y < h; ++y)
        for (int32_t x = 0; x < w; ++x) {
            g.reg.at(0, y, x) = 0.25f;  // dx
            g.reg.at(1, y, x) = 0.75f;  // dy
            g.reg.at(2, y, x) = 1.1f;   // z
            g.reg.at(3, y, x) = std::log(1.9f);
            g.reg.at(4, y, x) = std::log(4.2f);
            g.reg.at(5, y, x) = std::log(1.6f);
            g.reg.at(6, y, x) = std::sin(0.6f);
            g.reg.at(7, y, x) = std::cos(0.6f);
        }
    return g;
}

}  // namespace

TEST_CASE("seg head") {
    SparseTensor t;
    t.coords = {{0, 0, 0}, {0, 0, 1}};
    t.spatial_shape = {2, 2, 2};
    t.features = Mat(2, 4);
    Rng rng(1);
    for (auto& v : t.features.v) v = rng.uniformf(-1, 1);

    SUBCASE("zero weights give zero logits") {
        Mat logits = seg_head(t, Mat(4, 3, 0.f), std::vector<float>(3, 0.f));
        for (float v : logits.v) CHECK(v == 0.f);
    }
    SUBCASE("one-hot weights copy the chosen channels") {
        Mat w(4, 2, 0.f);
        w.at(2, 0) = 1.f;  // logit 0 <- feature 2
        w.at(1, 1) = 1.f;  // logit 1 <- feature 1
        Mat logits = seg_head(t, w, {});
        for (int32_t r = 0; r < 2; ++r) {
            CHECK(logits.at(r, 0) == t.features.at(r, 2));
            CHECK(logits.at(r, 1) == t.features.at(r, 1));
        }
    }
    SUBCASE("argmax agrees with a scalar scan") {
        Mat w(4, 5);
        for (auto& v : w.v) v = rng.uniformf(-1, 1);
        Mat logits = seg_head(t, w, std::vector<float>(5, 0.1f));
        for (int32_t r = 0; r < logits.rows; ++r) {
            int32_t best = 0;
            for (int32_t c = 1; c < 5; ++c)
                if (logits.at(r, c) > logits.at(r, best)) best = c;
            CHECK(argmax_row(logits, r) == best);
        }
    }
}

TEST_CASE("bev seg head") {
    Rng rng(2);
    BevSegWeights w;
    w.c0 = Conv2dWeights::zeros(3, 6, 4);
    w.n0 = NormParams::identity(4);
    w.c1 = Conv2dWeights::zeros(3, 4, 4);
    w.n1 = NormParams::identity(4);
    w.out = Conv2dWeights::zeros(1, 4, 3);

    SUBCASE("zero everything gives zero logits with shape K x H x W") {
        DenseBEV bev(6, 8, 8);
        DenseBEV logits = bev_seg_head(bev, w);
        CHECK(logits.channels == 3);
        CHECK(logits.h == 8);
        CHECK(logits.w == 8);
        for (float v : logits.v) CHECK(v == 0.f);
    }
    SUBCASE("random weights stay finite") {
        for (auto& v : w.c0.w) v = rng.uniformf(-0.3f, 0.3f);
        for (auto& v : w.c1.w) v = rng.uniformf(-0.3f, 0.3f);
        for (auto& v : w.out.w) v = rng.uniformf(-0.3f, 0.3f);
        DenseBEV bev(6, 8, 8);
        for (auto& v : bev.v) v = rng.uniformf(-1, 1);
        DenseBEV logits = bev_seg_head(bev, w);
        for (float v : logits.v) CHECK(std::isfinite(v));
    }
}

TEST_CASE("bev majority targets match a rasterization oracle") {
    Rng rng(3);
    BevGeometry geo = unit_geo(6, 6);
    PointCloud pc;
    for (int i = 0; i < 300; ++i) {
        Point p;
        p.x = rng.uniformf(0.f, 6.f);
        p.y = rng.uniformf(0.f, 6.f);
        p.z = 0.f;
        pc.points.push_back(p);
        pc.labels.push_back(1 + int32_t(rng.below(3)));
    }
    pc.resize_mask_current();
    const auto targets = bev_majority_targets(pc, geo);
    REQUIRE(int32_t(targets.size()) == 36);

    // independent per-cell recount
    for (int32_t cy = 0; cy < 6; ++cy)
        for (int32_t cx = 0; cx < 6; ++cx) {
            std::array<int32_t, 4> counts{0, 0, 0, 0};
            for (size_t i = 0; i < pc.size(); ++i) {
                if (int32_t(pc.points[i].x) == cx && int32_t(pc.points[i].y) == cy)
                    ++counts[pc.labels[i]];
            }
            int32_t best = kIgnoreLabel, best_count = 0;
            for (int32_t l = 1; l <= 3; ++l)
                if (counts[l] > best_count) {
                    best_count = counts[l];
                    best = l;
                }
            CHECK(targets[cy * 6 + cx] == best);
        }
}

TEST_CASE("det head activations") {
    DetHeadWeights w;
    auto make_branch = [](int32_t cout, float out_bias) {
        DetBranchWeights b;
        b.c0 = Conv2dWeights::zeros(3, 6, 4);
        b.n0 = NormParams::identity(4);
        b.out = Conv2dWeights::zeros(1, 4, cout);
        for (auto& v : b.out.bias) v = out_bias;
        return b;
    };
    SUBCASE("zero pre-sigmoid gives a 0.5 heatmap") {
        w.hm = make_branch(2, 0.f);
        w.reg = make_branch(kRegChannels, 0.f);
        w.iou = make_branch(1, 0.f);
        DenseBEV bev(6, 4, 4);
        DetGrid g = det_head(bev, w);
        for (float v : g.heatmap.v) CHECK(v == 0.5f);
        for (float v : g.iou.v) CHECK(v == 0.5f);
        for (float v : g.reg.v) CHECK(v == 0.f);
        CHECK(g.heatmap.channels == 2);
        CHECK(g.reg.channels == kRegChannels);
        CHECK(g.iou.channels == 1);
    }
    SUBCASE("large negative bias saturates near zero") {
        w.hm = make_branch(2, -30.f);
        w.reg = make_branch(kRegChannels, 0.f);
        w.iou = make_branch(1, 0.f);
        DenseBEV bev(6, 4, 4);
        DetGrid g = det_head(bev, w);
        for (float v : g.heatmap.v) CHECK(v < 1e-9f);
    }
}

TEST_CASE("decode_boxes on two synthetic gaussian peaks") {
    DetGrid g = peaks_grid(20, 20);
    BevGeometry geo = unit_geo(20, 20);
    auto boxes = decode_boxes(g, geo, {7, 9}, 10, 0.1f, 0.5f);
    REQUIRE(boxes.size() == 2);
    // sorted by rectified score: peak A (0.9) first
    CHECK(boxes[0].cls == 7);
    CHECK(boxes[1].cls == 9);
    CHECK(boxes[0].score == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(boxes[1].score == doctest::Approx(0.8).epsilon(1e-6));
    // center = (cell + offset) * cell_size + range_min
    CHECK(boxes[0].x == doctest::Approx(5.25).epsilon(1e-5));
    CHECK(boxes[0].y == doctest::Approx(5.75).epsilon(1e-5));
    CHECK(boxes[1].x == doctest::Approx(13.25).epsilon(1e-5));
    CHECK(boxes[1].y == doctest::Approx(14.75).epsilon(1e-5));
    CHECK(boxes[0].z == doctest::Approx(1.1).epsilon(1e-5));
    CHECK(boxes[0].w == doctest::Approx(1.9).epsilon(1e-4));
    CHECK(boxes[0].l == doctest::Approx(4.2).epsilon(1e-4));
    CHECK(boxes[0].yaw == doctest::Approx(0.6).epsilon(1e-5));
    // rectified = sqrt(raw * iou) at beta = 0.5
    CHECK(boxes[0].rect_score == doctest::Approx(std::sqrt(0.9 * 0.64)).epsilon(1e-5));
}

TEST_CASE("decode_boxes edge behavior") {
    BevGeometry geo = unit_geo(8, 8);
    SUBCASE("uniform heatmap below threshold decodes nothing") {
        DetGrid g;
        g.heatmap = DenseBEV(1, 8, 8, 0.05f);
        g.reg = DenseBEV(kRegChannels, 8, 8);
        g.iou = DenseBEV(1, 8, 8, 0.5f);
        CHECK(decode_boxes(g, geo, {1}).empty());
    }
    SUBCASE("beta zero leaves scores unchanged") {
        DetGrid g;
        g.heatmap = DenseBEV(1, 8, 8);
        g.heatmap.at(0, 3, 4) = 0.7f;
        g.reg = DenseBEV(kRegChannels, 8, 8);
        g.iou = DenseBEV(1, 8, 8, 0.2f);
        auto boxes = decode_boxes(g, geo, {1}, 10, 0.1f, 0.f);
        REQUIRE(boxes.size() == 1);
        CHECK(boxes[0].rect_score == doctest::Approx(0.7).epsilon(1e-6));
    }
    SUBCASE("top_k caps the output") {
        DetGrid g;
        g.heatmap = DenseBEV(1, 8, 8);
        g.heatmap.at(0, 1, 1) = 0.9f;
        g.heatmap.at(0, 4, 4) = 0.8f;
        g.heatmap.at(0, 6, 2) = 0.7f;
        g.reg = DenseBEV(kRegChannels, 8, 8);
        g.iou = DenseBEV(1, 8, 8, 0.5f);
        CHECK(decode_boxes(g, geo, {1}, 2).size() == 2);
    }
    SUBCASE("peak selection is idempotent") {
        DetGrid g;
        g.heatmap = DenseBEV(1, 8, 8);
        g.heatmap.at(0, 2, 2) = 0.9f;
        g.heatmap.at(0, 5, 6) = 0.8f;
        g.reg = DenseBEV(kRegChannels, 8, 8);
        g.iou = DenseBEV(1, 8, 8, 0.5f);
        auto first = decode_boxes(g, geo, {1});
        // rebuild an indicator map from the decoded peaks and decode again
        auto cell_of = [&](const Box& b) {
            return std::pair<int32_t, int32_t>{
                int32_t(std::llround((b.y - geo.min_y) / geo.cell_y)),
                int32_t(std::llround((b.x - geo.min_x) / geo.cell_x))};
        };
        DetGrid ind;
        ind.heatmap = DenseBEV(1, 8, 8);
        for (const Box& b : first) {
            const auto [cy, cx] = cell_of(b);
            ind.heatmap.at(0, cy, cx) = 1.f;
        }
        ind.reg = DenseBEV(kRegChannels, 8, 8);
        ind.iou = DenseBEV(1, 8, 8, 0.5f);
        auto second = decode_boxes(ind, geo, {1});
        REQUIRE(second.size() == first.size());
        std::set<std::pair<int32_t, int32_t>> cells_a, cells_b;
        for (const Box& b : first) cells_a.insert(cell_of(b));
        for (const Box& b : second) cells_b.insert(cell_of(b));
        CHECK(cells_a == cells_b);
    }
    SUBCASE("centers are clamped into the configured range") {
        DetGrid g;
        g.heatmap = DenseBEV(1, 8, 8);
        g.heatmap.at(0, 7, 7) = 0.9f;
        g.reg = DenseBEV(kRegChannels, 8, 8);
        g.reg.at(0, 7, 7) = 25.f;   // pushes x far outside
        g.reg.at(2, 7, 7) = 99.f;   // z outside too
        g.iou = DenseBEV(1, 8, 8, 0.5f);
        auto boxes = decode_boxes(g, geo, {1});
        REQUIRE(boxes.size() == 1);
        CHECK(boxes[0].x <= float(geo.max_x));
        CHECK(boxes[0].z <= float(geo.max_z));
    }
    SUBCASE("doubling the cell size doubles decoded centers") {
        DetGrid g;
        g.heatmap = DenseBEV(1, 8, 8);
        g.heatmap.at(0, 3, 2) = 0.9f;
        g.reg = DenseBEV(kRegChannels, 8, 8);
        g.reg.at(0, 3, 2) = 0.5f;
        g.reg.at(1, 3, 2) = 0.5f;
        g.iou = DenseBEV(1, 8, 8, 0.5f);
        BevGeometry doubled = geo;
        doubled.cell_x = doubled.cell_y = 2.0;
        doubled.max_x = doubled.max_y = 32.0;
        auto a = decode_boxes(g, geo, {1});
        auto b = decode_boxes(g, doubled, {1});
        REQUIRE(a.size() == 1);
        REQUIRE(b.size() == 1);
        CHECK(b[0].x == doctest::Approx(2 * a[0].x));
        CHECK(b[0].y == doctest::Approx(2 * a[0].y));
    }
}

TEST_CASE("boxes csv round trip") {
    std::vector<Box> boxes(2);
    boxes[0] = Box{1.5f, -2.25f, 0.8f, 1.9f, 4.2f, 1.6f, 0.7f, 3, 0.9f, 0.85f};
    boxes[1] = Box{-4.f, 0.5f, 1.f, 0.8f, 0.8f, 1.75f, -1.2f, 1, 0.6f, 0.5f};
    const std::string path =
        (std::filesystem::temp_directory_path() / "mvx_boxes.csv").string();
    write_boxes_csv(boxes, path);
    auto back = read_boxes_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].cls == 3);
    CHECK(back[0].x == doctest::Approx(1.5).epsilon(1e-6));
    CHECK(back[1].yaw == doctest::Approx(-1.2).epsilon(1e-6));
    std::remove(path.c_str());
}
