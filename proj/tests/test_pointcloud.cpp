#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "multivox/point_cloud.hpp"
#include "multivox/point_cloud_io.hpp"

using namespace mvx;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

PointCloud three_point_cloud() {
    PointCloud pc;
    pc.points = {Point{1, 2, 3, 0.5f, 0.25f, 0}, Point{-1, 0, 1, 0.1f, 0.9f, 0},
                 Point{4, -2, 0.5f, 0.7f, 0.3f, 0}};
    pc.resize_mask_current();
    return pc;
}

}  // namespace

TEST_CASE("binary point cloud round trip") {
    const std::string path = temp_path("mvx_io_roundtrip.lpcd");
    PointCloud pc = three_point_cloud();
    pc.labels = {3, 1, 2};
    save_point_cloud_binary(pc, path);
    PointCloud back = load_point_cloud_binary(path);
    REQUIRE(back.size() == 3);
    REQUIRE(back.has_labels());
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back.points[i].x == pc.points[i].x);
        CHECK(back.points[i].intensity == pc.points[i].intensity);
        CHECK(back.labels[i] == pc.labels[i]);
        CHECK(back.current_mask[i] == 1);
    }
    std::remove(path.c_str());
}

TEST_CASE("binary file with two records and no labels") {
    const std::string path = temp_path("mvx_io_two.lpcd");
    {
        std::ofstream out(path, std::ios::binary);
        out.write("LPCD", 4);
        const uint32_t version = 1, dim = 6;
        const uint64_t count = 2;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&count), 8);
        out.write(reinterpret_cast<const char*>(&dim), 4);
        const float rec[12] = {1, 2, 3, 0.5f, 0.1f, 0, 4, 5, 6, 0.7f, 0.2f, -0.1f};
        out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    PointCloud pc = load_point_cloud_binary(path);
    CHECK(pc.size() == 2);
    CHECK_FALSE(pc.has_labels());
    CHECK(pc.points[1].timestamp == doctest::Approx(-0.1f));
    CHECK(pc.current_mask[0] == 1);
    CHECK(pc.current_mask[1] == 0);  // negative timestamp marks a past-frame point
    std::remove(path.c_str());
}

TEST_CASE("empty binary body with count zero") {
    const std::string path = temp_path("mvx_io_empty.lpcd");
    {
        std::ofstream out(path, std::ios::binary);
        out.write("LPCD", 4);
        const uint32_t version = 1, dim = 4;
        const uint64_t count = 0;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&count), 8);
        out.write(reinterpret_cast<const char*>(&dim), 4);
    }
    PointCloud pc = load_point_cloud_binary(path);
    CHECK(pc.empty());
    std::remove(path.c_str());
}

TEST_CASE("binary parse errors are structured") {
    const std::string path = temp_path("mvx_io_bad.lpcd");
    SUBCASE("bad magic") {
        std::ofstream(path, std::ios::binary) << "NOPE garbage";
        CHECK_THROWS_AS(load_point_cloud_binary(path), ParseError);
    }
    SUBCASE("feature dim out of range") {
        std::ofstream out(path, std::ios::binary);
        out.write("LPCD", 4);
        const uint32_t version = 1, dim = 2;
        const uint64_t count = 0;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&count), 8);
        out.write(reinterpret_cast<const char*>(&dim), 4);
        out.close();
        CHECK_THROWS_WITH_AS(load_point_cloud_binary(path),
                             doctest::Contains("feature_dim"), ParseError);
    }
    SUBCASE("non finite value names the byte") {
        std::ofstream out(path, std::ios::binary);
        out.write("LPCD", 4);
        const uint32_t version = 1, dim = 3;
        const uint64_t count = 1;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&count), 8);
        out.write(reinterpret_cast<const char*>(&dim), 4);
        const float bad[3] = {0.f, std::numeric_limits<float>::quiet_NaN(), 0.f};
        out.write(reinterpret_cast<const char*>(bad), sizeof(bad));
        out.close();
        CHECK_THROWS_WITH_AS(load_point_cloud_binary(path), doctest::Contains("byte"),
                             ParseError);
    }
    std::remove(path.c_str());
}

TEST_CASE("csv with labels") {
    const std::string path = temp_path("mvx_io.csv");
    std::ofstream(path) << "# comment\n0.0,0.0,0.0,0.5,0.1,0.0,3\n";
    PointCloud pc = load_point_cloud_csv(path, true);
    REQUIRE(pc.size() == 1);
    CHECK(pc.points[0].x == 0.f);
    CHECK(pc.points[0].intensity == 0.5f);
    CHECK(pc.labels[0] == 3);
    std::remove(path.c_str());
}

TEST_CASE("csv parse error names the line") {
    const std::string path = temp_path("mvx_io_bad.csv");
    std::ofstream(path) << "1,2,3\n1,2,zebra\n";
    CHECK_THROWS_WITH_AS(load_point_cloud_csv(path), doctest::Contains(":2"), ParseError);
    std::remove(path.c_str());
}

TEST_CASE("merge_frames transforms past points and masks them") {
    PointCloud cur;
    cur.points = {Point{0, 0, 0}};
    cur.resize_mask_current();
    PointCloud past;
    past.points = {Point{1, 0, 0, 0.5f, 0.25f, -0.1f}};
    past.resize_mask_current();

    PointCloud merged = merge_frames(cur, {{past, Pose::translation(2, 0, 0)}});
    REQUIRE(merged.size() == 2);
    CHECK(merged.points[1].x == doctest::Approx(3.0));
    CHECK(merged.points[1].y == doctest::Approx(0.0));
    CHECK(merged.current_mask[0] == 1);
    CHECK(merged.current_mask[1] == 0);
    // non-geometric features preserved bit-exactly
    CHECK(merged.points[1].intensity == 0.5f);
    CHECK(merged.points[1].elongation == 0.25f);
    CHECK(merged.points[1].timestamp == -0.1f);
}

TEST_CASE("merge_frames with empty past list is identity with all-true mask") {
    PointCloud cur = three_point_cloud();
    PointCloud merged = merge_frames(cur, {});
    REQUIRE(merged.size() == cur.size());
    for (size_t i = 0; i < cur.size(); ++i) {
        CHECK(merged.points[i].x == cur.points[i].x);
        CHECK(merged.current_mask[i] == 1);
    }
}

TEST_CASE("merge_frames counts current points") {
    PointCloud cur, p1, p2;
    for (int i = 0; i < 10; ++i) {
        cur.points.push_back(Point{float(i), 0, 0});
        p1.points.push_back(Point{float(i), 1, 0});
        p2.points.push_back(Point{float(i), 2, 0});
    }
    cur.resize_mask_current();
    p1.resize_mask_current();
    p2.resize_mask_current();
    PointCloud merged = merge_frames(cur, {{p1, Pose{}}, {p2, Pose{}}});
    REQUIRE(merged.size() == 30);
    int current = 0;
    for (uint8_t m : merged.current_mask) current += m;
    CHECK(current == 10);
}

TEST_CASE("merge_frames rejects a non-rigid pose") {
    Pose bad;
    bad.m[0] = 2.0;
    PointCloud cur = three_point_cloud();
    CHECK_THROWS_AS(merge_frames(cur, {{cur, bad}}), DataError);
}

TEST_CASE("apply_transform examples") {
    PointCloud pc;
    pc.points = {Point{1, 0, 0}};
    pc.resize_mask_current();

    SUBCASE("quarter yaw") {
        PointCloud out = apply_transform(pc, GeomTransform::rot_yaw(kPi / 2));
        CHECK(out.points[0].x == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(out.points[0].y == doctest::Approx(1.0));
    }
    SUBCASE("flip_yz negates x") {
        pc.points = {Point{1, 2, 3}};
        PointCloud out = apply_transform(pc, GeomTransform::flip_yz());
        CHECK(out.points[0].x == -1.f);
        CHECK(out.points[0].y == 2.f);
        CHECK(out.points[0].z == 3.f);
    }
    SUBCASE("flip_xz negates y") {
        pc.points = {Point{1, 2, 3}};
        PointCloud out = apply_transform(pc, GeomTransform::flip_xz());
        CHECK(out.points[0].x == 1.f);
        CHECK(out.points[0].y == -2.f);
    }
    SUBCASE("scale 1.05") {
        pc.points = {Point{2, 0, 0}};
        PointCloud out = apply_transform(pc, GeomTransform::scale(1.05));
        CHECK(out.points[0].x == doctest::Approx(2.1));
    }
    SUBCASE("labels and features survive") {
        pc.labels = {7};
        pc.points[0].intensity = 0.42f;
        PointCloud out = apply_transform(pc, GeomTransform::rot_pitch(0.3));
        CHECK(out.labels[0] == 7);
        CHECK(out.points[0].intensity == 0.42f);
    }
}

TEST_CASE("yaw rotation round trip within 1e-6") {
    Rng rng(17);
    PointCloud pc;
    for (int i = 0; i < 50; ++i)
        pc.points.push_back(
            Point{rng.uniformf(-10, 10), rng.uniformf(-10, 10), rng.uniformf(-2, 4)});
    pc.resize_mask_current();
    for (double a : {0.3, -1.2, 2.9, 0.0001}) {
        PointCloud back =
            apply_transform(apply_transform(pc, GeomTransform::rot_yaw(a)), GeomTransform::rot_yaw(-a));
        for (size_t i = 0; i < pc.size(); ++i) {
            CHECK(std::abs(back.points[i].x - pc.points[i].x) < 1e-6 * (1 + std::abs(pc.points[i].x)));
            CHECK(std::abs(back.points[i].y - pc.points[i].y) < 1e-6 * (1 + std::abs(pc.points[i].y)));
            CHECK(std::abs(back.points[i].z - pc.points[i].z) < 1e-6 * (1 + std::abs(pc.points[i].z)));
        }
    }
}

TEST_CASE("flips are involutions exactly") {
    Rng rng(3);
    PointCloud pc;
    for (int i = 0; i < 20; ++i)
        pc.points.push_back(Point{rng.uniformf(-5, 5), rng.uniformf(-5, 5), rng.uniformf(-5, 5)});
    pc.resize_mask_current();
    for (auto t : {GeomTransform::flip_xz(), GeomTransform::flip_yz()}) {
        PointCloud back = apply_transform(apply_transform(pc, t), t);
        for (size_t i = 0; i < pc.size(); ++i) {
            CHECK(back.points[i].x == pc.points[i].x);
            CHECK(back.points[i].y == pc.points[i].y);
            CHECK(back.points[i].z == pc.points[i].z);
        }
    }
}

TEST_CASE("tta set sizes") {
    PointCloud pc = three_point_cloud();

    SUBCASE("flips only -> 3 variants") {
        TtaConfig cfg = TtaConfig::none();
        cfg.flip_xz = cfg.flip_yz = true;
        auto set = make_tta_set(pc, cfg);
        REQUIRE(set.size() == 3);
        CHECK(set[0].first.kind == TransformKind::identity);
        CHECK(set[1].first.kind == TransformKind::flip_xz);
        CHECK(set[2].first.kind == TransformKind::flip_yz);
    }
    SUBCASE("empty config -> identity only") {
        auto set = make_tta_set(pc, TtaConfig::none());
        REQUIRE(set.size() == 1);
        CHECK(set[0].first.kind == TransformKind::identity);
    }
    SUBCASE("default set matches one-transform-per-variant enumeration") {
        TtaConfig cfg;
        // independent count: identity + every enabled transform, one each
        const size_t expected = 1 + 2 + cfg.scales.size() + cfg.yaw_rad.size() +
                                cfg.pitch_rad.size() + cfg.roll_rad.size() +
                                cfg.translate_z.size();
        CHECK(expected == 20);  // 1 + 2 flips + 2 scales + 9 yaws + 2 pitch + 2 roll + 2 dz
        auto set = make_tta_set(pc, cfg);
        CHECK(set.size() == expected);
        // point order preserved in every clone
        for (const auto& [t, cloud] : set) REQUIRE(cloud.size() == pc.size());
    }
}

TEST_CASE("aggregate_tta_probs") {
    SUBCASE("single matrix is identity") {
        Mat m(1, 2);
        m.at(0, 0) = 0.25f;
        m.at(0, 1) = 0.75f;
        Mat out = aggregate_tta_probs({m});
        CHECK(out.at(0, 0) == doctest::Approx(0.25));
        CHECK(out.at(0, 1) == doctest::Approx(0.75));
    }
    SUBCASE("two one-hot rows average to a half") {
        Mat a(1, 2), b(1, 2);
        a.at(0, 0) = 1.f;
        b.at(0, 1) = 1.f;
        Mat out = aggregate_tta_probs({a, b});
        CHECK(out.at(0, 0) == doctest::Approx(0.5));
        CHECK(out.at(0, 1) == doctest::Approx(0.5));
    }
    SUBCASE("mean of [0.2,0.8] and [0.4,0.6]") {
        Mat a(1, 2), b(1, 2);
        a.at(0, 0) = 0.2f;
        a.at(0, 1) = 0.8f;
        b.at(0, 0) = 0.4f;
        b.at(0, 1) = 0.6f;
        Mat out = aggregate_tta_probs({a, b});
        CHECK(out.at(0, 0) == doctest::Approx(0.3));
        CHECK(out.at(0, 1) == doctest::Approx(0.7));
    }
    SUBCASE("shape mismatch throws") {
        CHECK_THROWS_AS(aggregate_tta_probs({Mat(1, 2), Mat(2, 2)}), DataError);
    }
    SUBCASE("rows sum to one and argmax is variant-order invariant") {
        Rng rng(9);
        std::vector<Mat> mats;
        for (int v = 0; v < 5; ++v) {
            Mat m(8, 4);
            for (auto& x : m.v) x = rng.uniformf(0.f, 1.f);
            mats.push_back(m);
        }
        Mat fwd = aggregate_tta_probs(mats);
        std::reverse(mats.begin(), mats.end());
        Mat rev = aggregate_tta_probs(mats);
        for (int32_t r = 0; r < fwd.rows; ++r) {
            double sum = 0;
            for (int32_t c = 0; c < fwd.cols; ++c) sum += fwd.at(r, c);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(argmax_row(fwd, r) == argmax_row(rev, r));
        }
    }
}
