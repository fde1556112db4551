#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "multivox/point_cloud.hpp"

namespace mvx {

// Fixed 22-class palette; label 0 / out-of-palette renders gray.
inline std::array<uint8_t, 3> class_color(int32_t label) {
    static const std::array<std::array<uint8_t, 3>, 22> palette{{
        {0, 120, 255},    // 1
        {255, 128, 0},    // 2
        {80, 80, 90},     // 3
        {170, 120, 60},   // 4
        {250, 230, 50},   // 5
        {0, 200, 120},    // 6
        {255, 0, 80},     // 7
        {130, 0, 220},    // 8
        {0, 220, 220},    // 9
        {255, 200, 150},  // 10
        {60, 140, 60},    // 11
        {200, 60, 200},   // 12
        {150, 255, 0},    // 13
        {255, 60, 60},    // 14
        {70, 70, 255},    // 15
        {180, 180, 40},   // 16
        {40, 180, 180},   // 17
        {220, 140, 220},  // 18
        {100, 60, 0},     // 19
        {0, 100, 60},     // 20
        {240, 240, 240},  // 21
        {120, 200, 255},  // 22
    }};
    if (label < 1 || label > int32_t(palette.size())) return {128, 128, 128};
    return palette[size_t(label - 1)];
}

inline void write_colored_ply(const PointCloud& pc, const std::vector<int32_t>& labels,
                              const std::string& path) {
    if (labels.size() != pc.size()) throw DataError("write_colored_ply: label count mismatch");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "ply\nformat ascii 1.0\nelement vertex " << pc.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    char line[128];
    for (size_t i = 0; i < pc.size(); ++i) {
        const auto c = class_color(labels[i]);
        std::snprintf(line, sizeof(line), "%.4f %.4f %.4f %d %d %d\n", pc.points[i].x,
                      pc.points[i].y, pc.points[i].z, c[0], c[1], c[2]);
        out << line;
    }
    if (!out) throw DataError("write failed: " + path);
}

inline void write_panoptic_pairs(const std::vector<std::pair<int32_t, int32_t>>& pairs,
                                 const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    for (const auto& [sem, inst] : pairs) out << sem << ' ' << inst << '\n';
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<std::pair<int32_t, int32_t>> read_panoptic_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<std::pair<int32_t, int32_t>> out;
    int32_t sem = 0, inst = 0;
    while (in >> sem >> inst) out.emplace_back(sem, inst);
    return out;
}

}  // namespace mvx
