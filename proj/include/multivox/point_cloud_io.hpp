#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "multivox/point_cloud.hpp"

namespace mvx {

// Binary point cloud container:
//   magic "LPCD", version u32 LE, count u64 LE, feature_dim u32 LE (>=3),
//   count*feature_dim f32 LE records (x,y,z first),
//   optional label section: "LBLS", count u64 LE, count u8 labels.
// Feature order beyond xyz is intensity, elongation, timestamp.

namespace detail {

template <typename T>
T read_le(std::istream& in, const char* what, size_t& offset) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in)
        throw ParseError(std::string("truncated read of ") + what + " at byte " +
                         std::to_string(offset));
    offset += sizeof(T);
    return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

inline PointCloud load_point_cloud_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    size_t off = 0;

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LPCD", 4) != 0)
        throw ParseError(path + ": bad magic at byte 0 (expected LPCD)");
    off = 4;

    const uint32_t version = detail::read_le<uint32_t>(in, "version", off);
    if (version != 1)
        throw ParseError(path + ": unsupported version " + std::to_string(version) + " at byte 4");
    const uint64_t count = detail::read_le<uint64_t>(in, "point count", off);
    const uint32_t dim = detail::read_le<uint32_t>(in, "feature_dim", off);
    if (dim < 3 || dim > uint32_t(kPointFeatureDim))
        throw ParseError(path + ": feature_dim " + std::to_string(dim) +
                         " out of supported range [3," + std::to_string(kPointFeatureDim) +
                         "] at byte 12");

    PointCloud pc;
    pc.points.resize(count);
    std::vector<float> rec(dim);
    for (uint64_t i = 0; i < count; ++i) {
        const size_t rec_off = off;
        in.read(reinterpret_cast<char*>(rec.data()), std::streamsize(dim * sizeof(float)));
        if (!in)
            throw ParseError(path + ": truncated point record " + std::to_string(i) + " at byte " +
                             std::to_string(rec_off));
        off += dim * sizeof(float);
        for (uint32_t f = 0; f < dim; ++f)
            if (!std::isfinite(rec[f]))
                throw ParseError(path + ": non-finite value in point " + std::to_string(i) +
                                 " at byte " + std::to_string(rec_off + f * sizeof(float)));
        Point& p = pc.points[i];
        p.x = rec[0];
        p.y = rec[1];
        p.z = rec[2];
        if (dim > 3) p.intensity = rec[3];
        if (dim > 4) p.elongation = rec[4];
        if (dim > 5) p.timestamp = rec[5];
    }

    char marker[4];
    in.read(marker, 4);
    if (in.gcount() == 4) {
        if (std::memcmp(marker, "LBLS", 4) != 0)
            throw ParseError(path + ": unexpected trailing bytes at byte " + std::to_string(off));
        off += 4;
        const uint64_t lcount = detail::read_le<uint64_t>(in, "label count", off);
        if (lcount != count)
            throw ParseError(path + ": label count " + std::to_string(lcount) +
                             " does not match point count " + std::to_string(count));
        std::vector<uint8_t> raw(lcount);
        if (lcount) {
            in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(lcount));
            if (!in) throw ParseError(path + ": truncated label section at byte " + std::to_string(off));
        }
        pc.labels.assign(raw.begin(), raw.end());
    } else if (in.gcount() != 0) {
        throw ParseError(path + ": unexpected trailing bytes at byte " + std::to_string(off));
    }

    // Current-frame flag comes from the timestamp feature when present.
    pc.current_mask.resize(pc.points.size());
    for (size_t i = 0; i < pc.points.size(); ++i)
        pc.current_mask[i] = pc.points[i].timestamp == 0.f ? 1 : 0;
    if (dim <= 5) pc.resize_mask_current();
    return pc;
}

inline void save_point_cloud_binary(const PointCloud& pc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write("LPCD", 4);
    detail::write_le<uint32_t>(out, 1);
    detail::write_le<uint64_t>(out, pc.points.size());
    detail::write_le<uint32_t>(out, uint32_t(kPointFeatureDim));
    for (const auto& p : pc.points) {
        const float rec[kPointFeatureDim] = {p.x, p.y, p.z, p.intensity, p.elongation, p.timestamp};
        out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    if (pc.has_labels()) {
        out.write("LBLS", 4);
        detail::write_le<uint64_t>(out, pc.labels.size());
        for (int32_t l : pc.labels) {
            if (l < 0 || l > 255) throw DataError("label out of u8 range");
            const uint8_t b = uint8_t(l);
            out.write(reinterpret_cast<const char*>(&b), 1);
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

// CSV: one point per line, comma-separated floats (3..6 columns), optionally
// followed by an integer label when with_labels is set. '#' lines are comments.
inline PointCloud load_point_cloud_csv(const std::string& path, bool with_labels = false) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);

    PointCloud pc;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') continue;

        std::vector<double> fields;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                size_t used = 0;
                const double v = std::stod(cell, &used);
                fields.push_back(v);
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": not a number: '" +
                                 cell + "'");
            }
        }
        const size_t nfeat = with_labels ? fields.size() - 1 : fields.size();
        if (fields.size() < (with_labels ? 4u : 3u) || nfeat > size_t(kPointFeatureDim))
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                             (with_labels ? std::string("4..7") : std::string("3..6")) +
                             " columns, got " + std::to_string(fields.size()));
        for (size_t f = 0; f < nfeat; ++f)
            if (!std::isfinite(fields[f]))
                throw ParseError(path + ":" + std::to_string(line_no) + ": non-finite value");

        Point p;
        p.x = float(fields[0]);
        p.y = float(fields[1]);
        p.z = float(fields[2]);
        if (nfeat > 3) p.intensity = float(fields[3]);
        if (nfeat > 4) p.elongation = float(fields[4]);
        if (nfeat > 5) p.timestamp = float(fields[5]);
        pc.points.push_back(p);
        if (with_labels) pc.labels.push_back(int32_t(fields.back()));
    }
    pc.current_mask.resize(pc.points.size());
    for (size_t i = 0; i < pc.points.size(); ++i)
        pc.current_mask[i] = pc.points[i].timestamp == 0.f ? 1 : 0;
    return pc;
}

enum class CloudFormat { binary, csv };

inline PointCloud load_point_cloud(const std::string& path, CloudFormat fmt,
                                   bool csv_with_labels = false) {
    return fmt == CloudFormat::binary ? load_point_cloud_binary(path)
                                      : load_point_cloud_csv(path, csv_with_labels);
}

inline std::vector<int32_t> load_labels_u8(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return std::vector<int32_t>(raw.begin(), raw.end());
}

inline void save_labels_u8(const std::vector<int32_t>& labels, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    for (int32_t l : labels) {
        if (l < 0 || l > 255) throw DataError("label out of u8 range");
        const uint8_t b = uint8_t(l);
        out.write(reinterpret_cast<const char*>(&b), 1);
    }
}

}  // namespace mvx
