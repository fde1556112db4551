#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvx {

constexpr double kPi = 3.14159265358979323846;

// Semantic labels are 1..K; class 0 is the unscored ignore/undefined class.
constexpr int32_t kIgnoreLabel = 0;
// Marker for points that fell outside the voxel grid under the drop policy.
constexpr int32_t kNoVoxel = -1;

// Parse failures carry a human-readable location (byte or line offset).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Inputs that parse but violate a contract (shape mismatch, missing labels, ...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major float matrix.
struct Mat {
    int32_t rows = 0;
    int32_t cols = 0;
    std::vector<float> v;

    Mat() = default;
    Mat(int32_t r, int32_t c, float fill = 0.f) : rows(r), cols(c), v(size_t(r) * size_t(c), fill) {}

    float& at(int32_t r, int32_t c) { return v[size_t(r) * cols + c]; }
    float at(int32_t r, int32_t c) const { return v[size_t(r) * cols + c]; }
    float* row(int32_t r) { return v.data() + size_t(r) * cols; }
    const float* row(int32_t r) const { return v.data() + size_t(r) * cols; }
    bool empty() const { return rows == 0 || cols == 0; }

    static Mat identity(int32_t n) {
        Mat m(n, n, 0.f);
        for (int32_t i = 0; i < n; ++i) m.at(i, i) = 1.f;
        return m;
    }
};

inline int32_t argmax_row(const Mat& m, int32_t r) {
    int32_t best = 0;
    for (int32_t c = 1; c < m.cols; ++c)
        if (m.at(r, c) > m.at(r, best)) best = c;
    return best;
}

// Numerically stable row-wise softmax.
inline Mat softmax_rows(const Mat& logits) {
    Mat out(logits.rows, logits.cols, 0.f);
    for (int32_t r = 0; r < logits.rows; ++r) {
        const float* in = logits.row(r);
        float mx = -std::numeric_limits<float>::infinity();
        for (int32_t c = 0; c < logits.cols; ++c) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (int32_t c = 0; c < logits.cols; ++c) sum += std::exp(double(in[c]) - mx);
        for (int32_t c = 0; c < logits.cols; ++c)
            out.at(r, c) = float(std::exp(double(in[c]) - mx) / sum);
    }
    return out;
}

// Deterministic generator (splitmix64). <random> distributions are
// implementation-defined, so everything seeded goes through this.
struct Rng {
    uint64_t state = 0;

    explicit Rng(uint64_t seed = 0) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }  // [0,1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    float uniformf(float lo, float hi) { return float(uniform(lo, hi)); }
    int64_t below(int64_t n) { return int64_t(next() % uint64_t(n)); }

    double normal(double mean = 0.0, double sigma = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + sigma * spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        have_spare_ = true;
        return mean + sigma * r * std::cos(2.0 * kPi * u2);
    }

private:
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mvx
