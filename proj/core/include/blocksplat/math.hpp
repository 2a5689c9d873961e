#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace blocksplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Quaternions are stored (w, x, y, z).
inline Vec4 quat_normalized(const Vec4& q) {
    double n = q.norm();
    if (n == 0.0) return Vec4(1, 0, 0, 0);
    return q / n;
}

// Sign convention: w >= 0, so consensus averaging never sees antipodal pairs.
inline Vec4 quat_canonical(const Vec4& q) {
    return q[0] < 0.0 ? Vec4(-q) : q;
}

// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 quat_to_rotation(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Quaternion (w, x, y, z) of a rotation matrix, w >= 0. Shepperd's method,
// branching on the largest diagonal term for stability.
inline Vec4 rotation_to_quat(const Mat3& r) {
    const double t = r.trace();
    Vec4 q;
    if (t > 0.0) {
        double s = std::sqrt(t + 1.0) * 2.0;
        q = Vec4(0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
                 (r(1, 0) - r(0, 1)) / s);
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q = Vec4((r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
                 (r(0, 2) + r(2, 0)) / s);
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q = Vec4((r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
                 (r(1, 2) + r(2, 1)) / s);
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q = Vec4((r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s,
                 (r(1, 2) + r(2, 1)) / s, 0.25 * s);
    }
    return quat_canonical(quat_normalized(q));
}

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard;
// the distributions here are hand-rolled so streams are reproducible across
// standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) {
        // Rejection-free modulo bias is negligible for the n used here, but
        // stay exact anyway.
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Vec4 random_unit_quat() {
        Vec4 q(normal(), normal(), normal(), normal());
        return quat_canonical(quat_normalized(q));
    }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over arbitrary bytes; used for model checksums in diagnostics.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace blocksplat
