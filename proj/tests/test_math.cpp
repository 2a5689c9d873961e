#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <map>
#include <vector>

#include "blocksplat/math.hpp"

using namespace blocksplat;

TEST_CASE("quat_normalized handles zero and preserves direction") {
    CHECK(quat_normalized(Vec4(0, 0, 0, 0)) == Vec4(1, 0, 0, 0));
    Vec4 q = quat_normalized(Vec4(2, 0, 0, 0));
    CHECK(q == Vec4(1, 0, 0, 0));
    Vec4 r = quat_normalized(Vec4(1, 2, 3, 4));
    CHECK(r.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r[0] * 4 == doctest::Approx(r[3]).epsilon(1e-12));
}

TEST_CASE("quat_canonical flips to w >= 0") {
    Vec4 q(-0.5, 0.5, 0.5, 0.5);
    Vec4 c = quat_canonical(q);
    CHECK(c[0] == 0.5);
    CHECK(c[1] == -0.5);
    CHECK(quat_canonical(c) == c);
}

TEST_CASE("quat_to_rotation matches Eigen and is orthonormal") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        Vec4 q = rng.random_unit_quat();
        Mat3 r = quat_to_rotation(q);
        // Independent reference: Eigen quaternion (w, x, y, z).
        Eigen::Quaterniond eq(q[0], q[1], q[2], q[3]);
        Mat3 re = eq.toRotationMatrix();
        CHECK((r - re).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("rotation_to_quat inverts quat_to_rotation") {
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        Vec4 q = rng.random_unit_quat();
        Vec4 back = rotation_to_quat(quat_to_rotation(q));
        CHECK((back - q).cwiseAbs().maxCoeff() < 1e-9);
    }
    // Exercise every Shepperd branch: rotations near pi about each axis.
    for (int axis = 0; axis < 3; ++axis) {
        Vec3 a = Vec3::Zero();
        a[axis] = 1.0;
        Eigen::AngleAxisd aa(3.1, a);
        Mat3 r = aa.toRotationMatrix();
        Vec4 q = rotation_to_quat(r);
        CHECK((quat_to_rotation(q) - r).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(q[0] >= 0.0);
    }
}

TEST_CASE("rng streams are deterministic and well distributed") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(1);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);

    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        m += x;
        m2 += x * x;
    }
    CHECK(m / n == doctest::Approx(0.0).epsilon(0.05));
    CHECK(m2 / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("uniform_index stays in range and covers values") {
    Rng r(3);
    std::map<uint64_t, int> seen;
    for (int i = 0; i < 1000; ++i) {
        uint64_t v = r.uniform_index(7);
        CHECK(v < 7);
        seen[v]++;
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    std::vector<int> w = v;
    Rng a(9), b(9);
    a.shuffle(v);
    b.shuffle(w);
    CHECK(v == w);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
    CHECK(v != sorted);  // 50 elements, seed 9: identity is astronomically unlikely
}

TEST_CASE("random_unit_quat is unit with w >= 0") {
    Rng r(5);
    for (int i = 0; i < 100; ++i) {
        Vec4 q = r.random_unit_quat();
        CHECK(q.norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(q[0] >= 0.0);
    }
}

TEST_CASE("fnv1a64 chains over concatenation") {
    const char* s = "hello world";
    uint64_t whole = fnv1a64(s, 11);
    uint64_t part = fnv1a64(s + 5, 6, fnv1a64(s, 5));
    CHECK(whole == part);
    CHECK(fnv1a64("a", 1) != fnv1a64("b", 1));
    // Empty input returns the seed unchanged.
    CHECK(fnv1a64("", 0, 123) == 123);
}

TEST_CASE("sigmoid and logit are inverses") {
    for (double p : {0.01, 0.1, 0.5, 0.9, 0.99}) {
        CHECK(sigmoid(logit(p)) == doctest::Approx(p).epsilon(1e-12));
    }
}
