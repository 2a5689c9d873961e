#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "blocksplat/cloud.hpp"
#include "blocksplat/errors.hpp"

using namespace blocksplat;

namespace {

GaussianPrimitive make_prim(uint64_t id, double v) {
    GaussianPrimitive g;
    g.id = id;
    g.position = Vec3(v, v + 1, v + 2);
    g.rotation = quat_normalized(Vec4(1, v * 0.1, 0, 0.2));
    g.log_scale = Vec3(-v * 0.1, 0.1, 0.2);
    g.features = {v, v * 2, v * 3};
    g.opacity_logit = v * 0.5;
    return g;
}

GaussianCloud make_cloud(const std::vector<uint64_t>& ids) {
    GaussianCloud c(kFeatureDimDeg0);
    double v = 1.0;
    for (uint64_t id : ids) c.push_back(make_prim(id, v++));
    return c;
}

} // namespace

TEST_CASE("push_back and primitive round-trip") {
    GaussianCloud c(kFeatureDimDeg0);
    GaussianPrimitive g = make_prim(42, 3.0);
    c.push_back(g);
    REQUIRE(c.size() == 1);
    GaussianPrimitive back = c.primitive(0);
    CHECK(back.id == 42);
    CHECK(back.position == g.position);
    CHECK(back.rotation == g.rotation);
    CHECK(back.log_scale == g.log_scale);
    CHECK(back.features == g.features);
    CHECK(back.opacity_logit == g.opacity_logit);
}

TEST_CASE("sort_by_id, find, invariants") {
    GaussianCloud c(kFeatureDimDeg0);
    c.push_back(make_prim(5, 1));
    c.push_back(make_prim(1, 2));
    c.push_back(make_prim(3, 3));
    CHECK_FALSE(c.check_invariants());
    c.sort_by_id();
    CHECK(c.check_invariants());
    CHECK(c.ids == std::vector<uint64_t>{1, 3, 5});
    CHECK(c.find(3) == 1);
    CHECK(c.find(4) == GaussianCloud::npos);
    // Payload moved with its id.
    CHECK(c.primitive(0).position == Vec3(2, 3, 4));
}

TEST_CASE("remove_indices keeps order, ignores duplicates") {
    GaussianCloud c = make_cloud({1, 2, 3, 4, 5});
    c.remove_indices({3, 1, 1});
    CHECK(c.ids == std::vector<uint64_t>{1, 3, 5});
    CHECK(c.check_invariants());
}

TEST_CASE("subset copies selected rows in the given order") {
    GaussianCloud c = make_cloud({10, 20, 30});
    GaussianCloud s = c.subset({2, 0});
    CHECK(s.ids == std::vector<uint64_t>{30, 10});
    CHECK(s.primitive(1).position == c.primitive(0).position);
}

TEST_CASE("slice_by_ids skips absent ids") {
    GaussianCloud c = make_cloud({1, 4, 9});
    GaussianCloud s = slice_by_ids(c, {1, 2, 9, 100});
    CHECK(s.ids == std::vector<uint64_t>{1, 9});
    CHECK(s.primitive(1).opacity_logit == c.primitive(2).opacity_logit);
}

TEST_CASE("overwrite_by_ids writes matches and reports the count") {
    GaussianCloud dst = make_cloud({1, 2, 3});
    GaussianCloud src(kFeatureDimDeg0);
    src.push_back(make_prim(2, 50));
    src.push_back(make_prim(7, 60));
    CHECK(overwrite_by_ids(dst, src) == 1);
    CHECK(dst.primitive(1).position == Vec3(50, 51, 52));
    CHECK(dst.primitive(0).position == Vec3(1, 2, 3));
}

TEST_CASE("erase_by_ids and insert_rows") {
    GaussianCloud c = make_cloud({1, 2, 3, 4});
    erase_by_ids(c, {2, 99});
    CHECK(c.ids == std::vector<uint64_t>{1, 3, 4});

    GaussianCloud rows(kFeatureDimDeg0);
    rows.push_back(make_prim(2, 9));
    rows.push_back(make_prim(10, 8));
    insert_rows(c, rows);
    CHECK(c.ids == std::vector<uint64_t>{1, 2, 3, 4, 10});
    CHECK(c.check_invariants());
    CHECK(c.primitive(1).position == Vec3(9, 10, 11));

    GaussianCloud dup(kFeatureDimDeg0);
    dup.push_back(make_prim(3, 1));
    CHECK_THROWS_AS(insert_rows(c, dup), InvalidArgument);
}

TEST_CASE("zero_bundle has the right shape and all zeros") {
    GaussianCloud z = zero_bundle({4, 7}, kFeatureDimDeg1);
    CHECK(z.size() == 2);
    CHECK(z.feature_dim() == kFeatureDimDeg1);
    CHECK(z.ids == std::vector<uint64_t>{4, 7});
    for (double v : z.positions) CHECK(v == 0.0);
    for (double v : z.rotations) CHECK(v == 0.0);
    for (double v : z.features) CHECK(v == 0.0);
}

TEST_CASE("cloud_checksum is order- and bit-sensitive") {
    GaussianCloud a = make_cloud({1, 2});
    GaussianCloud b = make_cloud({1, 2});
    CHECK(cloud_checksum(a) == cloud_checksum(b));
    b.positions[0] = std::nextafter(b.positions[0], 1e300);
    CHECK(cloud_checksum(a) != cloud_checksum(b));
    GaussianCloud c = make_cloud({2, 1});
    CHECK(cloud_checksum(a) != cloud_checksum(c));
}

TEST_CASE("covariance_from_params equals R S S^T R^T") {
    Rng rng(21);
    for (int i = 0; i < 30; ++i) {
        Vec4 q = rng.random_unit_quat();
        Vec3 ls(rng.uniform(-2, 1), rng.uniform(-2, 1), rng.uniform(-2, 1));
        Mat3 sigma = covariance_from_params(q, ls);
        // Independent reference built from Eigen's quaternion rotation.
        Mat3 r = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
        Mat3 s = Vec3(std::exp(ls[0]), std::exp(ls[1]), std::exp(ls[2])).asDiagonal();
        Mat3 ref = r * s * s.transpose() * r.transpose();
        CHECK((sigma - ref).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("covariance_from_params normalizes the quaternion internally") {
    Vec4 q = quat_normalized(Vec4(1, 2, 3, 4));
    Vec3 ls(0.1, -0.3, 0.2);
    Mat3 a = covariance_from_params(q, ls);
    Mat3 b = covariance_from_params(3.0 * q, ls);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("evaluate_gaussian matches a dense-inverse reference") {
    Rng rng(22);
    for (int i = 0; i < 20; ++i) {
        Vec4 q = rng.random_unit_quat();
        Vec3 ls(rng.uniform(-1, 0.5), rng.uniform(-1, 0.5), rng.uniform(-1, 0.5));
        Mat3 sigma = covariance_from_params(q, ls);
        Vec3 mu(rng.normal(), rng.normal(), rng.normal());
        Vec3 p = mu + Vec3(rng.normal(), rng.normal(), rng.normal());
        double got = evaluate_gaussian(mu, sigma, p);
        Mat3 reg = sigma + 1e-8 * Mat3::Identity();
        Vec3 d = p - mu;
        double ref = std::exp(-0.5 * d.dot(reg.inverse() * d));
        CHECK(got == doctest::Approx(ref).epsilon(1e-9));
    }
    // Value at the mean is exactly 1.
    Mat3 eye = Mat3::Identity();
    CHECK(evaluate_gaussian(Vec3(1, 2, 3), eye, Vec3(1, 2, 3)) == 1.0);
}

TEST_CASE("sh_color degree 0 is constant, degree 1 is linear in direction") {
    double f0[3] = {0.5, 1.0, 1.5};
    Vec3 c = sh_color(f0, kFeatureDimDeg0, Vec3(0, 0, 1));
    CHECK(c[0] == doctest::Approx(kSh0 * 0.5));
    CHECK(c[1] == doctest::Approx(kSh0 * 1.0));
    CHECK(c[2] == doctest::Approx(kSh0 * 1.5));
    CHECK(c == sh_color(f0, kFeatureDimDeg0, Vec3(1, 0, 0)));

    // Degree 1 layout: 3 DC then 3 linear coefficients per channel,
    // channel-major, basis (-y, z, -x) * kSh1.
    std::vector<double> f1(kFeatureDimDeg1, 0.0);
    f1[0] = 1.0;
    f1[4] = 0.2;  // red channel, z-basis coefficient
    Vec3 dir(0, 0, 1);
    Vec3 base = sh_color(f1.data(), kFeatureDimDeg1, dir);
    CHECK(base[0] == doctest::Approx(kSh0 * 1.0 + 0.2 * kSh1).epsilon(1e-12));
    // Flipping direction flips the linear band only.
    Vec3 flip = sh_color(f1.data(), kFeatureDimDeg1, -dir);
    CHECK(base[1] == doctest::Approx(flip[1]).epsilon(1e-12));
    CHECK(base[0] + flip[0] == doctest::Approx(2.0 * kSh0 * 1.0).epsilon(1e-12));
    // Direction is normalized internally.
    CHECK((sh_color(f1.data(), kFeatureDimDeg1, Vec3(0, 0, 7)) - base).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("canonicalize_rotations renormalizes with w >= 0") {
    GaussianCloud c(kFeatureDimDeg0);
    GaussianPrimitive g = make_prim(1, 1.0);
    g.rotation = Vec4(-2, 0, 0, 0);
    c.push_back(g);
    c.canonicalize_rotations();
    CHECK(c.rotation(0) == Vec4(1, 0, 0, 0));
}
