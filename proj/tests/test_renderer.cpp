#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "blocksplat/cloud.hpp"
#include "blocksplat/errors.hpp"
#include "blocksplat/renderer.hpp"
#include "blocksplat/ssim.hpp"

using namespace blocksplat;

namespace {

CameraView axis_camera(double f, double c, uint32_t size) {
    CameraView cam;
    cam.fx = cam.fy = f;
    cam.cx = cam.cy = c;
    cam.width = cam.height = size;
    return cam;
}

GaussianPrimitive splat_at(uint64_t id, const Vec3& pos, const Vec3& rgb, double opacity,
                           double log_scale = -1.0) {
    GaussianPrimitive g;
    g.id = id;
    g.position = pos;
    g.rotation = Vec4(1, 0, 0, 0);
    g.log_scale = Vec3::Constant(log_scale);
    g.features = {rgb[0] / kSh0, rgb[1] / kSh0, rgb[2] / kSh0};
    g.opacity_logit = logit(opacity);
    return g;
}

GaussianCloud random_cloud(int n, uint64_t seed, double spread = 1.5) {
    GaussianCloud c(kFeatureDimDeg0);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        GaussianPrimitive g;
        g.id = static_cast<uint64_t>(i);
        g.position = Vec3(rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                          rng.uniform(-spread, spread));
        g.rotation = rng.random_unit_quat();
        g.log_scale = Vec3(rng.uniform(-2.5, -0.8), rng.uniform(-2.5, -0.8), rng.uniform(-2.5, -0.8));
        g.features = {rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3)};
        g.opacity_logit = rng.uniform(-1.5, 2.0);
        c.push_back(g);
    }
    return c;
}

CameraView test_camera(uint32_t size = 24) {
    return look_at(Vec3(0.3, 0.4, -6), Vec3(0.05, -0.05, 0), Vec3(0, 1, 0),
                   1.1 * size, 1.1 * size, size / 2.0, size / 2.0, size, size);
}

// Brute-force compositor built only on project_gaussian and the documented
// alpha formula. Replicates footprint and ordering rules independently.
struct OracleOut {
    Image color;
    std::vector<double> transmittance;
    std::vector<double> weight_sum; // per pixel, composited alpha*T total
};

OracleOut oracle_render(const GaussianCloud& cloud, const CameraView& cam,
                        const RenderConfig& cfg) {
    struct P {
        ProjectedGaussian pg;
        Vec3 color;
        double opacity;
        int x0, x1, y0, y1;
    };
    std::vector<P> ps;
    const Vec3 center = cam.center();
    for (size_t i = 0; i < cloud.size(); ++i) {
        auto proj = project_gaussian(cloud.position(i),
                                     covariance_from_params(cloud.rotation(i), cloud.log_scale(i)),
                                     cam, cfg);
        if (!proj) continue;
        P p;
        p.pg = *proj;
        p.pg.gaussian_index = i;
        p.color = sh_color(cloud.features.data() + i * cloud.feature_dim(), cloud.feature_dim(),
                           cloud.position(i) - center);
        p.opacity = cloud.opacity(i);
        const Mat2& m = p.pg.cov2d;
        double mid = 0.5 * (m(0, 0) + m(1, 1));
        double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
        double radius = cfg.sigma_extent * std::sqrt(mid + std::sqrt(std::max(0.0, mid * mid - det)));
        p.x0 = std::max(0, static_cast<int>(std::ceil(p.pg.mean2d.x() - radius)));
        p.x1 = std::min(static_cast<int>(cam.width) - 1,
                        static_cast<int>(std::floor(p.pg.mean2d.x() + radius)));
        p.y0 = std::max(0, static_cast<int>(std::ceil(p.pg.mean2d.y() - radius)));
        p.y1 = std::min(static_cast<int>(cam.height) - 1,
                        static_cast<int>(std::floor(p.pg.mean2d.y() + radius)));
        ps.push_back(p);
    }
    std::stable_sort(ps.begin(), ps.end(), [](const P& a, const P& b) {
        if (a.pg.depth != b.pg.depth) return a.pg.depth < b.pg.depth;
        return a.pg.gaussian_index < b.pg.gaussian_index;
    });

    OracleOut out;
    out.color = Image(cam.width, cam.height);
    out.transmittance.assign(out.color.pixel_count(), 1.0);
    out.weight_sum.assign(out.color.pixel_count(), 0.0);
    for (uint32_t y = 0; y < cam.height; ++y) {
        for (uint32_t x = 0; x < cam.width; ++x) {
            double t = 1.0;
            Vec3 c = Vec3::Zero();
            double wsum = 0.0;
            for (const P& p : ps) {
                if (static_cast<int>(x) < p.x0 || static_cast<int>(x) > p.x1 ||
                    static_cast<int>(y) < p.y0 || static_cast<int>(y) > p.y1)
                    continue;
                if (t < cfg.transmittance_stop) break;
                Vec2 d(x - p.pg.mean2d.x(), y - p.pg.mean2d.y());
                double q = d.dot(p.pg.cov2d.inverse() * d);
                double alpha = std::min(p.opacity * std::exp(-0.5 * q), cfg.alpha_clamp);
                c += p.color * (alpha * t);
                wsum += alpha * t;
                t *= 1.0 - alpha;
            }
            c += t * cfg.background;
            for (int ch = 0; ch < 3; ++ch) out.color.at(x, y, ch) = c[ch];
            size_t px = static_cast<size_t>(y) * cam.width + x;
            out.transmittance[px] = t;
            out.weight_sum[px] = wsum;
        }
    }
    return out;
}

} // namespace

TEST_CASE("on-axis projection lands on the principal point") {
    CameraView cam = axis_camera(100, 32, 64);
    auto p = project_gaussian(Vec3(0, 0, 5), Mat3::Identity(), cam);
    REQUIRE(p.has_value());
    CHECK(p->mean2d == Vec2(32, 32));
    CHECK(p->depth == 5.0);
    // J = diag(fx/z, fy/z) on axis: cov2d = (100/5)^2 I + dilation.
    CHECK(p->cov2d(0, 0) == doctest::Approx(400.3).epsilon(1e-12));
    CHECK(p->cov2d(1, 1) == doctest::Approx(400.3).epsilon(1e-12));
    CHECK(p->cov2d(0, 1) == 0.0);
}

TEST_CASE("points at or behind the near plane are culled") {
    CameraView cam = axis_camera(100, 32, 64);
    CHECK_FALSE(project_gaussian(Vec3(0, 0, -1), Mat3::Identity(), cam).has_value());
    CHECK_FALSE(project_gaussian(Vec3(0, 0, 0.005), Mat3::Identity(), cam).has_value());
    CHECK(project_gaussian(Vec3(0, 0, 0.02), 1e-6 * Mat3::Identity(), cam).has_value());
}

TEST_CASE("footprints that miss every pixel are culled") {
    CameraView cam = axis_camera(100, 32, 64);
    // Projects to x = 100*40/5 + 32 = 832, far outside a 64px image.
    CHECK_FALSE(project_gaussian(Vec3(40, 0, 5), 0.01 * Mat3::Identity(), cam).has_value());
}

TEST_CASE("projected covariance matches a finite-difference jacobian") {
    CameraView cam = test_camera(48);
    Rng rng(31);
    RenderConfig cfg;
    for (int trial = 0; trial < 12; ++trial) {
        Vec3 pos(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        Mat3 sigma = covariance_from_params(rng.random_unit_quat(),
                                            Vec3(rng.uniform(-2, -0.5), rng.uniform(-2, -0.5),
                                                 rng.uniform(-2, -0.5)));
        auto p = project_gaussian(pos, sigma, cam, cfg);
        if (!p) continue;
        const Vec3 p_cam = cam.to_camera(pos);
        const double h = 1e-6;
        Mat23 j_fd;
        for (int k = 0; k < 3; ++k) {
            Vec3 e = Vec3::Zero();
            e[k] = h;
            Vec2 hi = cam.project(p_cam + e);
            Vec2 lo = cam.project(p_cam - e);
            j_fd.col(k) = (hi - lo) / (2 * h);
        }
        Mat23 a = j_fd * cam.rotation;
        Mat2 ref = a * sigma * a.transpose() + cfg.dilation * Mat2::Identity();
        CHECK((p->cov2d - ref).cwiseAbs().maxCoeff() < 1e-5 * ref.norm());
    }
}

TEST_CASE("empty cloud renders the background with full transmittance") {
    CameraView cam = axis_camera(50, 8, 16);
    RenderConfig cfg;
    cfg.background = Vec3(0.1, 0.2, 0.3);
    RenderOutput out = render(GaussianCloud(kFeatureDimDeg0), cam, cfg);
    for (uint32_t y = 0; y < 16; ++y)
        for (uint32_t x = 0; x < 16; ++x)
            for (int ch = 0; ch < 3; ++ch)
                CHECK(out.color.at(x, y, ch) == cfg.background[ch]);
    for (double t : out.transmittance) CHECK(t == 1.0);
    for (uint32_t n : out.contributors) CHECK(n == 0);
}

TEST_CASE("single centered splat composites opacity times color") {
    CameraView cam = axis_camera(100, 8, 17);
    GaussianCloud c(kFeatureDimDeg0);
    Vec3 rgb(0.9, 0.5, 0.25);
    c.push_back(splat_at(1, Vec3(0, 0, 5), rgb, 0.8));
    RenderOutput out = render(c, cam);
    size_t px = 8 * 17 + 8;
    // At the exact center d = 0, so alpha = opacity.
    for (int ch = 0; ch < 3; ++ch)
        CHECK(out.color.at(8, 8, ch) == doctest::Approx(0.8 * rgb[ch]).epsilon(1e-12));
    CHECK(out.transmittance[px] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(out.contributors[px] >= 1);
}

TEST_CASE("per-sample alpha is clamped") {
    CameraView cam = axis_camera(100, 8, 17);
    GaussianCloud c(kFeatureDimDeg0);
    c.push_back(splat_at(1, Vec3(0, 0, 5), Vec3(kSh0, kSh0, kSh0) * (1.0 / kSh0), 0.9999));
    RenderConfig cfg;
    RenderOutput out = render(c, cam, cfg);
    // alpha capped at 0.99 even though opacity*weight is larger.
    CHECK(out.color.at(8, 8, 0) == doctest::Approx(0.99).epsilon(1e-10));
    CHECK(out.transmittance[8 * 17 + 8] == doctest::Approx(0.01).epsilon(1e-8));
}

TEST_CASE("renderer matches the brute-force compositor") {
    GaussianCloud c = random_cloud(24, 77);
    CameraView cam = test_camera(24);
    RenderConfig cfg;
    cfg.background = Vec3(0.2, 0.1, 0.05);
    RenderOutput got = render(c, cam, cfg);
    OracleOut want = oracle_render(c, cam, cfg);
    double max_diff = 0;
    for (size_t i = 0; i < got.color.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(got.color.data[i] - want.color.data[i]));
    CHECK(max_diff < 1e-10);
    for (size_t i = 0; i < got.transmittance.size(); ++i)
        CHECK(got.transmittance[i] == doctest::Approx(want.transmittance[i]).epsilon(1e-10));
}

TEST_CASE("composited weights plus final transmittance account for one") {
    GaussianCloud c = random_cloud(30, 78);
    CameraView cam = test_camera(20);
    RenderConfig cfg;
    RenderOutput got = render(c, cam, cfg);
    OracleOut want = oracle_render(c, cam, cfg);
    for (size_t i = 0; i < want.weight_sum.size(); ++i) {
        CHECK(std::abs(want.weight_sum[i] + want.transmittance[i] - 1.0) < 1e-12);
        CHECK(got.transmittance[i] >= 0.0);
        CHECK(got.transmittance[i] <= 1.0);
    }
}

TEST_CASE("equal-depth splats composite by index, deterministically") {
    CameraView cam = axis_camera(100, 8, 17);
    GaussianCloud c(kFeatureDimDeg0);
    Vec3 red(0.8, 0, 0), blue(0, 0, 0.8);
    c.push_back(splat_at(1, Vec3(0, 0, 5), red, 0.5));
    c.push_back(splat_at(2, Vec3(0, 0, 5), blue, 0.5));
    RenderOutput a = render(c, cam);
    RenderOutput b = render(c, cam);
    CHECK(std::memcmp(a.color.data.data(), b.color.data.data(),
                      a.color.data.size() * sizeof(double)) == 0);
    // Lower index in front: red at full 0.5, blue attenuated to 0.25.
    CHECK(a.color.at(8, 8, 0) == doctest::Approx(0.5 * 0.8).epsilon(1e-12));
    CHECK(a.color.at(8, 8, 2) == doctest::Approx(0.25 * 0.8).epsilon(1e-12));
}

TEST_CASE("compositing stops once transmittance is exhausted") {
    CameraView cam = axis_camera(100, 8, 17);
    GaussianCloud c(kFeatureDimDeg0);
    for (int i = 0; i < 10; ++i)
        c.push_back(splat_at(static_cast<uint64_t>(i + 1), Vec3(0, 0, 4 + 0.2 * i),
                             Vec3(0.5, 0.5, 0.5), 0.9999));
    RenderOutput out = render(c, cam);
    size_t px = 8 * 17 + 8;
    CHECK(out.contributors[px] == 3);  // T: 1 -> 0.01 -> 1e-4 -> break after third
    CHECK(out.transmittance[px] < 1e-4);
}

TEST_CASE("loss is zero for identical images and l1 for lambda zero") {
    Image a(16, 16, 0.2), b(16, 16, 0.7);
    CHECK(loss_value(a, a, 0.2) == 0.0);
    CHECK(loss_value(a, b, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
    Image m(16, 15);
    CHECK_THROWS_AS(loss_value(a, m, 0.2), InvalidArgument);
}

TEST_CASE("loss combines l1 and ssim with the structural weight") {
    GaussianCloud c = random_cloud(10, 80);
    CameraView cam = test_camera(16);
    Image gt(16, 16, 0.4);
    Image rendered = render(c, cam).color;
    double l1 = 0;
    for (size_t i = 0; i < rendered.data.size(); ++i) l1 += std::abs(rendered.data[i] - gt.data[i]);
    l1 /= static_cast<double>(rendered.data.size());
    double expect = l1 + 0.2 * (1.0 - ssim(rendered, gt));
    CHECK(loss_value(rendered, gt, 0.2) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("render_backward forward pass matches render") {
    GaussianCloud c = random_cloud(12, 81);
    CameraView cam = test_camera(16);
    Image gt(16, 16, 0.3);
    BackwardOutput bw = render_backward(c, cam, gt);
    RenderOutput fw = render(c, cam);
    CHECK(std::memcmp(bw.rendered.data.data(), fw.color.data.data(),
                      fw.color.data.size() * sizeof(double)) == 0);
    CHECK(bw.loss == doctest::Approx(loss_value(fw.color, gt, 0.2)).epsilon(1e-12));
    CHECK(bw.loss == doctest::Approx(bw.l1 + 0.2 * (1.0 - bw.ssim)).epsilon(1e-12));
}

TEST_CASE("gradients vanish when rendering matches ground truth") {
    GaussianCloud c = random_cloud(8, 82);
    CameraView cam = test_camera(16);
    Image gt = render(c, cam).color;
    BackwardOutput bw = render_backward(c, cam, gt);
    CHECK(bw.loss < 1e-12);
    auto all_small = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    };
    CHECK(all_small(bw.grads.positions) < 1e-10);
    CHECK(all_small(bw.grads.rotations) < 1e-10);
    CHECK(all_small(bw.grads.log_scales) < 1e-10);
    CHECK(all_small(bw.grads.features) < 1e-10);
    CHECK(all_small(bw.grads.opacity_logits) < 1e-10);
}

TEST_CASE("analytic gradients match finite differences") {
    GaussianCloud c = random_cloud(3, 83);
    CameraView cam = test_camera(12);
    Image gt(12, 12);
    Rng grng(84);
    for (double& v : gt.data) v = grng.uniform();
    RenderConfig cfg;
    BackwardOutput bw = render_backward(c, cam, gt, cfg);

    auto fd_loss = [&](GaussianCloud& cloud) {
        return loss_value(render(cloud, cam, cfg).color, gt, cfg.lambda);
    };
    const double h = 1e-5;
    auto check_param = [&](std::vector<double>& arr, const std::vector<double>& grad, size_t idx) {
        GaussianCloud cp = c;
        std::vector<double>* target = nullptr;
        if (&arr == &c.positions) target = &cp.positions;
        else if (&arr == &c.rotations) target = &cp.rotations;
        else if (&arr == &c.log_scales) target = &cp.log_scales;
        else if (&arr == &c.features) target = &cp.features;
        else target = &cp.opacity_logits;
        (*target)[idx] += h;
        double up = fd_loss(cp);
        (*target)[idx] -= 2 * h;
        double down = fd_loss(cp);
        double fd = (up - down) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
        CHECK(std::abs(fd - grad[idx]) / denom < 1e-3);
    };

    for (size_t i = 0; i < c.size(); ++i) {
        for (int k = 0; k < 3; ++k) check_param(c.positions, bw.grads.positions, 3 * i + k);
        for (int k = 0; k < 4; ++k) check_param(c.rotations, bw.grads.rotations, 4 * i + k);
        for (int k = 0; k < 3; ++k) check_param(c.log_scales, bw.grads.log_scales, 3 * i + k);
        for (int k = 0; k < 3; ++k) check_param(c.features, bw.grads.features, 3 * i + k);
        check_param(c.opacity_logits, bw.grads.opacity_logits, i);
    }
}

TEST_CASE("culled gaussians report invisible with zero gradients") {
    CameraView cam = axis_camera(100, 8, 17);
    GaussianCloud c(kFeatureDimDeg0);
    c.push_back(splat_at(1, Vec3(0, 0, 5), Vec3(0.5, 0.5, 0.5), 0.7));
    c.push_back(splat_at(2, Vec3(0, 0, -5), Vec3(0.5, 0.5, 0.5), 0.7));  // behind camera
    Image gt(17, 17, 0.9);
    BackwardOutput bw = render_backward(c, cam, gt);
    CHECK(bw.visible[0] == 1);
    CHECK(bw.visible[1] == 0);
    CHECK(bw.screen_grad_norm[0] > 0.0);
    CHECK(bw.screen_grad_norm[1] == 0.0);
    for (int k = 0; k < 3; ++k) CHECK(bw.grads.positions[3 + k] == 0.0);
    CHECK(bw.grads.opacity_logits[1] == 0.0);
    CHECK(bw.grads.opacity_logits[0] != 0.0);
}
