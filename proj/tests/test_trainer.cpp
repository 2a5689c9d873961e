#include <doctest.h>

#include <cmath>
#include <vector>

#include "blocksplat/errors.hpp"
#include "blocksplat/synth.hpp"
#include "blocksplat/trainer.hpp"

using namespace blocksplat;

namespace {

// Independent 3-nearest-neighbor mean distance. Differences are taken in
// f32 like the stored points, square roots in double.
double knn3_mean(const std::vector<ScenePoint>& pts, size_t i) {
    std::vector<double> d;
    for (size_t j = 0; j < pts.size(); ++j)
        if (j != i)
            d.push_back(std::sqrt(
                static_cast<double>((pts[j].position - pts[i].position).squaredNorm())));
    std::sort(d.begin(), d.end());
    if (d.empty()) return 0.1;
    double sum = 0;
    size_t n = std::min<size_t>(3, d.size());
    for (size_t k = 0; k < n; ++k) sum += d[k];
    return std::max(sum / static_cast<double>(n), 1e-6);
}

std::vector<ScenePoint> sample_points(int n, uint64_t seed) {
    std::vector<ScenePoint> pts;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        ScenePoint p;
        p.position = Eigen::Vector3f(static_cast<float>(rng.uniform(-3, 3)),
                                     static_cast<float>(rng.uniform(-0.5, 0.5)),
                                     static_cast<float>(rng.uniform(-3, 3)));
        p.rgb = {static_cast<uint8_t>(rng.uniform_index(256)),
                 static_cast<uint8_t>(rng.uniform_index(256)),
                 static_cast<uint8_t>(rng.uniform_index(256))};
        pts.push_back(p);
    }
    return pts;
}

// Cloud of n gaussians with chosen log-scale, spread along x so the scene
// extent is well defined.
GaussianCloud spread_cloud(int n, double log_scale, double opacity0 = 0.5) {
    GaussianCloud c(kFeatureDimDeg0);
    for (int i = 0; i < n; ++i) {
        GaussianPrimitive g;
        g.id = static_cast<uint64_t>(i);
        g.position = Vec3(i * 5.0 - 2.5 * (n - 1), 0, 5);
        g.log_scale = Vec3::Constant(log_scale);
        g.features = {1.5, 1.0, 0.5};
        g.opacity_logit = logit(i == 0 ? opacity0 : 0.5);
        c.push_back(g);
    }
    return c;
}

struct ViewHolder {
    Image img;
    std::vector<TrainView> views;

    ViewHolder(uint32_t size, double fill, double f, const Vec3& from) : img(size, size, fill) {
        CameraView cam = look_at(from, Vec3(0, 0, 5), Vec3(0, 1, 0), f, f, size / 2.0,
                                 size / 2.0, size, size);
        views.push_back({cam, &img});
    }
};

TrainerConfig quiet_config(uint64_t iterations) {
    TrainerConfig cfg;
    cfg.iterations = iterations;
    cfg.densify.enabled = false;
    return cfg;
}

} // namespace

TEST_CASE("init_cloud_from_points matches the knn oracle") {
    auto pts = sample_points(40, 50);
    GaussianCloud c = init_cloud_from_points(pts, 0, 0.1);
    REQUIRE(c.size() == 40);
    CHECK(c.feature_dim() == kFeatureDimDeg0);
    for (size_t i = 0; i < c.size(); ++i) {
        CHECK(c.ids[i] == i);
        CHECK((c.position(i) - pts[i].position.cast<double>()).norm() == 0.0);
        CHECK(c.rotation(i) == Vec4(1, 0, 0, 0));
        double want = std::log(knn3_mean(pts, i));
        CHECK(c.log_scale(i)[0] == doctest::Approx(want).epsilon(1e-12));
        CHECK(c.log_scale(i)[1] == c.log_scale(i)[0]);
        for (int ch = 0; ch < 3; ++ch)
            CHECK(c.features[i * 3 + ch] ==
                  doctest::Approx((pts[i].rgb[ch] / 255.0) / kSh0).epsilon(1e-12));
        CHECK(c.opacity_logits[i] == doctest::Approx(logit(0.1)).epsilon(1e-12));
    }
    CHECK(init_cloud_from_points(pts, 1, 0.1).feature_dim() == kFeatureDimDeg1);
    CHECK_THROWS_AS(init_cloud_from_points({}, 0, 0.1), InvalidArgument);
}

TEST_CASE("id allocator hands out block-disjoint ranges") {
    IdAllocator a0 = IdAllocator::for_block(0, 1000);
    CHECK(a0.allocate() == 1000);
    CHECK(a0.allocate() == 1001);

    IdAllocator a2 = IdAllocator::for_block(2, 1000);
    CHECK(a2.allocate() == (2ull << 48));
    CHECK(a2.end == (3ull << 48));

    IdAllocator tiny = IdAllocator::for_block(1, 0);
    tiny.next = tiny.end - 1;
    CHECK(tiny.allocate() == tiny.end - 1);
    CHECK_THROWS_WITH(static_cast<void>(tiny.allocate()), "id allocator exhausted");
}

TEST_CASE("trainer constructor validates inputs") {
    GaussianCloud c = spread_cloud(2, -3.0);
    CHECK_THROWS_AS(BlockTrainer(0, c, {}, {}, 2, quiet_config(10)), InvalidArgument);
    GaussianCloud bad = c;
    std::swap(bad.ids[0], bad.ids[1]);
    ViewHolder vh(8, 0.0, 10, Vec3(0, 0, -5));
    CHECK_THROWS_AS(BlockTrainer(0, bad, vh.views, {}, 2, quiet_config(10)), InvalidArgument);
}

TEST_CASE("zero iterations leave the cloud untouched") {
    GaussianCloud c = spread_cloud(3, -2.0);
    ViewHolder vh(8, 0.0, 10, Vec3(0, 0, -5));
    BlockTrainer t(0, c, vh.views, {}, 3, quiet_config(10));
    t.run_iterations(0);
    CHECK(cloud_checksum(t.cloud()) == cloud_checksum(c));
    CHECK(t.iteration() == 0);
}

TEST_CASE("training descends on a toy scene") {
    SynthConfig sc;
    sc.seed = 3;
    sc.gaussians = 12;
    sc.cameras = 4;
    sc.image_size = 24;
    sc.extent = 4.0;
    SynthScene ss = generate_scene(sc);

    TrainerConfig cfg;
    cfg.iterations = 150;
    cfg.seed = 1;
    cfg.densify.interval = 60;

    GaussianCloud init = init_cloud_from_points(ss.scene.dataset.points, 0, cfg.init_opacity);
    std::vector<TrainView> views;
    for (size_t i = 0; i < ss.scene.dataset.views.size(); ++i)
        views.push_back({ss.scene.dataset.views[i], &ss.scene.images[i]});

    auto mean_loss = [&](const GaussianCloud& cloud) {
        double total = 0;
        for (const TrainView& v : views)
            total += loss_value(render(cloud, v.camera, cfg.render).color, *v.image,
                                cfg.render.lambda);
        return total / static_cast<double>(views.size());
    };

    double before = mean_loss(init);
    BlockTrainer t(0, init, views, {}, init.size(), cfg);
    t.run_iterations(cfg.iterations);
    double after = mean_loss(t.cloud());
    CHECK(after < 0.7 * before);
    CHECK(t.last_loss() > 0.0);
    CHECK(t.iteration() == 150);
}

TEST_CASE("training is deterministic for a fixed seed") {
    GaussianCloud c = spread_cloud(3, -1.5);
    ViewHolder vh(12, 0.4, 12, Vec3(0, 1, -4));
    TrainerConfig cfg = quiet_config(100);
    cfg.seed = 7;
    BlockTrainer a(0, c, vh.views, {}, 3, cfg);
    BlockTrainer b(0, c, vh.views, {}, 3, cfg);
    a.run_iterations(30);
    b.run_iterations(30);
    CHECK(cloud_checksum(a.cloud()) == cloud_checksum(b.cloud()));
    CHECK(a.last_loss() == b.last_loss());
}

TEST_CASE("densify prunes transparent gaussians") {
    GaussianCloud c = spread_cloud(2, -3.0, /*opacity0=*/0.001);
    ViewHolder vh(16, 0.0, 14, Vec3(0, 0, -4));
    TrainerConfig cfg;
    cfg.iterations = 100;
    cfg.densify.interval = 5;
    cfg.densify.grad_threshold = 1e9;  // isolate pruning
    BlockTrainer t(0, c, vh.views, {}, 2, cfg);
    t.run_iterations(5);
    CHECK(t.cloud().size() == 1);
    CHECK(t.cloud().ids == std::vector<uint64_t>{1});
    CHECK(t.take_removed_ids() == std::vector<uint64_t>{0});
    CHECK(t.take_new_rows().empty());
}

TEST_CASE("densify clones small high-gradient gaussians") {
    // Scene extent ~5 from two spread positions; scale e^-6 is far below the
    // 1% split threshold, so both clone.
    GaussianCloud c = spread_cloud(2, -6.0);
    ViewHolder vh(16, 0.9, 14, Vec3(0, 0, -4));
    TrainerConfig cfg;
    cfg.iterations = 100;
    cfg.densify.interval = 4;
    cfg.densify.grad_threshold = 0.0;
    BlockTrainer t(0, c, vh.views, {}, 2, cfg);
    t.run_iterations(4);
    CHECK(t.cloud().size() == 4);
    CHECK(t.take_removed_ids().empty());
    GaussianCloud rows = t.take_new_rows();
    CHECK(rows.ids == std::vector<uint64_t>{2, 3});
    // Parents survive a clone.
    CHECK(t.cloud().find(0) != GaussianCloud::npos);
    CHECK(t.cloud().find(1) != GaussianCloud::npos);
}

TEST_CASE("densify splits large gaussians and replaces the parent") {
    GaussianCloud c = spread_cloud(2, 0.0);  // scale 1 >> 1% of extent
    ViewHolder vh(16, 0.9, 14, Vec3(0, 0, -4));
    TrainerConfig cfg;
    cfg.iterations = 100;
    cfg.lr.log_scale = 0.0; // freeze scales so the shrink factor is exact
    cfg.densify.interval = 4;
    cfg.densify.grad_threshold = 0.0;
    BlockTrainer t(0, c, vh.views, {}, 2, cfg);
    t.run_iterations(4);
    CHECK(t.cloud().size() == 4);
    auto removed = t.take_removed_ids();
    CHECK(removed == std::vector<uint64_t>{0, 1});
    GaussianCloud rows = t.take_new_rows();
    CHECK(rows.ids == std::vector<uint64_t>{2, 3, 4, 5});
    // Children carry a shrunken scale.
    for (size_t i = 0; i < t.cloud().size(); ++i)
        CHECK(t.cloud().log_scale(i)[0] == doctest::Approx(0.0 - std::log(1.6)).epsilon(1e-9));
}

TEST_CASE("shared gaussians bud a child and keep their id") {
    GaussianCloud c = spread_cloud(2, 0.0);
    ViewHolder vh(16, 0.9, 14, Vec3(0, 0, -4));
    TrainerConfig cfg;
    cfg.iterations = 100;
    cfg.densify.interval = 4;
    cfg.densify.grad_threshold = 0.0;
    BlockTrainer t(0, c, vh.views, {0}, 2, cfg);
    t.run_iterations(4);
    // Gaussian 0 budded (kept + 1 child), gaussian 1 split (dropped + 2).
    CHECK(t.cloud().size() == 4);
    CHECK(t.cloud().find(0) != GaussianCloud::npos);
    CHECK(t.cloud().find(1) == GaussianCloud::npos);
    CHECK(t.take_removed_ids() == std::vector<uint64_t>{1});
    CHECK(t.take_new_rows().size() == 3);
    CHECK(t.shared_ids() == std::vector<uint64_t>{0});
}

TEST_CASE("pruning a shared gaussian also drops its consensus rows") {
    GaussianCloud c = spread_cloud(2, -3.0, /*opacity0=*/0.001);
    ViewHolder vh(16, 0.0, 14, Vec3(0, 0, -4));
    TrainerConfig cfg;
    cfg.iterations = 100;
    cfg.densify.interval = 5;
    cfg.densify.grad_threshold = 1e9;
    BlockTrainer t(0, c, vh.views, {0, 1}, 2, cfg);
    PropertyPenalties rho;
    t.set_anchor(slice_by_ids(c, {0, 1}), rho);
    CHECK(t.anchor().size() == 2);
    t.run_iterations(5);
    CHECK(t.shared_ids() == std::vector<uint64_t>{1});
    CHECK(t.anchor().ids == std::vector<uint64_t>{1});
    CHECK(t.duals().ids == std::vector<uint64_t>{1});
}

TEST_CASE("set_anchor installs zero duals; broadcasts update them") {
    GaussianCloud c = spread_cloud(3, -2.0);
    ViewHolder vh(8, 0.0, 10, Vec3(0, 0, -5));
    TrainerConfig cfg = quiet_config(100);
    BlockTrainer t(0, c, vh.views, {0, 1}, 3, cfg);
    PropertyPenalties rho;

    GaussianCloud z0 = slice_by_ids(c, {0, 1});
    for (double& v : z0.opacity_logits) v += 0.25;
    t.set_anchor(z0, rho);
    CHECK(t.anchor().ids == std::vector<uint64_t>{0, 1});
    for (double v : t.duals().opacity_logits) CHECK(v == 0.0);

    // Second broadcast: id 1 leaves the shared set; duals update against the
    // new z with alpha treated as 1 (plain x).
    GaussianCloud z1 = slice_by_ids(c, {0});
    for (double& v : z1.opacity_logits) v -= 0.5;
    t.apply_broadcast(z1, {}, {1}, rho, 1.0, false);
    CHECK(t.shared_ids() == std::vector<uint64_t>{0});
    CHECK(t.anchor().ids == std::vector<uint64_t>{0});
    REQUIRE(t.duals().ids == std::vector<uint64_t>{0});
    // u = 0 + x - z1 on every property; opacity slot: x0 - (x0 - 0.5).
    CHECK(t.duals().opacity_logits[0] == doctest::Approx(0.5).epsilon(1e-12));
    // Positions in z1 equal x, so the dual stays zero there.
    for (int k = 0; k < 3; ++k) CHECK(t.duals().positions[k] == 0.0);
    CHECK(cloud_checksum(t.anchor()) == cloud_checksum(z1));

    // Reset list zeroes the dual after the update.
    GaussianCloud z2 = z1;
    t.apply_broadcast(z2, {0}, {}, rho, 1.0, false);
    CHECK(t.duals().opacity_logits[0] == 0.0);
}

TEST_CASE("consensus penalty pulls an invisible gaussian toward the anchor") {
    // The gaussian sits behind the camera: rendering contributes nothing, so
    // any motion comes from the penalty alone.
    GaussianCloud c(kFeatureDimDeg0);
    GaussianPrimitive g;
    g.id = 0;
    g.position = Vec3(0, 0, -10);
    g.log_scale = Vec3::Constant(-1);
    g.features = {1, 1, 1};
    g.opacity_logit = 2.0;
    c.push_back(g);

    Image img(8, 8, 0.0);
    CameraView cam = look_at(Vec3(0, 0, 20), Vec3(0, 0, 25), Vec3(0, 1, 0), 10, 10, 4, 4, 8, 8);
    std::vector<TrainView> views = {{cam, &img}};

    TrainerConfig cfg = quiet_config(100);
    BlockTrainer t(0, c, views, {0}, 1, cfg);

    GaussianCloud z = c;
    z.opacity_logits[0] = -1.0;
    z.positions[0] = 1.0;
    PropertyPenalties rho;
    t.set_anchor(z, rho);

    double op_gap0 = std::abs(t.cloud().opacity_logits[0] - z.opacity_logits[0]);
    double pos_gap0 = std::abs(t.cloud().positions[0] - z.positions[0]);
    t.run_iterations(10);
    CHECK(std::abs(t.cloud().opacity_logits[0] - z.opacity_logits[0]) < op_gap0);
    CHECK(std::abs(t.cloud().positions[0] - z.positions[0]) < pos_gap0);
}

TEST_CASE("centralized training with zero iterations returns the init cloud") {
    auto pts = sample_points(10, 60);
    Image img(8, 8, 0.2);
    CameraView cam = look_at(Vec3(0, 1, -8), Vec3::Zero(), Vec3(0, 1, 0), 10, 10, 4, 4, 8, 8);
    std::vector<TrainView> views = {{cam, &img}};
    TrainerConfig cfg = quiet_config(0);
    GaussianCloud got = train_centralized(pts, views, cfg);
    GaussianCloud want = init_cloud_from_points(pts, 0, cfg.init_opacity);
    CHECK(cloud_checksum(got) == cloud_checksum(want));
}
