#include "blocksplat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blocksplat/errors.hpp"
#include "blocksplat/image.hpp"
#include "blocksplat/math.hpp"

namespace blocksplat {

SynthScene generate_scene(const SynthConfig& cfg) {
    if (cfg.gaussians == 0) throw InvalidArgument("zero gaussians");
    if (cfg.cameras == 0) throw InvalidArgument("zero cameras");
    Rng rng(cfg.seed);

    const int feature_dim = cfg.sh_degree >= 1 ? kFeatureDimDeg1 : kFeatureDimDeg0;
    const double half = 0.5 * cfg.extent;

    SynthScene out;
    GaussianCloud& gt = out.ground_truth;
    gt = GaussianCloud(feature_dim);
    for (uint32_t i = 0; i < cfg.gaussians; ++i) {
        GaussianPrimitive g;
        g.id = i;
        g.position = Vec3(rng.uniform(-half, half), rng.uniform(-half / 5.0, half / 5.0),
                          rng.uniform(-half, half));
        g.rotation = rng.random_unit_quat();
        const double radius = cfg.extent * rng.uniform(0.015, 0.05);
        g.log_scale = Vec3::Constant(std::log(radius));
        g.features.assign(feature_dim, 0.0);
        for (int c = 0; c < 3; ++c) g.features[c] = rng.uniform(0.05, 0.95) / kSh0;
        if (feature_dim > kFeatureDimDeg0)
            for (int k = kFeatureDimDeg0; k < feature_dim; ++k)
                g.features[k] = 0.1 * rng.normal();
        g.opacity_logit = logit(rng.uniform(0.4, 0.9));
        gt.push_back(g);
    }

    // Tilted orbit: radius clear of the box, height giving a downward view.
    const double orbit_radius = 0.8 * cfg.extent;
    const double orbit_height = 0.5 * cfg.extent;
    const double focal = 0.8 * cfg.image_size;
    const double center = 0.5 * cfg.image_size;
    for (uint32_t i = 0; i < cfg.cameras; ++i) {
        const double angle = 2.0 * M_PI * static_cast<double>(i) / cfg.cameras;
        const Vec3 position(orbit_radius * std::cos(angle), orbit_height,
                            orbit_radius * std::sin(angle));
        CameraView cam = look_at(position, Vec3::Zero(), Vec3(0, 1, 0), focal, focal, center,
                                 center, cfg.image_size, cfg.image_size);
        cam.view_id = i;
        out.scene.dataset.views.push_back(cam);
        out.scene.images.push_back(render(gt, cam, cfg.render).color);
    }

    // Half the blobs, jittered, as the stand-in sparse reconstruction.
    std::vector<size_t> order(cfg.gaussians);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const size_t keep = (cfg.gaussians + 1) / 2;
    order.resize(keep);
    std::sort(order.begin(), order.end());
    const double jitter = 0.02 * cfg.extent;
    for (size_t idx : order) {
        ScenePoint p;
        const Vec3 noisy = gt.position(idx) +
                           jitter * Vec3(rng.normal(), rng.normal(), rng.normal());
        p.position = noisy.cast<float>();
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(kSh0 * gt.features[idx * feature_dim + c], 0.0, 1.0);
            p.rgb[c] = static_cast<uint8_t>(std::lround(255.0 * v));
        }
        out.scene.dataset.points.push_back(p);
    }
    return out;
}

} // namespace blocksplat
