#pragma once

#include <cstdint>

#include "blocksplat/renderer.hpp"
#include "blocksplat/scene.hpp"

namespace blocksplat {

// Procedural test scene: Gaussian blobs in a flat box (wide on the ground
// axes, a tenth as tall), cameras on a tilted orbit looking at the origin,
// ground-truth renders as training images, and a noisy half-density point
// sample standing in for a sparse reconstruction.
struct SynthConfig {
    uint64_t seed = 0;
    uint32_t gaussians = 200;
    uint32_t cameras = 24;
    uint32_t image_size = 96;
    double extent = 10.0; // ground-axis width of the box
    int sh_degree = 0;
    RenderConfig render;
};

struct SynthScene {
    LoadedScene scene;
    GaussianCloud ground_truth;
};

SynthScene generate_scene(const SynthConfig& cfg);

} // namespace blocksplat
