#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "blocksplat/camera.hpp"
#include "blocksplat/cloud.hpp"
#include "blocksplat/image.hpp"

namespace blocksplat {

struct RenderConfig {
    double near_plane = 0.01;        // camera-space z cull threshold
    double dilation = 0.3;           // px^2 added to the 2D covariance diagonal
    double alpha_clamp = 0.99;       // per-sample alpha ceiling
    double transmittance_stop = 1e-4; // stop compositing once T drops below
    double sigma_extent = 3.0;       // footprint radius in projected sigmas
    Vec3 background = Vec3::Zero();
    double lambda = 0.2;             // structural term weight in the loss
};

struct ProjectedGaussian {
    Vec2 mean2d = Vec2::Zero();      // pixels
    Mat2 cov2d = Mat2::Identity();   // pixels^2, dilation included
    double depth = 0;                // camera-space z
    size_t gaussian_index = 0;
};

// Perspective projection of one Gaussian. Empty when the center is closer
// than the near plane or the sigma_extent footprint misses every pixel.
std::optional<ProjectedGaussian> project_gaussian(const Vec3& position, const Mat3& covariance,
                                                  const CameraView& cam,
                                                  const RenderConfig& cfg = {});
std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g,
                                                  const CameraView& cam,
                                                  const RenderConfig& cfg = {});

struct RenderOutput {
    Image color;
    std::vector<double> transmittance; // per pixel, row-major
    std::vector<uint32_t> contributors; // composited sample count per pixel
};

// Gradient arrays, same shapes as the cloud parameter arrays.
struct ParamGradients {
    std::vector<double> positions;
    std::vector<double> rotations;
    std::vector<double> log_scales;
    std::vector<double> features;
    std::vector<double> opacity_logits;

    void resize_for(const GaussianCloud& cloud);
};

struct BackwardOutput {
    double loss = 0;
    double l1 = 0;
    double ssim = 0;
    ParamGradients grads;
    // For densification bookkeeping: per-Gaussian norm of the screen-space
    // position gradient, in normalized device units (pixel gradient scaled
    // by half the image dimensions). Zero for culled Gaussians.
    std::vector<double> screen_grad_norm;
    std::vector<uint8_t> visible;
    Image rendered;
};

// Pixels sample Gaussians at integer coordinates; contributors composite
// front to back in (depth, id) order.
RenderOutput render(const GaussianCloud& cloud, const CameraView& cam,
                    const RenderConfig& cfg = {});

// Mean absolute error plus lambda times the structural dissimilarity
// (1 - SSIM). Throws InvalidArgument on dimension mismatch.
double loss_value(const Image& rendered, const Image& gt, double lambda);

// Renders, evaluates the loss against `gt`, and returns analytic gradients
// for every parameter of every visible Gaussian. Culled rows are zero.
BackwardOutput render_backward(const GaussianCloud& cloud, const CameraView& cam,
                               const Image& gt, const RenderConfig& cfg = {});

} // namespace blocksplat
