#pragma once

#include <array>

#include "blocksplat/image.hpp"

namespace blocksplat {

// 11x11 Gaussian window, sigma 1.5, normalized to sum 1. Only windows fully
// inside both images count (valid-region convention); images smaller than
// the window have no valid windows and score 1 with zero gradient.
inline constexpr int kSsimWindow = 11;

std::array<double, kSsimWindow> ssim_window_1d();

// Mean SSIM over channels and valid window positions.
double ssim(const Image& x, const Image& y);

// Mean SSIM plus its gradient with respect to x. `dx` is resized to match x.
double ssim_with_gradient(const Image& x, const Image& y, Image& dx);

} // namespace blocksplat
