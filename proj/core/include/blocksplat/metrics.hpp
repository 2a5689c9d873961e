#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blocksplat/cloud.hpp"
#include "blocksplat/renderer.hpp"
#include "blocksplat/scene.hpp"

namespace blocksplat {

// 10 log10(1 / mse) over all channels, capped at 99 dB (identical images
// would otherwise be infinite).
double psnr(const Image& a, const Image& b);

struct ViewMetrics {
    uint64_t view_id = 0;
    double psnr = 0;
    double ssim = 0;
};

struct MetricsReport {
    std::vector<ViewMetrics> per_view;
    double mean_psnr = 0;
    double mean_ssim = 0;
    size_t gaussian_count = 0;
    double train_seconds = 0;  // filled by the caller that timed the run
    long peak_rss_kb = 0;      // best-effort probe, approximate
    std::string config_echo;   // the configuration the run was launched with
};

// Renders the model at every holdout view (index % holdout_modulus == 0;
// 0 evaluates every view) and scores it against the stored image. Throws
// InvalidArgument("empty holdout") when no view qualifies.
MetricsReport evaluate(const GaussianCloud& model, const LoadedScene& scene,
                       uint32_t holdout_modulus, const RenderConfig& rc = {});

// Peak resident set size of this process in kilobytes, 0 if unavailable.
long peak_rss_kb();

std::string metrics_to_json(const MetricsReport& report);

} // namespace blocksplat
