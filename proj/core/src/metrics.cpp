#include "blocksplat/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blocksplat/errors.hpp"
#include "blocksplat/ssim.hpp"

namespace blocksplat {

double psnr(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw InvalidArgument("image dimensions differ");
    if (a.data.empty()) throw InvalidArgument("empty image");
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.data.size());
    if (mse <= 0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

MetricsReport evaluate(const GaussianCloud& model, const LoadedScene& scene,
                       uint32_t holdout_modulus, const RenderConfig& rc) {
    MetricsReport report;
    report.gaussian_count = model.size();
    for (size_t i = 0; i < scene.dataset.views.size(); ++i) {
        if (holdout_modulus != 0 && i % holdout_modulus != 0) continue;
        const CameraView& view = scene.dataset.views[i];
        const RenderOutput out = render(model, view, rc);
        ViewMetrics vm;
        vm.view_id = view.view_id;
        vm.psnr = psnr(out.color, scene.images[i]);
        vm.ssim = ssim(out.color, scene.images[i]);
        report.per_view.push_back(vm);
    }
    if (report.per_view.empty()) throw InvalidArgument("empty holdout");
    for (const ViewMetrics& vm : report.per_view) {
        report.mean_psnr += vm.psnr;
        report.mean_ssim += vm.ssim;
    }
    report.mean_psnr /= static_cast<double>(report.per_view.size());
    report.mean_ssim /= static_cast<double>(report.per_view.size());
    report.peak_rss_kb = peak_rss_kb();
    return report;
}

long peak_rss_kb() {
    std::ifstream status("/proc/self/status");
    std::string line;
    while (std::getline(status, line)) {
        if (line.rfind("VmHWM:", 0) != 0) continue;
        std::istringstream fields(line.substr(6));
        long kb = 0;
        fields >> kb;
        return kb;
    }
    return 0;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["mean_psnr"] = report.mean_psnr;
    j["mean_ssim"] = report.mean_ssim;
    j["gaussians"] = report.gaussian_count;
    j["train_seconds"] = report.train_seconds;
    j["peak_rss_kb"] = report.peak_rss_kb;
    if (!report.config_echo.empty()) j["config"] = report.config_echo;
    auto& views = j["views"] = nlohmann::json::array();
    for (const ViewMetrics& vm : report.per_view) {
        views.push_back({{"view_id", vm.view_id}, {"psnr", vm.psnr}, {"ssim", vm.ssim}});
    }
    return j.dump(2);
}

} // namespace blocksplat
