#include "blocksplat/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blocksplat/errors.hpp"
#include "blocksplat/metrics.hpp"

namespace blocksplat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string fmt(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

// g-style shortest form keeps 1.4 as "1.4" rather than "1.400000".
std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// Rendered view beside its ground truth, views stacked vertically.
Image build_strip(const std::vector<Image>& rendered, const std::vector<Image>& truth) {
    const uint32_t w = rendered.front().width;
    const uint32_t h = rendered.front().height;
    Image strip(2 * w, h * static_cast<uint32_t>(rendered.size()));
    for (size_t v = 0; v < rendered.size(); ++v) {
        for (uint32_t y = 0; y < h; ++y) {
            for (uint32_t x = 0; x < w; ++x) {
                for (int c = 0; c < 3; ++c) {
                    strip.at(x, static_cast<uint32_t>(v) * h + y, c) = rendered[v].at(x, y, c);
                    strip.at(w + x, static_cast<uint32_t>(v) * h + y, c) = truth[v].at(x, y, c);
                }
            }
        }
    }
    return strip;
}

} // namespace

RunRecord load_run_record(const std::string& run_dir) {
    const fs::path dir(run_dir);
    const json j = json::parse(read_text((dir / "run.json").string()));
    RunRecord rec;
    rec.name = j.value("name", dir.filename().string());
    rec.mode = j.value("mode", "centralized");
    rec.blocks = j.value("blocks", 1u);
    rec.expand_scale = j.value("expand_scale", 1.0);
    rec.alpha = j.value("alpha", 1.0);
    rec.adaptive = j.value("adaptive", false);
    rec.consensus = j.value("consensus", false);
    rec.psnr = j.value("psnr", 0.0);
    rec.ssim = j.value("ssim", 0.0);
    rec.train_seconds = j.value("train_seconds", 0.0);
    rec.gaussians = j.value("gaussians", static_cast<uint64_t>(0));
    rec.holdout_modulus = j.value("holdout_modulus", 8u);
    rec.scene_path = j.value("scene", std::string());
    rec.model_path = j.value("model", std::string());
    if (!rec.model_path.empty() && fs::path(rec.model_path).is_relative())
        rec.model_path = (dir / rec.model_path).string();

    const fs::path diag = dir / "diagnostics.jsonl";
    if (fs::exists(diag)) {
        std::istringstream lines(read_text(diag.string()));
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            const json d = json::parse(line);
            RoundDiagnostics row;
            row.iteration = d.value("iteration", static_cast<uint64_t>(0));
            row.primal_residual = d.value("primal", 0.0);
            row.dual_residual = d.value("dual", 0.0);
            row.rho.rho_p = d.value("rho_p", 0.0);
            row.rho.rho_q = d.value("rho_q", 0.0);
            row.rho.rho_s = d.value("rho_s", 0.0);
            row.rho.rho_f = d.value("rho_f", 0.0);
            row.rho.rho_o = d.value("rho_o", 0.0);
            row.max_disagreement = d.value("max_disagreement", 0.0);
            row.dual_mean_linf = d.value("dual_mean_linf", 0.0);
            row.mean_loss = d.value("mean_loss", 0.0);
            row.shared_count = d.value("shared", static_cast<size_t>(0));
            row.global_count = d.value("global", static_cast<size_t>(0));
            rec.rounds.push_back(row);
        }
    }
    return rec;
}

std::string summary_csv(const std::vector<RunRecord>& runs) {
    std::ostringstream out;
    out << "mode,K,s,alpha,adaptive,consensus,psnr,ssim,time_s,points\n";
    for (const RunRecord& r : runs) {
        out << r.mode << ',' << r.blocks << ',' << fmt_g(r.expand_scale) << ','
            << fmt_g(r.alpha) << ',' << (r.adaptive ? "on" : "off") << ','
            << (r.consensus ? "on" : "off") << ',' << fmt(r.psnr, 4) << ',' << fmt(r.ssim, 4)
            << ',' << fmt(r.train_seconds, 3) << ',' << r.gaussians << '\n';
    }
    return out.str();
}

std::string residual_csv(const RunRecord& run) {
    std::ostringstream out;
    out << "iteration,primal,dual,rho_p,rho_q,rho_s,rho_f,rho_o,max_disagreement,"
           "dual_mean_linf,mean_loss,shared,global\n";
    for (const RoundDiagnostics& d : run.rounds) {
        out << d.iteration << ',' << fmt_g(d.primal_residual) << ',' << fmt_g(d.dual_residual)
            << ',' << fmt_g(d.rho.rho_p) << ',' << fmt_g(d.rho.rho_q) << ','
            << fmt_g(d.rho.rho_s) << ',' << fmt_g(d.rho.rho_f) << ',' << fmt_g(d.rho.rho_o)
            << ',' << fmt_g(d.max_disagreement) << ',' << fmt_g(d.dual_mean_linf) << ','
            << fmt_g(d.mean_loss) << ',' << d.shared_count << ',' << d.global_count << '\n';
    }
    return out.str();
}

size_t generate_report(const std::string& runs_root, const std::string& out_dir) {
    if (!fs::is_directory(runs_root)) throw std::runtime_error("no runs found");
    std::vector<std::string> run_dirs;
    for (const auto& entry : fs::directory_iterator(runs_root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "run.json"))
            run_dirs.push_back(entry.path().string());
    }
    if (run_dirs.empty()) throw std::runtime_error("no runs found");
    std::sort(run_dirs.begin(), run_dirs.end());

    std::vector<RunRecord> runs;
    runs.reserve(run_dirs.size());
    for (const std::string& dir : run_dirs) runs.push_back(load_run_record(dir));

    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "summary.csv").string(), summary_csv(runs));
    for (const RunRecord& run : runs) {
        write_text((fs::path(out_dir) / ("residuals_" + run.name + ".csv")).string(),
                   residual_csv(run));
        if (run.scene_path.empty() || run.model_path.empty()) continue;
        if (!fs::exists(run.scene_path) || !fs::exists(run.model_path)) continue;
        const LoadedScene scene = load_scene_bundle(run.scene_path);
        const SceneDataset model_file = load_scene(run.model_path);
        if (!model_file.has_checkpoint) continue;
        std::vector<Image> rendered, truth;
        for (size_t i = 0; i < scene.dataset.views.size(); ++i) {
            if (run.holdout_modulus != 0 && i % run.holdout_modulus != 0) continue;
            rendered.push_back(render(model_file.checkpoint, scene.dataset.views[i], {}).color);
            truth.push_back(scene.images[i]);
        }
        if (rendered.empty()) continue;
        save_ppm((fs::path(out_dir) / ("strip_" + run.name + ".ppm")).string(),
                 build_strip(rendered, truth));
    }
    return runs.size();
}

} // namespace blocksplat
