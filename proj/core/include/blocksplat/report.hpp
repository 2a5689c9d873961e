#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blocksplat/runtime.hpp"

namespace blocksplat {

// One completed training run as persisted on disk: run.json next to a
// diagnostics.jsonl and a model checkpoint.
struct RunRecord {
    std::string name;
    std::string mode; // centralized | simulated | sockets
    uint32_t blocks = 1;
    double expand_scale = 1.0;
    double alpha = 1.0;
    bool adaptive = false;
    bool consensus = false;
    double psnr = 0;
    double ssim = 0;
    double train_seconds = 0;
    uint64_t gaussians = 0;
    uint32_t holdout_modulus = 8;
    std::string scene_path; // empty disables the image strip
    std::string model_path;
    std::vector<RoundDiagnostics> rounds;
};

RunRecord load_run_record(const std::string& run_dir);

// One row per run in input order: mode, blocks, expansion, relaxation,
// adaptive and consensus switches, metrics, time, model size.
std::string summary_csv(const std::vector<RunRecord>& runs);

// Per-round residual curves for one run.
std::string residual_csv(const RunRecord& run);

// Scans runs_root for directories containing run.json (sorted by name) and
// writes summary.csv, residuals_<name>.csv, and strip_<name>.ppm (rendered
// holdout views beside ground truth) into out_dir. Returns the run count.
// Throws std::runtime_error("no runs found") when nothing qualifies.
size_t generate_report(const std::string& runs_root, const std::string& out_dir);

} // namespace blocksplat
