// Command-line front end: synthetic scene generation, partition inspection,
// training (single-process, simulated cluster, or real sockets), rendering,
// evaluation, and report assembly. Every subcommand prints one JSON summary
// line on success; failures land on stderr as {"error": ...} with exit 1.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "blocksplat/metrics.hpp"
#include "blocksplat/report.hpp"
#include "blocksplat/runtime.hpp"
#include "blocksplat/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blocksplat;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    return json::parse(in);
}

// Config file fills in only what the command line left untouched.
template <typename T>
void fill_unset(const CLI::App* cmd, const std::string& flag, const json& cfg, const char* key,
                T& var) {
    if (cmd->count(flag) == 0 && cfg.contains(key)) var = cfg.at(key).get<T>();
}

json box_json(const Aabb& b) {
    return json{{"min", {b.min.x(), b.min.y(), b.min.z()}},
                {"max", {b.max.x(), b.max.y(), b.max.z()}}};
}

// Top-down (ground-plane) sketch of the partition: expanded boxes filled,
// core boxes stroked, camera centers as dots.
std::string partition_svg(const BlockPartition& part, const std::vector<CameraView>& views,
                          int ground_a, int ground_b) {
    double lo_a = 0, hi_a = 0, lo_b = 0, hi_b = 0;
    bool first = true;
    auto grow = [&](double a, double b) {
        if (first) {
            lo_a = hi_a = a;
            lo_b = hi_b = b;
            first = false;
            return;
        }
        lo_a = std::min(lo_a, a);
        hi_a = std::max(hi_a, a);
        lo_b = std::min(lo_b, b);
        hi_b = std::max(hi_b, b);
    };
    for (const Aabb& e : part.expanded) {
        grow(e.min[ground_a], e.min[ground_b]);
        grow(e.max[ground_a], e.max[ground_b]);
    }
    for (const CameraView& v : views) {
        const Vec3 c = v.center();
        grow(c[ground_a], c[ground_b]);
    }
    const double span = std::max({hi_a - lo_a, hi_b - lo_b, 1e-9});
    const double scale = 760.0 / span;
    auto sx = [&](double a) { return 20.0 + (a - lo_a) * scale; };
    auto sy = [&](double b) { return 20.0 + (hi_b - b) * scale; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\">\n";
    svg << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
    const char* fills[] = {"#d6e6f5", "#d9f0d9", "#f5e3d6", "#eadbf2",
                           "#f2f0d0", "#d0eff2", "#f2d0dd", "#e0e0e0"};
    for (size_t i = 0; i < part.expanded.size(); ++i) {
        const Aabb& e = part.expanded[i];
        svg << "<rect x=\"" << sx(e.min[ground_a]) << "\" y=\"" << sy(e.max[ground_b])
            << "\" width=\"" << (e.max[ground_a] - e.min[ground_a]) * scale << "\" height=\""
            << (e.max[ground_b] - e.min[ground_b]) * scale << "\" fill=\"" << fills[i % 8]
            << "\" fill-opacity=\"0.5\" stroke=\"#8899aa\" stroke-dasharray=\"6 3\"/>\n";
    }
    for (size_t i = 0; i < part.core.size(); ++i) {
        const Aabb& c = part.core[i];
        svg << "<rect x=\"" << sx(c.min[ground_a]) << "\" y=\"" << sy(c.max[ground_b])
            << "\" width=\"" << (c.max[ground_a] - c.min[ground_a]) * scale << "\" height=\""
            << (c.max[ground_b] - c.min[ground_b]) * scale
            << "\" fill=\"none\" stroke=\"#336699\" stroke-width=\"2\"/>\n";
        const Vec3 mid = c.center();
        svg << "<text x=\"" << sx(mid[ground_a]) << "\" y=\"" << sy(mid[ground_b])
            << "\" font-size=\"20\" fill=\"#336699\" text-anchor=\"middle\">" << i
            << "</text>\n";
    }
    for (const CameraView& v : views) {
        const Vec3 c = v.center();
        svg << "<circle cx=\"" << sx(c[ground_a]) << "\" cy=\"" << sy(c[ground_b])
            << "\" r=\"4\" fill=\"#bb3333\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

struct GenArgs {
    std::string out;
    std::string config;
    uint64_t seed = 0;
    uint32_t gaussians = 200;
    uint32_t cameras = 24;
    uint32_t image_size = 96;
    double extent = 10.0;
    int sh_degree = 0;
    bool save_truth = false;
};

int run_gen(const CLI::App* cmd, GenArgs& a) {
    const json cfg = load_config(a.config);
    fill_unset(cmd, "--seed", cfg, "seed", a.seed);
    fill_unset(cmd, "--gaussians", cfg, "gaussians", a.gaussians);
    fill_unset(cmd, "--cameras", cfg, "cameras", a.cameras);
    fill_unset(cmd, "--image-size", cfg, "image_size", a.image_size);
    fill_unset(cmd, "--extent", cfg, "extent", a.extent);
    fill_unset(cmd, "--sh-degree", cfg, "sh_degree", a.sh_degree);

    SynthConfig sc;
    sc.seed = a.seed;
    sc.gaussians = a.gaussians;
    sc.cameras = a.cameras;
    sc.image_size = a.image_size;
    sc.extent = a.extent;
    sc.sh_degree = a.sh_degree;
    const SynthScene synth = generate_scene(sc);
    const std::string scene_path = save_scene_bundle(a.out, synth.scene);
    json summary{{"scene", scene_path},
                 {"views", synth.scene.dataset.views.size()},
                 {"points", synth.scene.dataset.points.size()}};
    if (a.save_truth) {
        SceneDataset truth;
        truth.has_checkpoint = true;
        truth.checkpoint = narrow_to_f32(synth.ground_truth);
        const std::string truth_path = (fs::path(a.out) / "truth.dogs").string();
        save_scene(truth_path, truth);
        summary["truth"] = truth_path;
        summary["truth_gaussians"] = synth.ground_truth.size();
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

struct SplitArgs {
    std::string scene;
    std::string config;
    std::string out;
    std::string svg;
    uint32_t blocks = 4;
    double expand_scale = 1.4;
};

int run_split(const CLI::App* cmd, SplitArgs& a) {
    const json cfg = load_config(a.config);
    fill_unset(cmd, "--blocks", cfg, "blocks", a.blocks);
    fill_unset(cmd, "--expand-scale", cfg, "expand_scale", a.expand_scale);

    const SceneDataset scene = load_scene(a.scene);
    std::vector<Vec3> positions;
    positions.reserve(scene.points.size());
    for (const ScenePoint& p : scene.points) positions.push_back(p.position.cast<double>());
    const std::vector<CoreBlock> cores = split_recursive(positions, a.blocks);
    const GaussianCloud cloud = init_cloud_from_points(scene.points, 0, 0.1);
    const BlockPartition part =
        expand_and_assign(cores, positions, scene.views, cloud, a.expand_scale);

    size_t owner_links = 0;
    for (const auto& [id, owners] : part.shared) owner_links += owners.size();

    json manifest{{"blocks", part.k},
                  {"expand_scale", a.expand_scale},
                  {"points", positions.size()},
                  {"views", scene.views.size()},
                  {"shared_gaussians", part.shared.size()},
                  {"mean_owners_per_shared",
                   part.shared.empty() ? 0.0
                                       : static_cast<double>(owner_links) /
                                             static_cast<double>(part.shared.size())}};
    json blocks = json::array();
    for (uint32_t b = 0; b < part.k; ++b) {
        json view_ids = json::array();
        for (size_t vi : part.block_views[b]) view_ids.push_back(scene.views[vi].view_id);
        blocks.push_back(json{{"id", b},
                              {"core", box_json(part.core[b])},
                              {"expanded", box_json(part.expanded[b])},
                              {"points", part.block_points[b].size()},
                              {"gaussians", part.block_gaussians[b].size()},
                              {"views", view_ids}});
    }
    manifest["block"] = blocks;

    if (!a.svg.empty()) {
        SplitOptions opts;
        const int ga = (opts.vertical_axis == 0) ? 1 : 0;
        const int gb = (opts.vertical_axis == 2) ? 1 : 2;
        write_text(a.svg, partition_svg(part, scene.views, ga, gb));
        manifest["svg"] = a.svg;
    }
    if (a.out.empty())
        std::cout << manifest.dump(2) << "\n";
    else {
        write_text(a.out, manifest.dump(2) + "\n");
        std::cout << json{{"manifest", a.out}, {"blocks", part.k}}.dump() << "\n";
    }
    return 0;
}

struct TrainArgs {
    std::string scene;
    std::string out;
    std::string name;
    std::string mode = "simulated";
    std::string config;
    std::string listen = "127.0.0.1:0";
    std::string join;
    int block = -1;
    uint32_t workers = 4;
    uint32_t interval = 100;
    uint32_t holdout = 8;
    uint32_t nonshared_refresh = 10;
    uint64_t iterations = 3000;
    uint64_t seed = 0;
    uint64_t timeout_ms = 600000;
    uint32_t densify_interval = 200;
    double expand_scale = 1.4;
    double alpha = 1.6;
    int sh_degree = 0;
    bool centralized = false;
    bool no_adaptive = false;
    bool no_consensus = false;
    bool no_densify = false;
};

int run_train(const CLI::App* cmd, TrainArgs& a) {
    const json cfg = load_config(a.config);
    fill_unset(cmd, "--mode", cfg, "mode", a.mode);
    fill_unset(cmd, "--workers", cfg, "workers", a.workers);
    fill_unset(cmd, "--iterations", cfg, "iterations", a.iterations);
    fill_unset(cmd, "--seed", cfg, "seed", a.seed);
    fill_unset(cmd, "--expand-scale", cfg, "expand_scale", a.expand_scale);
    fill_unset(cmd, "--alpha", cfg, "alpha", a.alpha);
    fill_unset(cmd, "--consensus-interval", cfg, "consensus_interval", a.interval);
    fill_unset(cmd, "--holdout", cfg, "holdout_modulus", a.holdout);
    fill_unset(cmd, "--sh-degree", cfg, "sh_degree", a.sh_degree);
    fill_unset(cmd, "--nonshared-refresh", cfg, "nonshared_refresh", a.nonshared_refresh);
    fill_unset(cmd, "--densify-interval", cfg, "densify_interval", a.densify_interval);
    fill_unset(cmd, "--timeout-ms", cfg, "timeout_ms", a.timeout_ms);
    fill_unset(cmd, "--no-adaptive", cfg, "no_adaptive", a.no_adaptive);
    fill_unset(cmd, "--no-consensus", cfg, "no_consensus", a.no_consensus);
    fill_unset(cmd, "--no-densify", cfg, "no_densify", a.no_densify);
    if (a.centralized) a.mode = "centralized";
    if (a.mode != "centralized" && a.mode != "simulated" && a.mode != "sockets")
        throw std::runtime_error("unknown mode: " + a.mode);

    TrainerConfig tcfg;
    tcfg.iterations = a.iterations;
    tcfg.seed = a.seed;
    tcfg.sh_degree = a.sh_degree;
    tcfg.densify.interval = a.densify_interval;
    tcfg.densify.enabled = !a.no_densify;

    SessionOptions opt;
    opt.total_iterations = a.iterations;
    opt.timeout_ms = a.timeout_ms;
    opt.nonshared_refresh = a.nonshared_refresh;
    opt.consensus.interval = a.interval;
    opt.consensus.alpha = a.alpha;
    opt.consensus.adaptive = !a.no_adaptive;
    opt.consensus.enabled = !a.no_consensus;

    const LoadedScene scene = load_scene_bundle(a.scene);

    // Worker end of a socket cluster: rebuild the same plan from the same
    // flags, serve one block, and exit without writing a run directory.
    if (!a.join.empty()) {
        if (a.mode != "sockets") throw std::runtime_error("--join requires --mode sockets");
        if (a.block < 0) throw std::runtime_error("--join requires --block");
        const ClusterPlan plan = plan_cluster(scene, a.workers, a.expand_scale, a.holdout, tcfg);
        const GaussianCloud local =
            run_socket_worker(a.join, plan, static_cast<uint32_t>(a.block), tcfg, opt);
        std::cout << json{{"block", a.block}, {"local_gaussians", local.size()}}.dump() << "\n";
        return 0;
    }

    if (a.out.empty()) throw std::runtime_error("train needs --out");
    fs::create_directories(a.out);
    if (a.name.empty()) a.name = fs::path(a.out).filename().string();

    std::ofstream diag(fs::path(a.out) / "diagnostics.jsonl", std::ios::binary);
    auto observer = [&](const RoundDiagnostics& d) {
        const json row{{"iteration", d.iteration},
                       {"primal", d.primal_residual},
                       {"dual", d.dual_residual},
                       {"rho_p", d.rho.rho_p},
                       {"rho_q", d.rho.rho_q},
                       {"rho_s", d.rho.rho_s},
                       {"rho_f", d.rho.rho_f},
                       {"rho_o", d.rho.rho_o},
                       {"max_disagreement", d.max_disagreement},
                       {"dual_mean_linf", d.dual_mean_linf},
                       {"mean_loss", d.mean_loss},
                       {"shared", d.shared_count},
                       {"global", d.global_count}};
        diag << row.dump() << "\n" << std::flush;
        std::cout << row.dump() << "\n";
    };

    GaussianCloud model;
    double wall = 0;
    uint32_t blocks_out = a.workers;
    if (a.mode == "centralized") {
        blocks_out = 1;
        std::vector<TrainView> views;
        for (size_t i = 0; i < scene.dataset.views.size(); ++i) {
            if (a.holdout != 0 && i % a.holdout == 0) continue;
            views.push_back({scene.dataset.views[i], &scene.images[i]});
        }
        const auto t0 = std::chrono::steady_clock::now();
        model = train_centralized(scene.dataset.points, views, tcfg);
        wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
        const ClusterPlan plan = plan_cluster(scene, a.workers, a.expand_scale, a.holdout, tcfg);
        RunResult result;
        if (a.mode == "simulated") {
            result = run_simulated(plan, tcfg, opt, observer);
        } else {
            ChannelListener listener(a.listen);
            std::cout << json{{"listening", listener.port()}}.dump() << "\n" << std::flush;
            result = run_socket_master(listener, plan, opt, observer);
        }
        model = std::move(result.model);
        wall = result.wall_seconds;
    }

    const MetricsReport metrics = evaluate(model, scene, a.holdout);
    SceneDataset checkpoint;
    checkpoint.has_checkpoint = true;
    checkpoint.checkpoint = narrow_to_f32(model);
    save_scene((fs::path(a.out) / "model.dogs").string(), checkpoint);

    const bool centralized = a.mode == "centralized";
    const json run{{"name", a.name},
                   {"mode", a.mode},
                   {"blocks", blocks_out},
                   {"expand_scale", centralized ? 1.0 : a.expand_scale},
                   {"alpha", centralized ? 1.0 : a.alpha},
                   {"adaptive", !centralized && !a.no_adaptive},
                   {"consensus", !centralized && !a.no_consensus},
                   {"psnr", metrics.mean_psnr},
                   {"ssim", metrics.mean_ssim},
                   {"train_seconds", wall},
                   {"gaussians", model.size()},
                   {"holdout_modulus", a.holdout},
                   {"scene", fs::absolute(a.scene).string()},
                   {"model", "model.dogs"}};
    write_text((fs::path(a.out) / "run.json").string(), run.dump(2) + "\n");

    std::cout << json{{"name", a.name},
                      {"mode", a.mode},
                      {"psnr", metrics.mean_psnr},
                      {"ssim", metrics.mean_ssim},
                      {"gaussians", model.size()},
                      {"train_seconds", wall},
                      {"out", a.out}}
                     .dump()
              << "\n";
    return 0;
}

struct RenderArgs {
    std::string model;
    std::string scene;
    std::string out;
    uint64_t view = 0;
};

int run_render(RenderArgs& a) {
    const SceneDataset model_file = load_scene(a.model);
    if (!model_file.has_checkpoint) throw std::runtime_error("model has no checkpoint");
    const SceneDataset scene = load_scene(a.scene);
    if (a.view >= scene.views.size())
        throw std::runtime_error("view " + std::to_string(a.view) + " out of range (scene has " +
                                 std::to_string(scene.views.size()) + ")");
    const RenderOutput out = render(model_file.checkpoint, scene.views[a.view]);
    save_ppm(a.out, out.color);
    std::cout << json{{"image", a.out},
                      {"view", a.view},
                      {"width", out.color.width},
                      {"height", out.color.height}}
                     .dump()
              << "\n";
    return 0;
}

struct EvalArgs {
    std::string model;
    std::string scene;
    std::string out;
    uint32_t holdout = 8;
};

int run_eval(EvalArgs& a) {
    const SceneDataset model_file = load_scene(a.model);
    if (!model_file.has_checkpoint) throw std::runtime_error("model has no checkpoint");
    const LoadedScene scene = load_scene_bundle(a.scene);
    MetricsReport metrics = evaluate(model_file.checkpoint, scene, a.holdout);
    metrics.config_echo =
        json{{"model", a.model}, {"scene", a.scene}, {"holdout_modulus", a.holdout}}.dump();
    const std::string text = metrics_to_json(metrics);
    if (a.out.empty())
        std::cout << text << "\n";
    else {
        write_text(a.out, text + "\n");
        std::cout << json{{"metrics", a.out}, {"psnr", metrics.mean_psnr}}.dump() << "\n";
    }
    return 0;
}

struct ReportArgs {
    std::string runs;
    std::string out;
};

int run_report(ReportArgs& a) {
    const size_t count = generate_report(a.runs, a.out);
    std::cout << json{{"runs", count}, {"out", a.out}}.dump() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"block-partitioned Gaussian splat training"};
    app.set_version_flag("--version", "blocksplat 0.1.0");
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic scene bundle");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--config", gen.config, "JSON config file");
    gen_cmd->add_option("--seed", gen.seed, "RNG seed");
    gen_cmd->add_option("--gaussians", gen.gaussians, "ground-truth blob count");
    gen_cmd->add_option("--cameras", gen.cameras, "orbit camera count");
    gen_cmd->add_option("--image-size", gen.image_size, "square image side");
    gen_cmd->add_option("--extent", gen.extent, "scene width");
    gen_cmd->add_option("--sh-degree", gen.sh_degree, "SH degree (0 or 1)");
    gen_cmd->add_flag("--save-truth", gen.save_truth, "also write truth.dogs");

    SplitArgs split;
    CLI::App* split_cmd = app.add_subcommand("split", "partition a scene and dump the manifest");
    split_cmd->add_option("--scene", split.scene, "scene file")->required();
    split_cmd->add_option("--config", split.config, "JSON config file");
    split_cmd->add_option("--blocks", split.blocks, "block count");
    split_cmd->add_option("--expand-scale", split.expand_scale, "overlap expansion factor");
    split_cmd->add_option("--out", split.out, "manifest path (default stdout)");
    split_cmd->add_option("--svg", split.svg, "write a top-down sketch here");

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--scene", train.scene, "scene file")->required();
    train_cmd->add_option("--out", train.out, "run directory (master modes)");
    train_cmd->add_option("--name", train.name, "run name (default: out dir name)");
    train_cmd->add_option("--mode", train.mode, "centralized | simulated | sockets");
    train_cmd->add_option("--config", train.config, "JSON config file");
    train_cmd->add_option("--workers", train.workers, "block count");
    train_cmd->add_option("--iterations", train.iterations, "training iterations");
    train_cmd->add_option("--seed", train.seed, "RNG seed");
    train_cmd->add_option("--expand-scale", train.expand_scale, "overlap expansion factor");
    train_cmd->add_option("--alpha", train.alpha, "over-relaxation (1 disables)");
    train_cmd->add_option("--consensus-interval", train.interval, "iterations per round");
    train_cmd->add_option("--holdout", train.holdout, "holdout modulus (0 trains on all)");
    train_cmd->add_option("--sh-degree", train.sh_degree, "SH degree (0 or 1)");
    train_cmd->add_option("--nonshared-refresh", train.nonshared_refresh,
                          "rounds between full uploads");
    train_cmd->add_option("--densify-interval", train.densify_interval, "iterations per densify");
    train_cmd->add_option("--timeout-ms", train.timeout_ms, "channel receive timeout");
    train_cmd->add_option("--listen", train.listen, "sockets master bind address");
    train_cmd->add_option("--join", train.join, "sockets worker: master address");
    train_cmd->add_option("--block", train.block, "sockets worker: block id");
    train_cmd->add_flag("--centralized", train.centralized, "shorthand for --mode centralized");
    train_cmd->add_flag("--no-adaptive", train.no_adaptive, "freeze penalty weights");
    train_cmd->add_flag("--no-consensus", train.no_consensus, "train blocks independently");
    train_cmd->add_flag("--no-densify", train.no_densify, "disable clone/split/prune");

    RenderArgs render_args;
    CLI::App* render_cmd = app.add_subcommand("render", "render one view of a model");
    render_cmd->add_option("--model", render_args.model, "checkpoint file")->required();
    render_cmd->add_option("--scene", render_args.scene, "scene file providing cameras")
        ->required();
    render_cmd->add_option("--view", render_args.view, "view index");
    render_cmd->add_option("--out", render_args.out, "output PPM path")->required();

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "score a model on holdout views");
    eval_cmd->add_option("--model", eval.model, "checkpoint file")->required();
    eval_cmd->add_option("--scene", eval.scene, "scene file")->required();
    eval_cmd->add_option("--holdout", eval.holdout, "holdout modulus (0 scores all views)");
    eval_cmd->add_option("--out", eval.out, "metrics path (default stdout)");

    ReportArgs report;
    CLI::App* report_cmd = app.add_subcommand("report", "summarize a directory of runs");
    report_cmd->add_option("--runs", report.runs, "directory of run directories")->required();
    report_cmd->add_option("--out", report.out, "report output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }

    try {
        if (gen_cmd->parsed()) return run_gen(gen_cmd, gen);
        if (split_cmd->parsed()) return run_split(split_cmd, split);
        if (train_cmd->parsed()) return run_train(train_cmd, train);
        if (render_cmd->parsed()) return run_render(render_args);
        if (eval_cmd->parsed()) return run_eval(eval);
        if (report_cmd->parsed()) return run_report(report);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
