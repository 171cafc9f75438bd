// Command-line front end: synth, sync, solve, pipeline, eval.
//
// Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.

#include <imocap/imocap.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace imocap;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string dump_affinity;
    int threads = 1;
    bool keep_partial = false;
};

io::RunConfig resolve_config(const Common& c)
{
    io::RunConfig cfg = c.config.empty() ? io::RunConfig{} : io::load_config(c.config);
    if (c.seed) {
        cfg.scene.seed = *c.seed;
        cfg.pipeline.seed = *c.seed;
    }
    return cfg;
}

std::vector<VideoInitialPoses> require_initial(const io::Dataset& d, const std::string& dir)
{
    if (d.initial.empty()) {
        throw InputError(dir + ": every video file needs an 'initial' block with monocular 3D estimates");
    }
    return d.initial;
}

std::vector<std::vector<Joints3D>> initial_joints(const io::Dataset& d)
{
    std::vector<std::vector<Joints3D>> poses(d.initial.size());
    for (std::size_t j = 0; j < d.initial.size(); ++j) {
        const auto& in = d.initial[j];
        for (std::size_t f = 0; f < in.theta.size(); ++f) {
            poses[j].push_back(forward_kinematics(d.skeleton, in.theta[f], in.beta, in.gamma[f]));
        }
    }
    return poses;
}

void write_outputs(const fs::path& out, const io::RunConfig& cfg, const io::Dataset& d, const PipelineResult& r)
{
    fs::create_directories(out);
    io::write_json(out / "config.json", io::config_to_json(cfg));
    io::write_json(out / "timeline.json", io::timeline_to_json(r.timeline));
    io::write_json(out / "diagnostics.json", io::diagnostics_to_json(r));
    if (d.truth) {
        const auto ev = evaluate(d.skeleton, r.solution.params, r.timeline, *d.truth, cfg.mpjpe_root_relative);
        io::write_json(out / "metrics.json", io::evaluation_to_json(ev));
    }
    io::write_json(out / "solution.json", io::solution_to_json(r.solution, r.timeline));
}

int cmd_synth(const Common& c)
{
    const auto cfg = resolve_config(c);
    const Scene scene = generate_scene(cfg.scene);
    io::write_dataset(c.out, scene, cfg);
    std::cout << "wrote " << cfg.scene.videos << " videos to " << c.out << "\n";
    return 0;
}

int cmd_sync(const Common& c, const std::string& dataset)
{
    const auto cfg = resolve_config(c);
    const auto d = io::load_dataset(dataset);
    require_initial(d, dataset);
    const auto r = synchronize(initial_joints(d), cfg.pipeline.sync);
    fs::create_directories(c.out);
    if (!c.dump_affinity.empty()) {
        io::dump_grid(c.dump_affinity, "A", r.affinity);
        if (r.denoised.blocks.videos() > 0) io::dump_grid(c.dump_affinity, "X", r.denoised.blocks);
    }
    io::write_json(fs::path(c.out) / "config.json", io::config_to_json(cfg));
    io::write_json(fs::path(c.out) / "timeline.json", io::timeline_to_json(r.timeline));
    if (d.truth) {
        std::vector<int> lengths;
        for (const auto& v : d.truth->videos) lengths.push_back(static_cast<int>(v.base_times.size()));
        const double e = sync_error(r.timeline, truth_timeline(*d.truth, r.timeline.reference), lengths);
        io::write_json(fs::path(c.out) / "metrics.json", {{"sync_error_fraction", e}});
    }
    return 0;
}

int cmd_solve(const Common& c, const std::string& dataset, const std::string& timeline_path)
{
    const auto cfg = resolve_config(c);
    const auto d = io::load_dataset(dataset);
    const auto initial = require_initial(d, dataset);
    const io::json tj = io::read_json(timeline_path);
    const auto tl = io::timeline_from_json({tj.contains("timeline") ? tj.at("timeline") : tj, timeline_path});
    if (tl.videos() != d.detections.video_count()) {
        throw InputError(timeline_path + ": timeline has " + std::to_string(tl.videos()) + " videos, dataset has " +
                         std::to_string(d.detections.video_count()));
    }
    const auto init = initialize(d.skeleton, initial, d.detections, tl, d.intrinsics, cfg.pipeline.solver);
    const auto sol = alternating_solve(d.skeleton, init, d.detections, tl, cfg.pipeline.solver);
    fs::create_directories(c.out);
    io::write_json(fs::path(c.out) / "config.json", io::config_to_json(cfg));
    if (d.truth) {
        const auto ev = evaluate(d.skeleton, sol.params, tl, *d.truth, cfg.mpjpe_root_relative);
        io::write_json(fs::path(c.out) / "metrics.json", io::evaluation_to_json(ev));
    }
    io::write_json(fs::path(c.out) / "solution.json", io::solution_to_json(sol, tl));
    return 0;
}

int cmd_pipeline(const Common& c, const std::string& dataset)
{
    const auto cfg = resolve_config(c);
    const auto d = io::load_dataset(dataset);
    const auto initial = require_initial(d, dataset);
    const auto r = run_iterative(d.skeleton, d.detections, initial, d.intrinsics, cfg.pipeline,
                                 d.truth ? &*d.truth : nullptr);
    for (const auto& d : r.rounds) {
        std::cerr << "round " << d.round << ": objective " << d.final_objective << ", " << d.seconds << " s\n";
    }
    if (!c.dump_affinity.empty()) {
        io::dump_grid(c.dump_affinity, "A", r.last_sync.affinity);
        if (r.last_sync.denoised.blocks.videos() > 0) io::dump_grid(c.dump_affinity, "X", r.last_sync.denoised.blocks);
    }
    const bool round_failed = std::any_of(r.rounds.begin(), r.rounds.end(), [](const auto& x) { return x.failed; });
    if (round_failed) {
        std::cerr << "error: a refinement round failed: " << r.rounds.back().message << "\n";
        if (c.keep_partial) {
            write_outputs(c.out, cfg, d, r);
            std::cerr << "kept the result of round " << r.selected_round << " in " << c.out << "\n";
        }
        return kExitNumerical;
    }
    write_outputs(c.out, cfg, d, r);
    return 0;
}

int cmd_eval(const Common& c, const std::string& solution_path, const std::string& dataset)
{
    const auto cfg = resolve_config(c);
    const auto d = io::load_dataset(dataset);
    if (!d.truth) {
        throw InputError(dataset + ": no truth.json to evaluate against");
    }
    const io::json sj = io::read_json(solution_path);
    const auto [sol, tl] = io::solution_from_json({sj, solution_path}, d.skeleton);
    if (tl.videos() != d.truth->video_count()) {
        throw InputError(solution_path + ": video count differs from the dataset");
    }
    const auto ev = evaluate(d.skeleton, sol.params, tl, *d.truth, cfg.mpjpe_root_relative);
    const fs::path out = c.out.empty() ? fs::path("metrics.json") : fs::path(c.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    io::write_json(out, io::evaluation_to_json(ev));
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-video human motion capture from unsynchronized videos"};
    app.require_subcommand(1);
    Common common;
    std::string dataset, timeline, solution;

    auto add_common = [&](CLI::App* sub, bool out_required) {
        sub->add_option("--config", common.config, "JSON configuration file")->check(CLI::ExistingFile);
        auto* o = sub->add_option("--out", common.out, "Output path");
        if (out_required) o->required();
        sub->add_option("--seed", common.seed, "Override the configuration seed");
        sub->add_option("--threads", common.threads, "Worker cap (computation is sequential)")->check(CLI::PositiveNumber);
        sub->add_flag("--keep-partial", common.keep_partial, "Write the best completed round on numerical failure");
    };

    auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-video scene");
    add_common(synth, true);

    auto* sync = app.add_subcommand("sync", "Synchronize the videos of a dataset");
    sync->add_option("dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    sync->add_option("--dump-affinity", common.dump_affinity, "Directory for A/X block CSV dumps");
    add_common(sync, true);

    auto* solve = app.add_subcommand("solve", "Reconstruct motion and cameras on a fixed timeline");
    solve->add_option("dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    solve->add_option("--timeline", timeline, "timeline.json from 'sync'")->required()->check(CLI::ExistingFile);
    add_common(solve, true);

    auto* pipe = app.add_subcommand("pipeline", "Alternate synchronization and reconstruction");
    pipe->add_option("dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    pipe->add_option("--dump-affinity", common.dump_affinity, "Directory for A/X block CSV dumps");
    add_common(pipe, true);

    auto* eval = app.add_subcommand("eval", "Score a solution against ground truth");
    eval->add_option("solution", solution, "solution.json")->required()->check(CLI::ExistingFile);
    eval->add_option("dataset", dataset, "Dataset directory with truth.json")->required()->check(CLI::ExistingDirectory);
    add_common(eval, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (*synth) return cmd_synth(common);
        if (*sync) return cmd_sync(common, dataset);
        if (*solve) return cmd_solve(common, dataset, timeline);
        if (*pipe) return cmd_pipeline(common, dataset);
        if (*eval) return cmd_eval(common, solution, dataset);
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const ParameterError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
    return 0;
}
