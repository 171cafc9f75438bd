#pragma once

#include <imocap/body.hpp>
#include <imocap/detections.hpp>
#include <imocap/errors.hpp>
#include <imocap/metrics.hpp>
#include <imocap/solver.hpp>
#include <imocap/sync.hpp>
#include <imocap/synth.hpp>

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace imocap {

struct PipelineConfig {
    SyncOptions sync;
    SolverConfig solver;
    int outer_rounds = 2;
    std::uint64_t seed = 0;  // echoed into outputs; the pipeline itself draws no random numbers

    void validate() const
    {
        if (outer_rounds < 1) throw ParameterError("pipeline: outer_rounds must be >= 1");
        solver.validate();
    }
};

struct RoundDiagnostics {
    int round = 0;
    CommonTimeline timeline;
    std::vector<double> objective_trace;
    double final_objective = 0.0;
    double seconds = 0.0;
    std::optional<double> sync_error;  // only with ground truth
    std::optional<double> p_mpjpe;
    bool failed = false;
    bool line_search_failed = false;
    std::string message;
};

struct PipelineResult {
    MotionSolution solution;
    CommonTimeline timeline;
    SyncResult last_sync;
    std::vector<RoundDiagnostics> rounds;
    int selected_round = 0;  // 1-based
    bool warning = false;
};

namespace detail {

// 3D poses used to compare frames: the current solution where a frame is on
// the timeline, the monocular estimate elsewhere. Procrustes alignment makes
// the two coordinate frames interchangeable.
inline std::vector<std::vector<Joints3D>> sync_poses(const Skeleton& skel,
                                                     const std::vector<VideoInitialPoses>& initial,
                                                     const MotionSolution* sol, const CommonTimeline* tl)
{
    std::vector<std::vector<Joints3D>> poses(initial.size());
    for (std::size_t j = 0; j < initial.size(); ++j) {
        const auto& in = initial[j];
        for (std::size_t f = 0; f < in.theta.size(); ++f) {
            poses[j].push_back(forward_kinematics(skel, in.theta[f], in.beta, in.gamma[f]));
        }
        if (sol == nullptr) continue;
        std::vector<bool> done(poses[j].size(), false);
        for (int i = 0; i < tl->length(); ++i) {
            const int f = tl->maps[j][i];
            if (done[f]) continue;
            done[f] = true;
            poses[j][f] = forward_kinematics(skel, sol->params.theta[j][i], sol->params.beta[j],
                                             sol->params.gamma[j][i]);
        }
    }
    return poses;
}

// Previous solution re-indexed onto a new timeline: each new frame takes the
// parameters of the old common frame whose video frame is nearest.
inline MotionSolution carry_over(const MotionSolution& prev, const CommonTimeline& prev_tl,
                                 const CommonTimeline& tl, const SolverConfig& cfg)
{
    MotionSolution out;
    out.cameras = prev.cameras;
    const int m = prev.params.video_count();
    out.params.beta = prev.params.beta;
    out.params.theta.resize(m);
    out.params.gamma.resize(m);
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < tl.length(); ++i) {
            const int target = tl.maps[j][i];
            int best = 0;
            int gap = std::abs(prev_tl.maps[j][0] - target);
            for (int k = 1; k < prev_tl.length(); ++k) {
                const int g = std::abs(prev_tl.maps[j][k] - target);
                if (g < gap) {
                    gap = g;
                    best = k;
                }
            }
            out.params.theta[j].push_back(prev.params.theta[j][best]);
            out.params.gamma[j].push_back(prev.params.gamma[j][best]);
        }
    }
    out.aux = update_auxiliaries(out.params, cfg.s);
    return out;
}

} // namespace detail

/// Alternates synchronization and reconstruction for `outer_rounds` rounds.
/// Round 1 synchronizes the monocular estimates and initializes the solver;
/// later rounds re-synchronize with the optimized poses and warm-start from
/// the previous solution. A later round replaces the current result only if
/// its final objective is not higher; a round that throws leaves the earlier
/// result in place and sets the warning flag.
inline PipelineResult run_iterative(const Skeleton& skel, const DetectionSet& det,
                                    const std::vector<VideoInitialPoses>& initial, const Intrinsics& intrinsics,
                                    const PipelineConfig& cfg, const GroundTruth* truth = nullptr)
{
    cfg.validate();
    det.validate(skel.joint_count());
    if (det.video_count() == 0 || static_cast<int>(initial.size()) != det.video_count()) {
        throw ParameterError("pipeline: need initial poses for every video");
    }
    PipelineResult res;
    SyncOptions sync = cfg.sync;
    for (int r = 1; r <= cfg.outer_rounds; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        RoundDiagnostics diag;
        diag.round = r;
        try {
            const bool first = r == 1;
            const auto poses = first ? detail::sync_poses(skel, initial, nullptr, nullptr)
                                     : detail::sync_poses(skel, initial, &res.solution, &res.timeline);
            SyncResult s = synchronize(poses, sync);
            sync.reference = s.timeline.reference;
            const auto start = first ? initialize(skel, initial, det, s.timeline, intrinsics, cfg.solver)
                                     : detail::carry_over(res.solution, res.timeline, s.timeline, cfg.solver);
            MotionSolution sol = alternating_solve(skel, start, det, s.timeline, cfg.solver);
            diag.timeline = s.timeline;
            diag.objective_trace = sol.objective_trace;
            diag.final_objective = sol.objective_trace.back();
            diag.line_search_failed = sol.line_search_failed;
            if (truth != nullptr) {
                const auto ev = evaluate(skel, sol.params, s.timeline, *truth);
                diag.sync_error = ev.sync_error;
                diag.p_mpjpe = ev.p_mpjpe;
            }
            if (first || diag.final_objective <= res.rounds[res.selected_round - 1].final_objective) {
                res.solution = std::move(sol);
                res.timeline = s.timeline;
                res.last_sync = std::move(s);
                res.selected_round = r;
            }
            if (diag.line_search_failed) res.warning = true;
        } catch (const std::exception& e) {
            if (r == 1) throw;
            diag.failed = true;
            diag.message = e.what();
            res.warning = true;
        }
        diag.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.rounds.push_back(std::move(diag));
        if (res.rounds.back().failed) break;
    }
    return res;
}

} // namespace imocap
