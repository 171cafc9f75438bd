#pragma once

#include <imocap/errors.hpp>
#include <imocap/geometry.hpp>
#include <imocap/solver.hpp>
#include <imocap/sync.hpp>
#include <imocap/synth.hpp>

#include <Eigen/Core>
#include <cmath>
#include <cstdlib>
#include <span>
#include <vector>

namespace imocap {

namespace detail {

inline void check_matched(std::span<const Eigen::Matrix3Xd> pred, std::span<const Eigen::Matrix3Xd> truth)
{
    if (pred.size() != truth.size() || pred.empty()) {
        throw ParameterError("metrics: prediction and truth need the same nonzero frame count");
    }
    for (std::size_t f = 0; f < pred.size(); ++f) {
        if (pred[f].cols() != truth[f].cols()) {
            throw ParameterError("metrics: joint count mismatch at frame " + std::to_string(f));
        }
    }
}

inline double mean_joint_error(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b)
{
    return (a - b).colwise().norm().mean();
}

} // namespace detail

/// Mean per-joint position error in millimeters (inputs in meters). With
/// root_relative, each frame is first translated so the root joints coincide.
inline double mpjpe(std::span<const Eigen::Matrix3Xd> pred, std::span<const Eigen::Matrix3Xd> truth,
                    bool root_relative = true)
{
    detail::check_matched(pred, truth);
    double sum = 0.0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        Eigen::Matrix3Xd p = pred[f];
        if (root_relative) {
            p.colwise() += Eigen::Vector3d(truth[f].col(0) - pred[f].col(0));
        }
        sum += detail::mean_joint_error(p, truth[f]);
    }
    return 1000.0 * sum / static_cast<double>(pred.size());
}

/// MPJPE after per-frame similarity alignment of each prediction to its truth.
inline double p_mpjpe(std::span<const Eigen::Matrix3Xd> pred, std::span<const Eigen::Matrix3Xd> truth)
{
    detail::check_matched(pred, truth);
    double sum = 0.0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        const auto sim = procrustes_align(pred[f], truth[f], true);
        sum += detail::mean_joint_error(sim.apply(pred[f]), truth[f]);
    }
    return 1000.0 * sum / static_cast<double>(pred.size());
}

/// RMS root-position error (mm) after one similarity alignment of the whole
/// predicted trajectory onto the true one.
inline double trajectory_rmse(const Eigen::Matrix3Xd& pred_roots, const Eigen::Matrix3Xd& true_roots)
{
    if (pred_roots.cols() != true_roots.cols() || pred_roots.cols() == 0) {
        throw ParameterError("trajectory_rmse: size mismatch");
    }
    if (pred_roots.cols() < 3) {
        const Eigen::Vector3d shift = true_roots.rowwise().mean() - pred_roots.rowwise().mean();
        return 1000.0 * std::sqrt(((pred_roots.colwise() + shift) - true_roots).squaredNorm() / pred_roots.cols());
    }
    try {
        return 1000.0 * procrustes_align(pred_roots, true_roots, true).residual_rmse;
    } catch (const DegeneracyError&) {
        const Eigen::Vector3d shift = true_roots.rowwise().mean() - pred_roots.rowwise().mean();
        return 1000.0 * std::sqrt(((pred_roots.colwise() + shift) - true_roots).squaredNorm() / pred_roots.cols());
    }
}

/// Mean |matched - true| frame offset over non-reference videos and reference
/// frames, each divided by that video's clip length.
inline double sync_error(const CommonTimeline& timeline, const CommonTimeline& truth,
                         std::span<const int> clip_lengths)
{
    if (timeline.videos() != truth.videos() || timeline.reference != truth.reference ||
        static_cast<int>(clip_lengths.size()) != timeline.videos()) {
        throw ParameterError("sync_error: timelines do not describe the same videos and reference");
    }
    double sum = 0.0;
    long count = 0;
    for (int j = 0; j < timeline.videos(); ++j) {
        if (j == timeline.reference) continue;
        const auto& a = timeline.maps[j];
        const auto& b = truth.maps[j];
        if (a.size() != b.size()) throw ParameterError("sync_error: timeline lengths differ");
        for (std::size_t i = 0; i < a.size(); ++i) {
            sum += std::abs(a[i] - b[i]) / static_cast<double>(clip_lengths[j]);
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

inline double sync_error(const CommonTimeline& timeline, const CommonTimeline& truth, int clip_length)
{
    const std::vector<int> lengths(timeline.videos(), clip_length);
    return sync_error(timeline, truth, lengths);
}

struct VideoEvaluation {
    int video = 0;
    double sync_error = 0.0;  // 0 for the reference video
    double mpjpe = 0.0;
    double p_mpjpe = 0.0;
};

struct Evaluation {
    double sync_error = 0.0;       // fraction of the clip length
    double mpjpe = 0.0;            // mm, after one global similarity alignment
    double p_mpjpe = 0.0;          // mm
    double trajectory_rmse = 0.0;  // mm
    std::vector<VideoEvaluation> per_video;
};

/// Scores a solution against synthetic ground truth. Frame i of video j is
/// compared with the true pose of the video frame the timeline assigns to it.
/// The solution lives in its own world frame (the reference camera's), so
/// MPJPE first applies one similarity taking all predicted joints onto the
/// truth; P-MPJPE aligns every frame separately.
inline Evaluation evaluate(const Skeleton& skel, const MotionParams& params, const CommonTimeline& timeline,
                           const GroundTruth& truth, bool mpjpe_root_relative = true)
{
    const int m = params.video_count();
    if (truth.video_count() != m || timeline.videos() != m || timeline.length() != params.frame_count()) {
        throw ParameterError("evaluate: solution, timeline and truth disagree in shape");
    }
    Evaluation ev;
    std::vector<int> lengths;
    for (const auto& v : truth.videos) lengths.push_back(static_cast<int>(v.base_times.size()));
    const auto true_tl = truth_timeline(truth, timeline.reference);
    ev.sync_error = sync_error(timeline, true_tl, lengths);

    std::vector<Eigen::Matrix3Xd> pred, gt;
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < params.frame_count(); ++i) {
            pred.push_back(forward_kinematics(skel, params.theta[j][i], params.beta[j], params.gamma[j][i]));
            gt.push_back(truth.videos[j].joints.at(timeline.maps[j][i]));
        }
    }
    ev.p_mpjpe = p_mpjpe(pred, gt);

    const auto nj = pred.front().cols();
    Eigen::Matrix3Xd all_pred(3, nj * static_cast<Eigen::Index>(pred.size()));
    Eigen::Matrix3Xd all_gt(3, all_pred.cols());
    Eigen::Matrix3Xd roots_pred(3, static_cast<Eigen::Index>(pred.size()));
    Eigen::Matrix3Xd roots_gt(3, roots_pred.cols());
    for (std::size_t f = 0; f < pred.size(); ++f) {
        const auto c = static_cast<Eigen::Index>(f);
        all_pred.middleCols(c * nj, nj) = pred[f];
        all_gt.middleCols(c * nj, nj) = gt[f];
        roots_pred.col(c) = pred[f].col(0);
        roots_gt.col(c) = gt[f].col(0);
    }
    const auto global = procrustes_align(all_pred, all_gt, true);
    std::vector<Eigen::Matrix3Xd> aligned;
    for (const auto& p : pred) aligned.push_back(global.apply(p));
    ev.mpjpe = mpjpe(aligned, gt, mpjpe_root_relative);
    ev.trajectory_rmse = trajectory_rmse(roots_pred, roots_gt);

    const auto n = static_cast<std::ptrdiff_t>(params.frame_count());
    for (int j = 0; j < m; ++j) {
        VideoEvaluation v;
        v.video = j;
        const auto first = j * n;
        const std::span<const Eigen::Matrix3Xd> pa(aligned.data() + first, static_cast<std::size_t>(n));
        const std::span<const Eigen::Matrix3Xd> pp(pred.data() + first, static_cast<std::size_t>(n));
        const std::span<const Eigen::Matrix3Xd> gg(gt.data() + first, static_cast<std::size_t>(n));
        v.mpjpe = mpjpe(pa, gg, mpjpe_root_relative);
        v.p_mpjpe = p_mpjpe(pp, gg);
        if (j != timeline.reference) {
            double s = 0.0;
            for (int i = 0; i < timeline.length(); ++i) s += std::abs(timeline.maps[j][i] - true_tl.maps[j][i]);
            v.sync_error = s / (static_cast<double>(timeline.length()) * lengths[j]);
        }
        ev.per_video.push_back(v);
    }
    return ev;
}

} // namespace imocap
