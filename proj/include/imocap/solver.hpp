#pragma once

// Multi-view body bundle adjustment.
//
// Every video j carries its own per-frame pose theta_ij, root translation
// gamma_ij (world frame, shared by all videos through the common timeline)
// and a per-video shape beta_j. The objective is
//
//   L_2d + lambda_t L_temp + lambda_r1 sum_i |theta_i - Z_i|^2 + lambda_r2 |gamma - Y|^2
//
// where theta_i stacks frame i of all videos as an M x 3J matrix, gamma is
// M x 3N, and Z_i, Y are rank-<= s auxiliaries. Each term is normalized so
// the balance between them does not depend on the number of videos, frames
// or joints: L_2d is the confidence-weighted mean robust residual per
// observation, the prior terms are means per (video, frame).
//
// alternating_solve cycles through (1) preconditioned gradient steps on the
// body parameters, (2)-(3) truncated-SVD updates of Z_i and Y, and (4)
// per-camera PnP. Each step is a descent step, so the objective never rises.

#include <imocap/body.hpp>
#include <imocap/detections.hpp>
#include <imocap/errors.hpp>
#include <imocap/geometry.hpp>
#include <imocap/robust_loss.hpp>
#include <imocap/rotation.hpp>
#include <imocap/sync.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace imocap {

struct MotionParams {
    std::vector<std::vector<PoseVector>> theta;       // [video][frame]
    std::vector<ShapeVector> beta;                    // [video]
    std::vector<std::vector<RootTranslation>> gamma;  // [video][frame]

    int video_count() const { return static_cast<int>(theta.size()); }
    int frame_count() const { return theta.empty() ? 0 : static_cast<int>(theta.front().size()); }

    void validate(const Skeleton& skel) const
    {
        const int m = video_count();
        const int n = frame_count();
        if (m == 0 || n == 0) {
            throw ParameterError("motion params: no videos or frames");
        }
        if (static_cast<int>(beta.size()) != m || static_cast<int>(gamma.size()) != m) {
            throw ParameterError("motion params: per-video lists differ in length");
        }
        for (int j = 0; j < m; ++j) {
            if (static_cast<int>(theta[j].size()) != n || static_cast<int>(gamma[j].size()) != n) {
                throw ParameterError("motion params: video " + std::to_string(j) + " has the wrong frame count");
            }
            if (beta[j].size() != skel.shape_dim()) {
                throw ParameterError("motion params: beta of video " + std::to_string(j) + " has the wrong size");
            }
            for (const auto& t : theta[j]) {
                if (t.size() != skel.pose_dim()) {
                    throw ParameterError("motion params: theta of video " + std::to_string(j) +
                                         " has the wrong size");
                }
            }
        }
    }

    static MotionParams zeros(int videos, int frames, const Skeleton& skel)
    {
        MotionParams p;
        p.theta.assign(videos, std::vector<PoseVector>(frames, PoseVector::Zero(skel.pose_dim())));
        p.beta.assign(videos, ShapeVector::Zero(skel.shape_dim()));
        p.gamma.assign(videos, std::vector<RootTranslation>(frames, RootTranslation::Zero()));
        return p;
    }
};

struct AuxiliaryVars {
    std::vector<Eigen::MatrixXd> z;  // per frame, M x 3J
    Eigen::MatrixXd y;               // M x 3N
};

struct SolverConfig {
    int s = 1;
    double lambda_t = 0.01;
    double lambda_r1 = 10.0;
    double lambda_r2 = 10.0;
    double geman_sigma = 10.0;      // pixels
    double step_size = 1.0;         // first trial step along the preconditioned direction
    int max_outer_iters = 50;
    int max_inner_iters = 20;
    double convergence_tol = 1e-6;  // on |delta objective| / max(1, objective)
    bool shared_motion = false;     // one parameter set for all videos
    bool refine_cameras = true;
    int pnp_iters = 20;
    int init_refine_iters = 20;

    void validate() const
    {
        if (s < 1) throw ParameterError("solver: s must be >= 1");
        if (lambda_t < 0 || lambda_r1 < 0 || lambda_r2 < 0) throw ParameterError("solver: weights must be >= 0");
        if (!(geman_sigma > 0)) throw ParameterError("solver: geman_sigma must be > 0");
        if (!(step_size > 0)) throw ParameterError("solver: step_size must be > 0");
        if (max_outer_iters < 0 || max_inner_iters < 0 || pnp_iters < 0 || init_refine_iters < 0) {
            throw ParameterError("solver: iteration caps must be >= 0");
        }
        if (!(convergence_tol >= 0)) throw ParameterError("solver: convergence_tol must be >= 0");
    }
};

struct MotionSolution {
    MotionParams params;
    std::vector<CameraModel> cameras;
    AuxiliaryVars aux;
    std::vector<double> objective_trace;  // initial value, then one entry per outer iteration
    int outer_iterations = 0;
    bool converged = false;
    bool line_search_failed = false;
};

struct Intrinsics {
    double focal = 5000.0;
    Vec2 principal_point{500.0, 500.0};
};

/// Intrinsics for footage without calibration: image center and a focal
/// length several times the image size.
inline Intrinsics default_intrinsics(const Vec2& image_size)
{
    return {kDefaultFocalPerImagePixel * image_size.maxCoeff(), 0.5 * image_size};
}

struct LossAndGradient {
    double value = 0.0;
    MotionParams gradient;
};

struct ObjectiveTerms {
    double reprojection = 0.0;
    double temporal = 0.0;
    double pose_rank = 0.0;
    double trajectory_rank = 0.0;
    double total = 0.0;
};

namespace detail {

inline void check_problem(const Skeleton& skel, const MotionParams& params, const std::vector<CameraModel>& cameras,
                          const DetectionSet& det, const CommonTimeline& tl)
{
    params.validate(skel);
    const int m = params.video_count();
    if (static_cast<int>(cameras.size()) != m || det.video_count() != m || tl.videos() != m) {
        throw ParameterError("solver: params, cameras, detections and timeline disagree on the video count");
    }
    if (tl.length() != params.frame_count()) {
        throw ParameterError("solver: params and timeline disagree on the frame count");
    }
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < tl.length(); ++i) {
            const int f = tl.maps[j][i];
            if (f < 0 || f >= det.frame_count(j)) {
                throw ParameterError("solver: timeline maps outside video " + std::to_string(j));
            }
            if (det.videos[j][f].cols() != skel.joint_count()) {
                throw ParameterError("solver: detections of video " + std::to_string(j) +
                                     " have the wrong joint count");
            }
        }
    }
}

struct Scales {
    double data = 0.0;      // 1 / total confidence
    double temporal = 0.0;  // 1 / (M (N - 1))
    double rank = 0.0;      // 1 / (M N)
};

inline Scales scales(const DetectionSet& det, const CommonTimeline& tl)
{
    const int m = tl.videos();
    const int n = tl.length();
    double conf = 0.0;
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
            conf += det.videos[j][tl.maps[j][i]].row(2).sum();
        }
    }
    Scales s;
    s.data = conf > 0.0 ? 1.0 / conf : 0.0;
    s.temporal = n > 1 ? 1.0 / (static_cast<double>(m) * (n - 1)) : 0.0;
    s.rank = 1.0 / (static_cast<double>(m) * n);
    return s;
}

// Sum of c * rho over one frame; +inf if a weighted joint is behind the camera.
inline double frame_cost(const Joints3D& joints, const CameraModel& cam, const FrameKeypoints& kp, double sigma,
                         long* bad_joint = nullptr)
{
    double cost = 0.0;
    for (Eigen::Index z = 0; z < joints.cols(); ++z) {
        const double c = kp(2, z);
        if (c <= 0.0) {
            continue;
        }
        const Vec3 pc = cam.rotation * joints.col(z) + cam.translation;
        if (!(pc.z() > 0.0)) {
            if (bad_joint != nullptr) *bad_joint = static_cast<long>(z);
            return std::numeric_limits<double>::infinity();
        }
        const Vec2 u = cam.focal * pc.head<2>() / pc.z() + cam.principal_point;
        cost += c * geman_mcclure(kp.block<2, 1>(0, z) - u, sigma);
    }
    return cost;
}

// Adds scale * d(sum c rho)/d(theta, beta, gamma) to grad and, if gn is
// non-null, the matching Gauss-Newton block. Columns follow FkLayout.
inline void accumulate_frame(const Joints3D& joints, const Eigen::MatrixXd& fk_jac, const CameraModel& cam,
                             const FrameKeypoints& kp, double sigma, double scale, Eigen::VectorXd& grad,
                             Eigen::MatrixXd* gn)
{
    const Eigen::Index cols = fk_jac.cols();
    Eigen::Matrix<double, 2, Eigen::Dynamic> a(2, cols);
    for (Eigen::Index z = 0; z < joints.cols(); ++z) {
        const double c = kp(2, z);
        if (c <= 0.0) {
            continue;
        }
        const Vec3 pc = cam.rotation * joints.col(z) + cam.translation;
        if (!(pc.z() > 0.0)) {
            throw CheiralityError("joint " + std::to_string(z) + " is behind the camera", static_cast<long>(z));
        }
        const Vec2 u = cam.focal * pc.head<2>() / pc.z() + cam.principal_point;
        const Vec2 r = kp.block<2, 1>(0, z) - u;
        const double w = c * geman_mcclure_weight(r.squaredNorm(), sigma);
        a.noalias() = projection_jacobian(cam.focal, pc) * cam.rotation * fk_jac.middleRows<3>(3 * z);
        grad.noalias() -= (2.0 * scale * w) * a.transpose() * r;
        if (gn != nullptr) {
            gn->noalias() += (2.0 * scale * w) * a.transpose() * a;
        }
    }
}

inline const FrameKeypoints& keypoints_at(const DetectionSet& det, const CommonTimeline& tl, int video, int frame)
{
    return det.videos[video][tl.maps[video][frame]];
}

// Gauss-Newton system of one frame over (theta, gamma) and over beta, built
// joint by joint from the ancestor chain only: joint z moves with the
// rotations of its strict ancestors, the scales of the bones above it and the
// root translation.
struct FrameSystem {
    Eigen::VectorXd g_pose;   // 3J + 3: theta, then gamma
    Eigen::MatrixXd h_pose;
    Eigen::VectorXd g_shape;  // J
    Eigen::MatrixXd h_shape;

    explicit FrameSystem(int joints)
        : g_pose(Eigen::VectorXd::Zero(3 * joints + 3)), h_pose(Eigen::MatrixXd::Zero(3 * joints + 3, 3 * joints + 3)),
          g_shape(Eigen::VectorXd::Zero(joints)), h_shape(Eigen::MatrixXd::Zero(joints, joints))
    {}
};

struct ChainCache {
    std::vector<std::vector<int>> chains;  // joint k and its ancestors, root last

    explicit ChainCache(const Skeleton& skel) : chains(skel.joint_count())
    {
        for (int k = 0; k < skel.joint_count(); ++k) {
            for (int a = k; a >= 0; a = skel.parents[a]) chains[k].push_back(a);
        }
    }
};

inline void add_frame_system(const Skeleton& skel, const ChainCache& cc, const FkState& st,
                             const PoseVector& theta, const ShapeVector& beta, const CameraModel& cam,
                             const FrameKeypoints& kp, double sigma, double scale, FrameSystem& sys)
{
    const int nj = skel.joint_count();
    const int gcol = 3 * nj;
    std::vector<Mat3> lever_rot(nj);
    std::vector<Vec3> bone(nj);
    for (int a = 0; a < nj; ++a) {
        lever_rot[a] = st.global[a] * right_jacobian(theta.segment<3>(3 * a));
        const int p = skel.parents[a];
        const Vec3 b = std::exp(beta[a]) * skel.rest_offsets[a];
        bone[a] = p < 0 ? b : Vec3(st.global[p] * b);
    }
    std::vector<int> cols;
    Eigen::Matrix<double, 2, Eigen::Dynamic> a_pose;
    Eigen::Matrix<double, 2, Eigen::Dynamic> a_shape;
    for (int z = 0; z < nj; ++z) {
        const double c = kp(2, z);
        if (c <= 0.0) {
            continue;
        }
        const Vec3 pc = cam.rotation * st.positions.col(z) + cam.translation;
        if (!(pc.z() > 0.0)) {
            throw CheiralityError("joint " + std::to_string(z) + " is behind the camera", static_cast<long>(z));
        }
        const Vec2 u = cam.focal * pc.head<2>() / pc.z() + cam.principal_point;
        const Vec2 r = kp.block<2, 1>(0, z) - u;
        const double w = 2.0 * scale * c * geman_mcclure_weight(r.squaredNorm(), sigma);
        const Eigen::Matrix<double, 2, 3> pr = projection_jacobian(cam.focal, pc) * cam.rotation;

        const auto& chain = cc.chains[z];
        const int depth = static_cast<int>(chain.size());
        cols.clear();
        a_pose.resize(2, 3 * depth);  // strict ancestors (depth - 1 blocks) + gamma
        int blk = 0;
        for (int q = 1; q < depth; ++q, ++blk) {
            const int anc = chain[q];
            const Vec3 lever = st.positions.col(z) - st.positions.col(anc);
            a_pose.middleCols<3>(3 * blk) = -pr * skew(lever) * lever_rot[anc];
            for (int d = 0; d < 3; ++d) cols.push_back(3 * anc + d);
        }
        a_pose.middleCols<3>(3 * blk) = pr;
        for (int d = 0; d < 3; ++d) cols.push_back(gcol + d);
        const Eigen::VectorXd gp = -w * a_pose.transpose() * r;
        const Eigen::MatrixXd hp = w * a_pose.transpose() * a_pose;
        sys.g_pose(cols) += gp;
        sys.h_pose(cols, cols) += hp;

        a_shape.resize(2, depth);
        for (int q = 0; q < depth; ++q) a_shape.col(q) = pr * bone[chain[q]];
        sys.g_shape(chain) += -w * a_shape.transpose() * r;
        sys.h_shape(chain, chain) += w * a_shape.transpose() * a_shape;
    }
}

} // namespace detail

/// Confidence-normalized robust reprojection loss with its gradient.
/// Throws CheiralityError naming (video, frame) if a weighted joint is not in
/// front of its camera.
inline LossAndGradient reprojection_loss(const Skeleton& skel, const MotionParams& params,
                                         const std::vector<CameraModel>& cameras, const DetectionSet& det,
                                         const CommonTimeline& tl, const SolverConfig& cfg)
{
    detail::check_problem(skel, params, cameras, det, tl);
    const auto sc = detail::scales(det, tl);
    const FkLayout lay{skel.joint_count()};
    LossAndGradient out;
    out.gradient = MotionParams::zeros(params.video_count(), params.frame_count(), skel);
    for (int j = 0; j < params.video_count(); ++j) {
        for (int i = 0; i < params.frame_count(); ++i) {
            const auto& kp = detail::keypoints_at(det, tl, j, i);
            const auto joints = forward_kinematics(skel, params.theta[j][i], params.beta[j], params.gamma[j][i]);
            long bad = -1;
            const double c = detail::frame_cost(joints, cameras[j], kp, cfg.geman_sigma, &bad);
            if (!std::isfinite(c)) {
                throw CheiralityError("video " + std::to_string(j) + " frame " + std::to_string(i) + ": joint " +
                                          std::to_string(bad) + " is behind the camera",
                                      bad);
            }
            out.value += sc.data * c;
            const auto jac = fk_jacobian(skel, params.theta[j][i], params.beta[j], params.gamma[j][i]);
            Eigen::VectorXd g = Eigen::VectorXd::Zero(lay.cols());
            detail::accumulate_frame(joints, jac, cameras[j], kp, cfg.geman_sigma, sc.data, g, nullptr);
            out.gradient.theta[j][i] = g.segment(lay.theta_offset(), skel.pose_dim());
            out.gradient.beta[j] += g.segment(lay.beta_offset(), skel.shape_dim());
            out.gradient.gamma[j][i] = g.segment<3>(lay.gamma_offset());
        }
    }
    return out;
}

/// Sum over consecutive frames of |theta_i - theta_{i+1}|_F^2 (all videos),
/// divided by M (N - 1); zero for a single frame.
inline LossAndGradient temporal_loss(const MotionParams& params)
{
    const int m = params.video_count();
    const int n = params.frame_count();
    LossAndGradient out;
    out.gradient.theta.resize(m);
    out.gradient.beta.resize(m);
    out.gradient.gamma.resize(m);
    const double scale = n > 1 ? 1.0 / (static_cast<double>(m) * (n - 1)) : 0.0;
    for (int j = 0; j < m; ++j) {
        const auto dim = params.theta[j].front().size();
        out.gradient.theta[j].assign(n, PoseVector::Zero(dim));
        out.gradient.beta[j] = ShapeVector::Zero(params.beta[j].size());
        out.gradient.gamma[j].assign(n, RootTranslation::Zero());
        for (int i = 0; i + 1 < n; ++i) {
            const PoseVector d = params.theta[j][i + 1] - params.theta[j][i];
            out.value += scale * d.squaredNorm();
            out.gradient.theta[j][i + 1] += 2.0 * scale * d;
            out.gradient.theta[j][i] -= 2.0 * scale * d;
        }
    }
    return out;
}

/// Best rank-s approximation (truncated SVD). Identity when s >= min(rows, cols).
inline Eigen::MatrixXd lowrank_project(const Eigen::MatrixXd& matrix, int s)
{
    if (s < 1) {
        throw ParameterError("lowrank_project: s must be >= 1");
    }
    if (s >= std::min(matrix.rows(), matrix.cols())) {
        return matrix;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return svd.matrixU().leftCols(s) * svd.singularValues().head(s).asDiagonal() *
           svd.matrixV().leftCols(s).transpose();
}

/// Frame i of every video as rows of an M x 3J matrix.
inline Eigen::MatrixXd stacked_pose(const MotionParams& params, int frame)
{
    const int m = params.video_count();
    Eigen::MatrixXd out(m, params.theta.front()[frame].size());
    for (int j = 0; j < m; ++j) {
        out.row(j) = params.theta[j][frame].transpose();
    }
    return out;
}

/// Root trajectories as rows of an M x 3N matrix.
inline Eigen::MatrixXd stacked_trajectory(const MotionParams& params)
{
    const int m = params.video_count();
    const int n = params.frame_count();
    Eigen::MatrixXd out(m, 3 * n);
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
            out.block<1, 3>(j, 3 * i) = params.gamma[j][i].transpose();
        }
    }
    return out;
}

/// Z_i and Y as the best rank-s approximations of the current parameters.
inline AuxiliaryVars update_auxiliaries(const MotionParams& params, int s)
{
    AuxiliaryVars aux;
    aux.z.reserve(params.frame_count());
    for (int i = 0; i < params.frame_count(); ++i) {
        aux.z.push_back(lowrank_project(stacked_pose(params, i), s));
    }
    aux.y = lowrank_project(stacked_trajectory(params), s);
    return aux;
}

inline ObjectiveTerms objective_terms(const Skeleton& skel, const MotionParams& params,
                                      const std::vector<CameraModel>& cameras, const AuxiliaryVars& aux,
                                      const DetectionSet& det, const CommonTimeline& tl, const SolverConfig& cfg)
{
    detail::check_problem(skel, params, cameras, det, tl);
    const int m = params.video_count();
    const int n = params.frame_count();
    if (static_cast<int>(aux.z.size()) != n || aux.y.rows() != m || aux.y.cols() != 3 * n) {
        throw ParameterError("objective: auxiliary variables do not match the parameters");
    }
    const auto sc = detail::scales(det, tl);
    ObjectiveTerms t;
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
            const auto joints = forward_kinematics(skel, params.theta[j][i], params.beta[j], params.gamma[j][i]);
            long bad = -1;
            const double c =
                detail::frame_cost(joints, cameras[j], detail::keypoints_at(det, tl, j, i), cfg.geman_sigma, &bad);
            if (!std::isfinite(c)) {
                throw CheiralityError("video " + std::to_string(j) + " frame " + std::to_string(i) + ": joint " +
                                          std::to_string(bad) + " is behind the camera",
                                      bad);
            }
            t.reprojection += sc.data * c;
        }
    }
    t.temporal = temporal_loss(params).value;
    for (int i = 0; i < n; ++i) {
        t.pose_rank += sc.rank * (stacked_pose(params, i) - aux.z[i]).squaredNorm();
    }
    t.trajectory_rank = sc.rank * (stacked_trajectory(params) - aux.y).squaredNorm();
    t.total = t.reprojection + cfg.lambda_t * t.temporal + cfg.lambda_r1 * t.pose_rank +
              cfg.lambda_r2 * t.trajectory_rank;
    return t;
}

inline double total_objective(const Skeleton& skel, const MotionParams& params,
                              const std::vector<CameraModel>& cameras, const AuxiliaryVars& aux,
                              const DetectionSet& det, const CommonTimeline& tl, const SolverConfig& cfg)
{
    return objective_terms(skel, params, cameras, aux, det, tl, cfg).total;
}

namespace detail {

// Parameters of one group of videos that share a single parameter set: each
// video on its own, or all videos in shared-motion mode.
struct GroupParams {
    std::vector<PoseVector> theta;
    ShapeVector beta;
    std::vector<RootTranslation> gamma;
};

struct SolveContext {
    const Skeleton& skel;
    const DetectionSet& det;
    const CommonTimeline& tl;
    const std::vector<CameraModel>& cameras;
    const AuxiliaryVars& aux;
    const SolverConfig& cfg;
    Scales sc;
};

// The part of the total objective that depends on this group's parameters.
inline double group_objective(const SolveContext& ctx, const std::vector<int>& members, const GroupParams& p)
{
    const int n = static_cast<int>(p.theta.size());
    const double mult = static_cast<double>(members.size());
    double data = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto joints = forward_kinematics(ctx.skel, p.theta[i], p.beta, p.gamma[i]);
        for (int j : members) {
            const double c = frame_cost(joints, ctx.cameras[j], keypoints_at(ctx.det, ctx.tl, j, i), ctx.cfg.geman_sigma);
            if (!std::isfinite(c)) {
                return c;
            }
            data += c;
        }
    }
    double temporal = 0.0;
    for (int i = 0; i + 1 < n; ++i) {
        temporal += (p.theta[i + 1] - p.theta[i]).squaredNorm();
    }
    double pose_rank = 0.0;
    double traj_rank = 0.0;
    for (int j : members) {
        for (int i = 0; i < n; ++i) {
            pose_rank += (p.theta[i] - ctx.aux.z[i].row(j).transpose()).squaredNorm();
            traj_rank += (p.gamma[i] - ctx.aux.y.block<1, 3>(j, 3 * i).transpose()).squaredNorm();
        }
    }
    return ctx.sc.data * data + ctx.cfg.lambda_t * ctx.sc.temporal * mult * temporal +
           ctx.sc.rank * (ctx.cfg.lambda_r1 * pose_rank + ctx.cfg.lambda_r2 * traj_rank);
}

struct GroupDirection {
    GroupParams step;
    double slope = 0.0;  // gradient . step
};

// Gradient preconditioned by per-frame Gauss-Newton blocks over (theta_i,
// gamma_i) and one block over beta; the prior terms add their diagonal
// curvature. Cross-frame and frame-shape coupling is left out of the
// preconditioner, which stays positive definite, so the result is a descent
// direction.
inline GroupDirection group_direction(const SolveContext& ctx, const std::vector<int>& members,
                                      const GroupParams& p)
{
    const int n = static_cast<int>(p.theta.size());
    const int nj = ctx.skel.joint_count();
    const int pd = 3 * nj;
    const double mult = static_cast<double>(members.size());
    const double wt = ctx.cfg.lambda_t * ctx.sc.temporal * mult;
    const double wr1 = ctx.cfg.lambda_r1 * ctx.sc.rank;
    const double wr2 = ctx.cfg.lambda_r2 * ctx.sc.rank;

    GroupDirection out;
    out.step.theta.resize(n);
    out.step.gamma.resize(n);
    Eigen::VectorXd g_beta = Eigen::VectorXd::Zero(nj);
    Eigen::MatrixXd h_beta = Eigen::MatrixXd::Zero(nj, nj);
    const ChainCache cc(ctx.skel);

    for (int i = 0; i < n; ++i) {
        FrameSystem sys(nj);
        const auto st = fk_state(ctx.skel, p.theta[i], p.beta, p.gamma[i]);
        for (int j : members) {
            add_frame_system(ctx.skel, cc, st, p.theta[i], p.beta, ctx.cameras[j], keypoints_at(ctx.det, ctx.tl, j, i),
                             ctx.cfg.geman_sigma, ctx.sc.data, sys);
        }
        g_beta += sys.g_shape;
        h_beta += sys.h_shape;
        Eigen::VectorXd& gi = sys.g_pose;
        Eigen::MatrixXd& hi = sys.h_pose;

        int neighbours = 0;
        if (i > 0) {
            gi.head(pd) += 2.0 * wt * (p.theta[i] - p.theta[i - 1]);
            ++neighbours;
        }
        if (i + 1 < n) {
            gi.head(pd) -= 2.0 * wt * (p.theta[i + 1] - p.theta[i]);
            ++neighbours;
        }
        for (int j : members) {
            gi.head(pd) += 2.0 * wr1 * (p.theta[i] - ctx.aux.z[i].row(j).transpose());
            gi.tail<3>() += 2.0 * wr2 * (p.gamma[i] - ctx.aux.y.block<1, 3>(j, 3 * i).transpose());
        }
        hi.diagonal().head(pd).array() += 2.0 * (wt * neighbours + wr1 * mult);
        hi.diagonal().tail<3>().array() += 2.0 * wr2 * mult;
        hi.diagonal().array() += 1e-4 * hi.diagonal().mean() + 1e-12;

        const Eigen::VectorXd d = -hi.ldlt().solve(gi);
        out.step.theta[i] = d.head(pd);
        out.step.gamma[i] = d.tail<3>();
        out.slope += gi.dot(d);
    }
    h_beta.diagonal().array() += 1e-6 * h_beta.diagonal().mean() + 1e-12;
    out.step.beta = -h_beta.ldlt().solve(g_beta);
    out.slope += g_beta.dot(out.step.beta);
    return out;
}

inline GroupParams group_params(const MotionParams& params, int video)
{
    return {params.theta[video], params.beta[video], params.gamma[video]};
}

inline void store_group(MotionParams& params, const std::vector<int>& members, const GroupParams& p)
{
    for (int j : members) {
        params.theta[j] = p.theta;
        params.beta[j] = p.beta;
        params.gamma[j] = p.gamma;
    }
}

inline GroupParams moved(const GroupParams& p, const GroupParams& step, double alpha)
{
    GroupParams q = p;
    for (std::size_t i = 0; i < q.theta.size(); ++i) {
        q.theta[i] += alpha * step.theta[i];
        q.gamma[i] += alpha * step.gamma[i];
    }
    q.beta += alpha * step.beta;
    return q;
}

// Up to max_inner_iters Armijo-backtracked steps. Returns false if the line
// search underflowed before any stopping condition.
inline bool descend_group(const SolveContext& ctx, const std::vector<int>& members, GroupParams& p)
{
    constexpr double armijo_c = 1e-4;
    constexpr double min_step = 1e-10;
    double f = group_objective(ctx, members, p);
    for (int it = 0; it < ctx.cfg.max_inner_iters; ++it) {
        const auto dir = group_direction(ctx, members, p);
        if (!(dir.slope < 0.0)) {
            return true;  // stationary
        }
        double alpha = ctx.cfg.step_size;
        bool accepted = false;
        while (alpha >= min_step) {
            GroupParams q = moved(p, dir.step, alpha);
            const double fq = group_objective(ctx, members, q);
            if (fq <= f + armijo_c * alpha * dir.slope) {
                const double gain = f - fq;
                p = std::move(q);
                f = fq;
                accepted = true;
                if (gain <= 0.1 * ctx.cfg.convergence_tol * std::max(1.0, f)) {
                    return true;
                }
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            return false;
        }
    }
    return true;
}

inline std::vector<std::vector<int>> groups(int videos, bool shared)
{
    std::vector<std::vector<int>> out;
    if (shared) {
        out.emplace_back();
        for (int j = 0; j < videos; ++j) out.back().push_back(j);
    } else {
        for (int j = 0; j < videos; ++j) out.push_back({j});
    }
    return out;
}

inline std::vector<Joints3D> video_joints(const Skeleton& skel, const MotionParams& params, int video)
{
    std::vector<Joints3D> out;
    out.reserve(params.frame_count());
    for (int i = 0; i < params.frame_count(); ++i) {
        out.push_back(forward_kinematics(skel, params.theta[video][i], params.beta[video], params.gamma[video][i]));
    }
    return out;
}

} // namespace detail

/// World-frame joints of every video and common-timeline frame.
inline std::vector<std::vector<Joints3D>> solution_joints(const Skeleton& skel, const MotionParams& params)
{
    std::vector<std::vector<Joints3D>> out;
    for (int j = 0; j < params.video_count(); ++j) {
        out.push_back(detail::video_joints(skel, params, j));
    }
    return out;
}

/// Alternating minimization starting from `init`. The reference camera of the
/// timeline fixes the world frame and is never updated.
inline MotionSolution alternating_solve(const Skeleton& skel, const MotionSolution& init, const DetectionSet& det,
                                        const CommonTimeline& tl, const SolverConfig& cfg)
{
    cfg.validate();
    MotionSolution sol = init;
    detail::check_problem(skel, sol.params, sol.cameras, det, tl);
    const int m = sol.params.video_count();
    const auto grp = detail::groups(m, cfg.shared_motion);
    if (cfg.shared_motion) {
        detail::store_group(sol.params, grp.front(), detail::group_params(sol.params, tl.reference));
    }
    if (static_cast<int>(sol.aux.z.size()) != sol.params.frame_count() || sol.aux.y.rows() != m) {
        sol.aux = update_auxiliaries(sol.params, cfg.s);
    }
    sol.objective_trace.clear();
    sol.outer_iterations = 0;
    sol.converged = false;
    sol.line_search_failed = false;

    double f = total_objective(skel, sol.params, sol.cameras, sol.aux, det, tl, cfg);
    sol.objective_trace.push_back(f);
    const auto sc = detail::scales(det, tl);
    PnpOptions pnp;
    pnp.sigma = cfg.geman_sigma;
    pnp.max_iters = cfg.pnp_iters;

    for (int it = 0; it < cfg.max_outer_iters; ++it) {
        const detail::SolveContext ctx{skel, det, tl, sol.cameras, sol.aux, cfg, sc};
        for (const auto& members : grp) {
            auto p = detail::group_params(sol.params, members.front());
            if (!detail::descend_group(ctx, members, p)) {
                sol.line_search_failed = true;
            }
            detail::store_group(sol.params, members, p);
        }
        sol.aux = update_auxiliaries(sol.params, cfg.s);
        if (cfg.refine_cameras) {
            for (int j = 0; j < m; ++j) {
                if (j == tl.reference) continue;
                std::vector<FrameKeypoints> kps;
                for (int i = 0; i < tl.length(); ++i) kps.push_back(detail::keypoints_at(det, tl, j, i));
                try {
                    sol.cameras[j] = pnp_refine(sol.cameras[j], detail::video_joints(skel, sol.params, j), kps, pnp).camera;
                } catch (const InsufficientConstraintsError&) {
                    // nothing observed: keep the camera
                }
            }
        }
        const double fn = total_objective(skel, sol.params, sol.cameras, sol.aux, det, tl, cfg);
        sol.objective_trace.push_back(fn);
        ++sol.outer_iterations;
        const double change = std::abs(f - fn);
        f = fn;
        if (change <= cfg.convergence_tol * std::max(1.0, fn)) {
            sol.converged = true;
            break;
        }
    }
    return sol;
}

namespace detail {

// Damped Gauss-Newton on one frame's (theta, gamma) against its detections.
inline void refine_frame(const Skeleton& skel, const CameraModel& cam, const FrameKeypoints& kp, double sigma,
                         int iters, PoseVector& theta, const ShapeVector& beta, RootTranslation& gamma)
{
    const int nj = skel.joint_count();
    const int pd = 3 * nj;
    if ((kp.row(2).array() > 0.0).count() == 0) {
        return;
    }
    double cost = frame_cost(forward_kinematics(skel, theta, beta, gamma), cam, kp, sigma);
    if (!std::isfinite(cost)) {
        return;
    }
    double damping = 1e-2;
    const ChainCache cc(skel);
    for (int it = 0; it < iters; ++it) {
        FrameSystem sys(nj);
        add_frame_system(skel, cc, fk_state(skel, theta, beta, gamma), theta, beta, cam, kp, sigma, 1.0, sys);
        const Eigen::VectorXd& gi = sys.g_pose;
        const Eigen::MatrixXd& hi = sys.h_pose;
        // Isotropic damping: twists about a bone and leaf-joint rotations do
        // not move any joint, and a diagonal-scaled damping would let them
        // take arbitrarily large steps.
        const double scale = hi.diagonal().mean() + 1e-12;
        bool accepted = false;
        for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
            Eigen::MatrixXd a = hi;
            a.diagonal().array() += damping * scale;
            const Eigen::VectorXd d = -a.ldlt().solve(gi);
            const PoseVector t2 = theta + d.head(pd);
            const RootTranslation g2 = gamma + d.tail<3>();
            const double c2 = frame_cost(forward_kinematics(skel, t2, beta, g2), cam, kp, sigma);
            if (c2 < cost) {
                theta = t2;
                gamma = g2;
                const double gain = cost - c2;
                cost = c2;
                damping = std::max(damping / 3.0, 1e-6);
                accepted = true;
                if (gain <= 1e-12 * std::max(1.0, cost)) {
                    return;
                }
            } else {
                damping *= 4.0;
            }
        }
        if (!accepted) {
            return;
        }
    }
}

} // namespace detail

/// Builds the starting point of alternating_solve from per-video monocular
/// estimates (camera frame, indexed by each video's own frames):
///  - the timeline's reference camera defines the world frame;
///  - every other camera is the rigid transform that best maps the reference
///    video's joints onto its own over the synchronized frames;
///  - body parameters are moved into the world frame and each frame is then
///    refined against its detections.
inline MotionSolution initialize(const Skeleton& skel, const std::vector<VideoInitialPoses>& initial,
                                 const DetectionSet& det, const CommonTimeline& tl, const Intrinsics& intrinsics,
                                 const SolverConfig& cfg)
{
    cfg.validate();
    const int m = det.video_count();
    const int n = tl.length();
    if (static_cast<int>(initial.size()) != m || tl.videos() != m || m == 0) {
        throw ParameterError("initialize: initial poses, detections and timeline disagree on the video count");
    }
    for (int j = 0; j < m; ++j) {
        const auto& in = initial[j];
        if (static_cast<int>(in.theta.size()) != det.frame_count(j) ||
            static_cast<int>(in.gamma.size()) != det.frame_count(j)) {
            throw ParameterError("initialize: video " + std::to_string(j) +
                                 " has initial poses for a different number of frames");
        }
        for (int i = 0; i < n; ++i) {
            if (tl.maps[j][i] < 0 || tl.maps[j][i] >= det.frame_count(j)) {
                throw ParameterError("initialize: timeline maps outside video " + std::to_string(j));
            }
        }
    }

    std::vector<std::vector<Joints3D>> cam_joints(m);
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
            const int f = tl.maps[j][i];
            cam_joints[j].push_back(forward_kinematics(skel, initial[j].theta[f], initial[j].beta, initial[j].gamma[f]));
        }
    }

    MotionSolution sol;
    sol.params = MotionParams::zeros(m, n, skel);
    sol.cameras.resize(m);
    const Vec3 root_offset = skel.rest_offsets[0];
    for (int j = 0; j < m; ++j) {
        auto& cam = sol.cameras[j];
        cam.focal = intrinsics.focal;
        cam.principal_point = intrinsics.principal_point;
        if (j != tl.reference) {
            try {
                const auto rt = rigid_init_relative_camera(cam_joints[tl.reference], cam_joints[j]);
                cam.rotation = project_to_so3(rt.rotation);
                cam.translation = rt.translation;
            } catch (const DegeneracyError& e) {
                throw DegeneracyError("initialize: cannot align video " + std::to_string(j) + ": " + e.what());
            }
        }
        const Mat3 rt = cam.rotation.transpose();
        sol.params.beta[j] = initial[j].beta;
        const Vec3 bone0 = std::exp(initial[j].beta[0]) * root_offset;
        for (int i = 0; i < n; ++i) {
            const int f = tl.maps[j][i];
            PoseVector theta = initial[j].theta[f];
            theta.head<3>() = matrix_to_axis_angle(rt * axis_angle_to_matrix(theta.head<3>()));
            sol.params.theta[j][i] = theta;
            sol.params.gamma[j][i] = rt * (initial[j].gamma[f] + bone0 - cam.translation) - bone0;
        }
    }
    // Axis-angle values are only defined modulo 2 pi: unwrap the reference
    // video over time and express every other video next to it, so the
    // temporal and rank terms compare like with like.
    const auto unwrap = [&](PoseVector& t, const PoseVector& anchor) {
        for (int k = 0; k < skel.joint_count(); ++k) {
            t.segment<3>(3 * k) = nearest_equivalent_axis_angle(t.segment<3>(3 * k), anchor.segment<3>(3 * k));
        }
    };
    auto& ref_theta = sol.params.theta[tl.reference];
    for (int i = 1; i < n; ++i) unwrap(ref_theta[i], ref_theta[i - 1]);
    for (int j = 0; j < m; ++j) {
        if (j == tl.reference) continue;
        for (int i = 0; i < n; ++i) unwrap(sol.params.theta[j][i], ref_theta[i]);
    }
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
            detail::refine_frame(skel, sol.cameras[j], detail::keypoints_at(det, tl, j, i), cfg.geman_sigma,
                                 cfg.init_refine_iters, sol.params.theta[j][i], sol.params.beta[j],
                                 sol.params.gamma[j][i]);
        }
    }
    sol.aux = update_auxiliaries(sol.params, cfg.s);
    return sol;
}

} // namespace imocap
