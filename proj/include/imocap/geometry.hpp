#pragma once

#include <imocap/detections.hpp>
#include <imocap/errors.hpp>
#include <imocap/robust_loss.hpp>
#include <imocap/rotation.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace imocap {

/// Pinhole camera; maps world point X to camera frame R X + T.
struct CameraModel {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double focal = 5000.0;
    Vec2 principal_point = Vec2(500.0, 500.0);

    void validate() const
    {
        if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
            std::abs(rotation.determinant() - 1.0) > 1e-9) {
            throw ParameterError("camera rotation is not in SO(3)");
        }
        if (!(focal > 0.0) || !std::isfinite(focal)) {
            throw ParameterError("camera focal must be positive");
        }
        if (!translation.allFinite() || !principal_point.allFinite()) {
            throw ParameterError("camera has non-finite entries");
        }
    }

    Vec3 center() const { return -rotation.transpose() * translation; }
};

/// Focal length used when intrinsics are unknown: a large value relative to
/// the image so projection is close to weak perspective.
inline constexpr double kDefaultFocalPerImagePixel = 5.0;

inline Eigen::Matrix2Xd project(const CameraModel& cam, const Eigen::Matrix3Xd& points)
{
    Eigen::Matrix2Xd out(2, points.cols());
    for (Eigen::Index k = 0; k < points.cols(); ++k) {
        const Vec3 pc = cam.rotation * points.col(k) + cam.translation;
        if (!(pc.z() > 0.0)) {
            throw CheiralityError("point " + std::to_string(k) + " has non-positive depth " +
                                      std::to_string(pc.z()),
                                  static_cast<long>(k));
        }
        out.col(k) = cam.focal * pc.head<2>() / pc.z() + cam.principal_point;
    }
    return out;
}

/// d(pixel)/d(camera-frame point).
inline Eigen::Matrix<double, 2, 3> projection_jacobian(double focal, const Vec3& pc)
{
    const double iz = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> j;
    j << focal * iz, 0.0, -focal * pc.x() * iz * iz,
         0.0, focal * iz, -focal * pc.y() * iz * iz;
    return j;
}

struct SimilarityTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double residual_rmse = 0.0;

    Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& pts) const
    {
        return ((scale * rotation) * pts).colwise() + translation;
    }
};

/// Least-squares similarity (or rigid, with_scale = false) transform taking
/// `source` onto `target`: minimizes |target - (s R source + t)|_F.
///
/// residual_rmse is the per-point RMS of what remains, in target units. With
/// scale enabled the measure is directional: d(X -> Y) != d(Y -> X) in general
/// because shrinking the source is free. Without scale it is symmetric.
inline SimilarityTransform procrustes_align(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target,
                                            bool with_scale = true)
{
    const Eigen::Index n = source.cols();
    if (n != target.cols()) {
        throw ParameterError("procrustes_align: point counts differ");
    }
    if (n < 3) {
        throw ParameterError("procrustes_align: need at least 3 points");
    }
    const Vec3 mu_s = source.rowwise().mean();
    const Vec3 mu_t = target.rowwise().mean();
    const Eigen::Matrix3Xd sc = source.colwise() - mu_s;
    const Eigen::Matrix3Xd tc = target.colwise() - mu_t;

    Eigen::JacobiSVD<Eigen::Matrix3Xd> shape(sc);
    const auto sv = shape.singularValues();
    if (!(sv(0) > 1e-12) || sv(1) <= 1e-9 * sv(0)) {
        throw DegeneracyError("procrustes_align: centered source has rank < 2");
    }

    const Mat3 cov = tc * sc.transpose();
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 d(1.0, 1.0, 1.0);
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
        d(2) = -1.0;
    }
    SimilarityTransform out;
    out.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    out.scale = with_scale ? svd.singularValues().dot(d) / sc.squaredNorm() : 1.0;
    out.translation = mu_t - out.scale * out.rotation * mu_s;
    out.residual_rmse = std::sqrt((target - out.apply(source)).squaredNorm() / static_cast<double>(n));
    return out;
}

/// Rigid transform (R, T) with other ~= R ref + T, fitted jointly over all
/// corresponding frames.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
};

inline RigidTransform rigid_init_relative_camera(std::span<const Eigen::Matrix3Xd> ref_poses,
                                                 std::span<const Eigen::Matrix3Xd> other_poses)
{
    if (ref_poses.empty() || ref_poses.size() != other_poses.size()) {
        throw ParameterError("rigid_init_relative_camera: need equally many (>= 1) frames on both sides");
    }
    Eigen::Index total = 0;
    for (std::size_t f = 0; f < ref_poses.size(); ++f) {
        if (ref_poses[f].cols() != other_poses[f].cols()) {
            throw ParameterError("rigid_init_relative_camera: joint counts differ at frame " + std::to_string(f));
        }
        total += ref_poses[f].cols();
    }
    Eigen::Matrix3Xd src(3, total), dst(3, total);
    Eigen::Index at = 0;
    for (std::size_t f = 0; f < ref_poses.size(); ++f) {
        const auto c = ref_poses[f].cols();
        src.middleCols(at, c) = ref_poses[f];
        dst.middleCols(at, c) = other_poses[f];
        at += c;
    }
    const auto sim = procrustes_align(src, dst, false);
    return {sim.rotation, sim.translation};
}

struct PnpOptions {
    double sigma = 10.0;       // robust scale, pixels
    int max_iters = 50;
    double tol = 1e-12;        // relative cost change
    bool optimize_focal = false;
};

struct PnpResult {
    CameraModel camera;
    std::vector<double> cost_trace;  // robust cost after each accepted step, starting with the initial cost
};

namespace detail {

// Confidence-weighted Geman-McClure cost of a camera over paired frames.
// Returns +inf when any weighted point falls behind the camera.
inline double pnp_cost(const CameraModel& cam, std::span<const Eigen::Matrix3Xd> joints,
                       std::span<const FrameKeypoints> kps, double sigma)
{
    double cost = 0.0;
    for (std::size_t f = 0; f < joints.size(); ++f) {
        for (Eigen::Index z = 0; z < joints[f].cols(); ++z) {
            const double c = kps[f](2, z);
            if (c <= 0.0) {
                continue;
            }
            const Vec3 pc = cam.rotation * joints[f].col(z) + cam.translation;
            if (!(pc.z() > 0.0)) {
                return std::numeric_limits<double>::infinity();
            }
            const Vec2 u = cam.focal * pc.head<2>() / pc.z() + cam.principal_point;
            cost += c * geman_mcclure(kps[f].block<2, 1>(0, z) - u, sigma);
        }
    }
    return cost;
}

} // namespace detail

/// Refines one camera's extrinsics (and optionally focal) against all frames
/// of its video by damped Gauss-Newton on the robust reprojection cost.
/// Steps that do not lower the cost are rejected, so the cost never rises.
inline PnpResult pnp_refine(const CameraModel& camera_init, std::span<const Eigen::Matrix3Xd> joints_per_frame,
                            std::span<const FrameKeypoints> detections, const PnpOptions& opt = {})
{
    if (joints_per_frame.size() != detections.size()) {
        throw ParameterError("pnp_refine: joints and detections differ in frame count");
    }
    int constrained = 0;
    for (std::size_t f = 0; f < detections.size(); ++f) {
        if (detections[f].cols() != joints_per_frame[f].cols()) {
            throw ParameterError("pnp_refine: joint count mismatch at frame " + std::to_string(f));
        }
        constrained += static_cast<int>((detections[f].row(2).array() > 0.0).count());
    }
    if (constrained < 3) {
        throw InsufficientConstraintsError("pnp_refine: fewer than 3 observations with nonzero confidence");
    }

    const int np = opt.optimize_focal ? 7 : 6;
    PnpResult res;
    res.camera = camera_init;
    double cost = detail::pnp_cost(res.camera, joints_per_frame, detections, opt.sigma);
    if (!std::isfinite(cost)) {
        throw CheiralityError("pnp_refine: initial camera sees points behind it", -1);
    }
    res.cost_trace.push_back(cost);
    double damping = 1e-4;

    for (int it = 0; it < opt.max_iters; ++it) {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(np, np);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(np);
        for (std::size_t f = 0; f < joints_per_frame.size(); ++f) {
            for (Eigen::Index z = 0; z < joints_per_frame[f].cols(); ++z) {
                const double c = detections[f](2, z);
                if (c <= 0.0) {
                    continue;
                }
                const Vec3 rx = res.camera.rotation * joints_per_frame[f].col(z);
                const Vec3 pc = rx + res.camera.translation;
                const Vec2 u = res.camera.focal * pc.head<2>() / pc.z() + res.camera.principal_point;
                const Vec2 r = detections[f].block<2, 1>(0, z) - u;
                const double w = c * geman_mcclure_weight(r.squaredNorm(), opt.sigma);
                Eigen::Matrix<double, 2, Eigen::Dynamic> ju(2, np);
                const auto jp = projection_jacobian(res.camera.focal, pc);
                ju.leftCols<3>() = -jp * skew(rx);
                ju.middleCols<3>(3) = jp;
                if (opt.optimize_focal) {
                    ju.col(6) = pc.head<2>() / pc.z();
                }
                h.noalias() += 2.0 * w * ju.transpose() * ju;
                g.noalias() -= 2.0 * w * ju.transpose() * r;
            }
        }
        bool accepted = false;
        for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
            Eigen::MatrixXd a = h;
            a.diagonal().array() += damping * (h.diagonal().array() + 1e-9);
            const Eigen::VectorXd step = a.ldlt().solve(-g);
            CameraModel trial = res.camera;
            trial.rotation = project_to_so3(axis_angle_to_matrix(step.head<3>()) * res.camera.rotation);
            trial.translation += step.segment<3>(3);
            if (opt.optimize_focal) {
                trial.focal = std::max(1e-6, trial.focal + step(6));
            }
            const double tc = detail::pnp_cost(trial, joints_per_frame, detections, opt.sigma);
            if (tc <= cost) {
                const double rel = (cost - tc) / std::max(cost, 1e-300);
                res.camera = trial;
                cost = tc;
                res.cost_trace.push_back(cost);
                damping = std::max(damping / 3.0, 1e-9);
                accepted = true;
                if (rel < opt.tol || cost == 0.0) {
                    return res;
                }
            } else {
                damping *= 4.0;
            }
        }
        if (!accepted) {
            break;
        }
    }
    return res;
}

} // namespace imocap
