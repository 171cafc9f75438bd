#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>
#include <numbers>

namespace imocap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline Mat3 skew(const Vec3& v)
{
    Mat3 s;
    s << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
         -v.y(), v.x(), 0;
    return s;
}

/// Rodrigues formula. Small angles fall back to the second-order series.
inline Mat3 axis_angle_to_matrix(const Vec3& w)
{
    const double t2 = w.squaredNorm();
    const Mat3 k = skew(w);
    if (t2 < 1e-16) {
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    const double t = std::sqrt(t2);
    return Mat3::Identity() + (std::sin(t) / t) * k + ((1.0 - std::cos(t)) / t2) * k * k;
}

/// Inverse of axis_angle_to_matrix with the angle in [0, pi].
inline Vec3 matrix_to_axis_angle(const Mat3& r)
{
    const Eigen::AngleAxisd aa(r);
    return aa.angle() * aa.axis();
}

/// Same rotation with angle folded into [0, pi].
inline Vec3 canonicalize_axis_angle(const Vec3& w)
{
    return matrix_to_axis_angle(axis_angle_to_matrix(w));
}

/// The axis-angle vector of the same rotation as w that lies closest to ref.
/// Equivalent vectors are (t + 2 pi k) * axis for integer k.
inline Vec3 nearest_equivalent_axis_angle(const Vec3& w, const Vec3& ref)
{
    const double t = w.norm();
    if (t < 1e-12) {
        // identity: candidates are 2 pi k along any axis; pick ref's direction
        const double r = ref.norm();
        if (r < std::numbers::pi) return Vec3::Zero();
        const double k = std::round(r / (2.0 * std::numbers::pi));
        return (2.0 * std::numbers::pi * k / r) * ref;
    }
    const Vec3 axis = w / t;
    // Distance to ref along the axis line is minimized at ref . axis.
    const double k = std::round((ref.dot(axis) - t) / (2.0 * std::numbers::pi));
    return (t + 2.0 * std::numbers::pi * k) * axis;
}

/// Right Jacobian of SO(3): Exp(w + d) ~= Exp(w) Exp(Jr(w) d).
inline Mat3 right_jacobian(const Vec3& w)
{
    const double t2 = w.squaredNorm();
    const Mat3 k = skew(w);
    if (t2 < 1e-10) {
        return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    const double t = std::sqrt(t2);
    return Mat3::Identity() - ((1.0 - std::cos(t)) / t2) * k + ((t - std::sin(t)) / (t2 * t)) * k * k;
}

/// Nearest rotation in Frobenius norm.
inline Mat3 project_to_so3(const Mat3& m)
{
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) {
        d(2, 2) = -1;
    }
    return svd.matrixU() * d * svd.matrixV().transpose();
}

inline double rotation_angle_between(const Mat3& a, const Mat3& b)
{
    const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

} // namespace imocap
