#pragma once

// Articulated body model: a kinematic tree whose forward kinematics maps
// (pose, shape, root translation) to 3D joint positions.
//
//   p_0 = gamma + exp(beta_0) o_0
//   p_k = p_parent + G_parent exp(beta_k) o_k
//   G_k = G_parent Exp(theta_k),   G_{-1} = I
//
// theta_k is an axis-angle rotation, beta_k a log-scale on the bone leading
// into joint k and o_k its rest offset.

#include <imocap/errors.hpp>
#include <imocap/rotation.hpp>

#include <Eigen/Core>
#include <string>
#include <vector>

namespace imocap {

using Joints3D = Eigen::Matrix3Xd;
using PoseVector = Eigen::VectorXd;   // 3J axis-angle values
using ShapeVector = Eigen::VectorXd;  // J per-bone log-scales
using RootTranslation = Eigen::Vector3d;

struct Skeleton {
    std::vector<int> parents;        // parents[0] == -1
    std::vector<Vec3> rest_offsets;  // meters, relative to the parent joint

    int joint_count() const { return static_cast<int>(parents.size()); }
    int pose_dim() const { return 3 * joint_count(); }
    int shape_dim() const { return joint_count(); }

    /// Throws ParameterError unless this is a tree rooted at joint 0 with
    /// parents listed before children.
    void validate() const
    {
        if (parents.empty()) {
            throw ParameterError("skeleton: no joints");
        }
        if (parents.size() != rest_offsets.size()) {
            throw ParameterError("skeleton: parents and rest_offsets differ in length");
        }
        if (parents[0] != -1) {
            throw ParameterError("skeleton: joint 0 must be the root (parent -1)");
        }
        for (std::size_t k = 1; k < parents.size(); ++k) {
            if (parents[k] < 0 || parents[k] >= static_cast<int>(k)) {
                throw ParameterError("skeleton: joint " + std::to_string(k) +
                                     " must have a parent index in [0, " + std::to_string(k) + ")");
            }
        }
        for (const auto& o : rest_offsets) {
            if (!o.allFinite()) {
                throw ParameterError("skeleton: non-finite rest offset");
            }
        }
    }

    /// True when `joint` equals `ancestor` or lies below it in the tree.
    bool is_descendant(int joint, int ancestor) const
    {
        for (int k = joint; k >= 0; k = parents[k]) {
            if (k == ancestor) {
                return true;
            }
        }
        return false;
    }
};

/// 24-joint tree with SMPL's joint ordering and approximate adult proportions
/// (y up, z forward, meters).
inline Skeleton default_skeleton()
{
    Skeleton s;
    s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
    s.rest_offsets = {
        {0.0, 0.0, 0.0},        // pelvis
        {0.06, -0.09, 0.0},     // left hip
        {-0.06, -0.09, 0.0},    // right hip
        {0.0, 0.11, -0.02},     // spine 1
        {0.04, -0.38, 0.0},     // left knee
        {-0.04, -0.38, 0.0},    // right knee
        {0.0, 0.14, 0.01},      // spine 2
        {-0.01, -0.40, -0.04},  // left ankle
        {0.01, -0.40, -0.04},   // right ankle
        {0.0, 0.06, 0.02},      // spine 3
        {0.02, -0.06, 0.12},    // left foot
        {-0.02, -0.06, 0.12},   // right foot
        {0.0, 0.22, -0.03},     // neck
        {0.08, 0.12, -0.01},    // left collar
        {-0.08, 0.12, -0.01},   // right collar
        {0.0, 0.09, 0.05},      // head
        {0.12, 0.04, -0.01},    // left shoulder
        {-0.12, 0.04, -0.01},   // right shoulder
        {0.26, -0.01, -0.02},   // left elbow
        {-0.26, -0.01, -0.02},  // right elbow
        {0.25, 0.01, 0.0},      // left wrist
        {-0.25, 0.01, 0.0},     // right wrist
        {0.08, -0.01, -0.01},   // left hand
        {-0.08, -0.01, -0.01},  // right hand
    };
    return s;
}

namespace detail {

inline void check_dims(const Skeleton& skel, const PoseVector& theta, const ShapeVector& beta)
{
    if (theta.size() != skel.pose_dim()) {
        throw ParameterError("theta has " + std::to_string(theta.size()) + " entries, skeleton needs " +
                             std::to_string(skel.pose_dim()));
    }
    if (beta.size() != skel.shape_dim()) {
        throw ParameterError("beta has " + std::to_string(beta.size()) + " entries, skeleton needs " +
                             std::to_string(skel.shape_dim()));
    }
}

struct FkState {
    Joints3D positions;
    std::vector<Mat3> global;  // G_k
};

inline FkState fk_state(const Skeleton& skel, const PoseVector& theta, const ShapeVector& beta,
                        const RootTranslation& gamma)
{
    check_dims(skel, theta, beta);
    const int nj = skel.joint_count();
    FkState st;
    st.positions.resize(3, nj);
    st.global.resize(nj);
    for (int k = 0; k < nj; ++k) {
        const Mat3 local = axis_angle_to_matrix(theta.segment<3>(3 * k));
        const Vec3 bone = std::exp(beta[k]) * skel.rest_offsets[k];
        const int p = skel.parents[k];
        if (p < 0) {
            st.positions.col(k) = gamma + bone;
            st.global[k] = local;
        } else {
            st.positions.col(k) = st.positions.col(p) + st.global[p] * bone;
            st.global[k] = st.global[p] * local;
        }
    }
    return st;
}

} // namespace detail

inline Joints3D forward_kinematics(const Skeleton& skel, const PoseVector& theta, const ShapeVector& beta,
                                   const RootTranslation& gamma)
{
    return detail::fk_state(skel, theta, beta, gamma).positions;
}

/// Column blocks of the Jacobian returned by fk_jacobian.
struct FkLayout {
    int joints;
    int theta_offset() const { return 0; }
    int beta_offset() const { return 3 * joints; }
    int gamma_offset() const { return 4 * joints; }
    int cols() const { return 4 * joints + 3; }
};

/// d(joint coordinates)/d(theta, beta, gamma). Rows are joint-major
/// (x_0, y_0, z_0, x_1, ...), columns follow FkLayout.
inline Eigen::MatrixXd fk_jacobian(const Skeleton& skel, const PoseVector& theta, const ShapeVector& beta,
                                   const RootTranslation& gamma)
{
    const auto st = detail::fk_state(skel, theta, beta, gamma);
    const int nj = skel.joint_count();
    const FkLayout lay{nj};
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * nj, lay.cols());

    // Rotating joint a moves every strict descendant k by
    //   d p_k = -[p_k - p_a]_x G_a Jr(theta_a) d theta_a.
    std::vector<Eigen::Matrix3d> rot_lever(nj);
    for (int a = 0; a < nj; ++a) {
        rot_lever[a] = st.global[a] * right_jacobian(theta.segment<3>(3 * a));
    }
    for (int k = 0; k < nj; ++k) {
        jac.block<3, 3>(3 * k, lay.gamma_offset()).setIdentity();
        for (int a = skel.parents[k]; a >= 0; a = skel.parents[a]) {
            const Vec3 lever = st.positions.col(k) - st.positions.col(a);
            jac.block<3, 3>(3 * k, lay.theta_offset() + 3 * a) = -skew(lever) * rot_lever[a];
        }
        // Bone m scales every joint at or below m.
        for (int m = k; m >= 0; m = skel.parents[m]) {
            const int p = skel.parents[m];
            const Vec3 bone = std::exp(beta[m]) * skel.rest_offsets[m];
            jac.block<3, 1>(3 * k, lay.beta_offset() + m) = p < 0 ? bone : Vec3(st.global[p] * bone);
        }
    }
    return jac;
}

/// Per-frame pose estimates of one video (e.g. from a monocular regressor),
/// expressed in that video's camera frame.
struct VideoInitialPoses {
    ShapeVector beta;
    std::vector<PoseVector> theta;
    std::vector<RootTranslation> gamma;
};

} // namespace imocap
