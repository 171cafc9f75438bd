#pragma once

// Synthetic multi-video scenes with known ground truth.
//
// A procedural base motion is mixed per video with up to s_true - 1 smooth
// perturbation bases, so at any base time the stacked per-video pose vectors
// have rank <= s_true. Each video is temporally resampled (equal-interval
// anchors plus randomly densified segments), observed by a camera on a ring
// and given noisy 2D detections and, optionally, perturbed monocular 3D
// initial estimates in that camera's frame.

#include <imocap/body.hpp>
#include <imocap/detections.hpp>
#include <imocap/errors.hpp>
#include <imocap/geometry.hpp>
#include <imocap/rotation.hpp>
#include <imocap/sync.hpp>

#include <Eigen/Core>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace imocap {

struct SceneConfig {
    int videos = 4;
    int base_frames = 150;
    Skeleton skeleton = default_skeleton();
    int s_true = 1;
    double perturbation_deg = 0.0;      // amplitude of the per-video motion variation
    double trajectory_variation_m = 0.03;
    double shape_std = 0.0;             // per-video bone log-scale spread
    double ring_radius_m = 4.5;
    double camera_height_m = 1.0;
    double angle_jitter_deg = 10.0;
    double focal_px = 1000.0;
    Vec2 image_size{1000.0, 1000.0};
    double noise_px = 0.0;
    double occlusion_rate = 0.0;
    int sample_anchors = 30;            // N_s1
    int sample_segments = 10;           // N_s2
    double init_pose_noise_deg = 0.0;   // per-joint rotation error of the initial 3D estimates
    double init_translation_noise_m = 0.0;
    std::uint64_t seed = 0;

    void validate() const
    {
        skeleton.validate();
        if (videos < 1) throw ParameterError("scene: videos must be >= 1");
        if (s_true < 1) throw ParameterError("scene: s_true must be >= 1");
        if (perturbation_deg < 0 || noise_px < 0 || shape_std < 0 || init_pose_noise_deg < 0 ||
            init_translation_noise_m < 0 || trajectory_variation_m < 0) {
            throw ParameterError("scene: noise and amplitude values must be >= 0");
        }
        if (occlusion_rate < 0 || occlusion_rate >= 1) throw ParameterError("scene: occlusion_rate must be in [0, 1)");
        if (sample_anchors < 2) throw ParameterError("scene: sample_anchors must be >= 2");
        if (sample_segments < 0 || sample_segments > sample_anchors - 1) {
            throw ParameterError("scene: sample_segments must be in [0, sample_anchors - 1]");
        }
        if (base_frames < sample_anchors) throw ParameterError("scene: base_frames must be >= sample_anchors");
        if (!(focal_px > 0) || !(ring_radius_m > 1.5)) throw ParameterError("scene: bad camera geometry");
    }
};

struct GroundTruthVideo {
    std::vector<int> base_times;         // frame k shows base time base_times[k]
    std::vector<PoseVector> theta;       // world frame
    ShapeVector beta;
    std::vector<RootTranslation> gamma;
    std::vector<Joints3D> joints;        // world frame
    CameraModel camera;
};

struct GroundTruth {
    std::vector<GroundTruthVideo> videos;

    int video_count() const { return static_cast<int>(videos.size()); }
};

struct Scene {
    SceneConfig config;
    DetectionSet detections;
    std::vector<VideoInitialPoses> initial;
    GroundTruth truth;
};

/// Equal-interval anchors plus random extra frames from n_segments of the
/// gaps between them. Returns a sorted subset of `frames`.
inline std::vector<int> desynchronize(std::span<const int> frames, int n_anchors, int n_segments, std::uint64_t seed)
{
    const int len = static_cast<int>(frames.size());
    if (n_anchors < 2) throw ParameterError("desynchronize: need at least 2 anchors");
    if (n_segments < 0 || n_segments > n_anchors - 1) {
        throw ParameterError("desynchronize: segment count must be in [0, anchors - 1]");
    }
    if (len < n_anchors) throw ParameterError("desynchronize: sequence shorter than the anchor count");

    std::vector<int> anchors(n_anchors);
    for (int m = 0; m < n_anchors; ++m) {
        anchors[m] = static_cast<int>(std::lround(static_cast<double>(m) * (len - 1) / (n_anchors - 1)));
    }
    std::mt19937_64 rng(seed);
    std::vector<int> segs(n_anchors - 1);
    for (int m = 0; m < n_anchors - 1; ++m) segs[m] = m;
    std::shuffle(segs.begin(), segs.end(), rng);
    segs.resize(n_segments);
    std::sort(segs.begin(), segs.end());

    std::vector<int> picked = anchors;
    for (int s : segs) {
        const int lo = anchors[s] + 1;
        const int interior = anchors[s + 1] - lo;
        if (interior <= 0) {
            continue;
        }
        std::uniform_int_distribution<int> count_dist(1, interior);
        const int n = count_dist(rng);
        std::vector<int> pool(interior);
        for (int q = 0; q < interior; ++q) pool[q] = lo + q;
        std::shuffle(pool.begin(), pool.end(), rng);
        picked.insert(picked.end(), pool.begin(), pool.begin() + n);
    }
    std::sort(picked.begin(), picked.end());
    std::vector<int> out;
    out.reserve(picked.size());
    for (int p : picked) out.push_back(frames[p]);
    return out;
}

inline std::vector<int> desynchronize(int length, int n_anchors, int n_segments, std::uint64_t seed)
{
    std::vector<int> frames(std::max(length, 0));
    for (int i = 0; i < length; ++i) frames[i] = i;
    return desynchronize(std::span<const int>(frames), n_anchors, n_segments, seed);
}

/// Camera at `center` looking at `target`, image y pointing down in world -y.
inline CameraModel look_at_camera(const Vec3& center, const Vec3& target, double focal, const Vec2& pp)
{
    const Vec3 fwd = (target - center).normalized();
    const Vec3 right = fwd.cross(Vec3::UnitY()).normalized();
    const Vec3 down = fwd.cross(right);
    CameraModel cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = fwd.transpose();
    cam.rotation = project_to_so3(cam.rotation);
    cam.translation = -cam.rotation * center;
    cam.focal = focal;
    cam.principal_point = pp;
    return cam;
}

namespace detail {

// Sum of sinusoids per coordinate, sampled at integer times.
struct SineBank {
    Eigen::MatrixXd amp, freq, phase;  // dims x terms
    Eigen::VectorXd ramp;              // linear drift over the clip

    Eigen::VectorXd eval(double t, double duration) const
    {
        Eigen::VectorXd v = ramp * (t / duration - 0.5);
        for (Eigen::Index d = 0; d < amp.rows(); ++d) {
            for (Eigen::Index k = 0; k < amp.cols(); ++k) {
                v(d) += amp(d, k) * std::sin(freq(d, k) * t + phase(d, k));
            }
        }
        return v;
    }
};

inline SineBank random_bank(std::mt19937_64& rng, const Eigen::VectorXd& amplitude, double min_period,
                            double max_period, int terms, const Eigen::VectorXd& ramp)
{
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto dims = amplitude.size();
    SineBank b;
    b.amp.resize(dims, terms);
    b.freq.resize(dims, terms);
    b.phase.resize(dims, terms);
    for (Eigen::Index d = 0; d < dims; ++d) {
        for (int k = 0; k < terms; ++k) {
            b.amp(d, k) = amplitude(d) * (0.5 + 0.5 * u01(rng)) / terms;
            const double period = min_period + (max_period - min_period) * u01(rng);
            b.freq(d, k) = 2.0 * std::numbers::pi / period;
            b.phase(d, k) = 2.0 * std::numbers::pi * u01(rng);
        }
    }
    b.ramp = ramp;
    return b;
}

// Per-coordinate amplitude (radians) of the base action for the 24-joint tree;
// other skeletons get a uniform profile.
inline Eigen::VectorXd joint_amplitudes(const Skeleton& skel)
{
    const int nj = skel.joint_count();
    Eigen::VectorXd a = Eigen::VectorXd::Constant(3 * nj, 0.25);
    if (nj != 24) {
        a.head<3>().setConstant(0.2);
        return a;
    }
    auto set = [&](int j, double x, double y, double z) { a.segment<3>(3 * j) << x, y, z; };
    set(0, 0.15, 0.3, 0.1);     // pelvis orientation
    set(1, 0.7, 0.2, 0.25);     // hips
    set(2, 0.7, 0.2, 0.25);
    set(3, 0.25, 0.2, 0.15);    // spine
    set(4, 0.9, 0.05, 0.05);    // knees bend about x
    set(5, 0.9, 0.05, 0.05);
    set(6, 0.2, 0.15, 0.1);
    set(7, 0.3, 0.1, 0.1);      // ankles
    set(8, 0.3, 0.1, 0.1);
    set(9, 0.15, 0.15, 0.1);
    set(10, 0.1, 0.1, 0.1);
    set(11, 0.1, 0.1, 0.1);
    set(12, 0.3, 0.3, 0.2);     // neck
    set(13, 0.15, 0.2, 0.2);    // collars
    set(14, 0.15, 0.2, 0.2);
    set(15, 0.2, 0.3, 0.2);     // head
    set(16, 0.7, 0.6, 0.9);     // shoulders
    set(17, 0.7, 0.6, 0.9);
    set(18, 0.2, 1.0, 0.3);     // elbows
    set(19, 0.2, 1.0, 0.3);
    set(20, 0.3, 0.3, 0.3);     // wrists
    set(21, 0.3, 0.3, 0.3);
    set(22, 0.1, 0.1, 0.1);
    set(23, 0.1, 0.1, 0.1);
    return a;
}

// Rest pose for the 24-joint tree: arms lowered from the T-pose.
inline Eigen::VectorXd rest_bias(const Skeleton& skel)
{
    Eigen::VectorXd b = Eigen::VectorXd::Zero(3 * skel.joint_count());
    if (skel.joint_count() == 24) {
        b.segment<3>(3 * 16) << 0.0, 0.0, -1.0;
        b.segment<3>(3 * 17) << 0.0, 0.0, 1.0;
        b.segment<3>(3 * 18) << 0.0, -0.4, 0.0;
        b.segment<3>(3 * 19) << 0.0, 0.4, 0.0;
        b.segment<3>(3 * 4) << 0.4, 0.0, 0.0;
        b.segment<3>(3 * 5) << 0.4, 0.0, 0.0;
    }
    return b;
}

inline Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> n01;
    Vec3 v;
    do {
        v = Vec3(n01(rng), n01(rng), n01(rng));
    } while (v.norm() < 1e-6);
    return v.normalized();
}

} // namespace detail

/// Numerical rank of a matrix: singular values above tol * sigma_max.
inline int numerical_rank(const Eigen::MatrixXd& m, double tol = 1e-9)
{
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto s = svd.singularValues();
    if (s(0) <= 0.0) return 0;
    int r = 0;
    for (Eigen::Index k = 0; k < s.size(); ++k) {
        if (s(k) > tol * s(0)) ++r;
    }
    return r;
}

/// Generates detections, initial estimates and ground truth for `cfg`.
/// Deterministic for a given config (seed included).
inline Scene generate_scene(const SceneConfig& cfg)
{
    cfg.validate();
    const Skeleton& skel = cfg.skeleton;
    const int nj = skel.joint_count();
    const int pd = skel.pose_dim();
    const double dur = cfg.base_frames;
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01;

    // Base action: slow-to-medium sinusoids plus a drift so that no two
    // instants share a pose.
    Eigen::VectorXd ramp(pd);
    for (int d = 0; d < pd; ++d) ramp(d) = (u01(rng) - 0.5) * 0.6;
    ramp.segment<3>(0) << 0.0, 1.0, 0.0;  // the body turns by about a radian over the clip
    const auto base = detail::random_bank(rng, detail::joint_amplitudes(skel), 40.0, 160.0, 2, ramp);
    const Eigen::VectorXd bias = detail::rest_bias(skel);
    const Eigen::Vector3d traj_amp(0.15, 0.04, 0.15);
    const auto base_traj = detail::random_bank(rng, traj_amp, 80.0, 200.0, 1, Eigen::Vector3d(0.6, 0.0, 0.2));
    const Vec3 pelvis_height(0.0, 0.95, 0.0);

    const int extra = cfg.s_true - 1;
    std::vector<detail::SineBank> pert, pert_traj;
    const double pamp = deg2rad(cfg.perturbation_deg);
    for (int k = 0; k < extra; ++k) {
        pert.push_back(detail::random_bank(rng, Eigen::VectorXd::Constant(pd, pamp), 60.0, 200.0, 1,
                                           Eigen::VectorXd::Zero(pd)));
        pert_traj.push_back(detail::random_bank(rng, Eigen::Vector3d::Constant(cfg.trajectory_variation_m),
                                                80.0, 200.0, 1, Eigen::Vector3d::Zero()));
    }

    Scene scene;
    scene.config = cfg;
    scene.detections.videos.resize(cfg.videos);
    scene.initial.resize(cfg.videos);
    scene.truth.videos.resize(cfg.videos);

    const double angle0 = 2.0 * std::numbers::pi * u01(rng);
    const Vec3 look_target(0.3, 0.9, 0.1);
    const Vec2 pp = cfg.image_size / 2.0;

    for (int j = 0; j < cfg.videos; ++j) {
        auto& gt = scene.truth.videos[j];
        std::vector<double> weights(extra);
        for (int k = 0; k < extra; ++k) weights[k] = 2.0 * u01(rng) - 1.0;
        gt.beta = ShapeVector::Zero(nj);
        for (int b = 0; b < nj; ++b) gt.beta(b) = cfg.shape_std * n01(rng);

        const double ang = angle0 + 2.0 * std::numbers::pi * j / cfg.videos +
                           deg2rad(cfg.angle_jitter_deg) * (2.0 * u01(rng) - 1.0);
        const Vec3 center(look_target.x() + cfg.ring_radius_m * std::cos(ang), cfg.camera_height_m,
                          look_target.z() + cfg.ring_radius_m * std::sin(ang));
        gt.camera = look_at_camera(center, look_target, cfg.focal_px, pp);

        gt.base_times = desynchronize(cfg.base_frames, cfg.sample_anchors, cfg.sample_segments,
                                      cfg.seed * 1000003ULL + 7919ULL * static_cast<std::uint64_t>(j) + 17ULL);
        for (int t : gt.base_times) {
            PoseVector th = bias + base.eval(t, dur);
            RootTranslation ga = pelvis_height + base_traj.eval(t, dur);
            for (int k = 0; k < extra; ++k) {
                th += weights[k] * pert[k].eval(t, dur);
                ga += weights[k] * pert_traj[k].eval(t, dur);
            }
            gt.theta.push_back(th);
            gt.gamma.push_back(ga);
            gt.joints.push_back(forward_kinematics(skel, th, gt.beta, ga));
        }

        auto& det = scene.detections.videos[j];
        auto& init = scene.initial[j];
        init.beta = gt.beta;
        for (std::size_t f = 0; f < gt.base_times.size(); ++f) {
            const Eigen::Matrix2Xd uv = project(gt.camera, gt.joints[f]);
            FrameKeypoints kp(3, nj);
            for (int z = 0; z < nj; ++z) {
                kp(0, z) = uv(0, z) + cfg.noise_px * n01(rng);
                kp(1, z) = uv(1, z) + cfg.noise_px * n01(rng);
                kp(2, z) = (cfg.occlusion_rate > 0 && u01(rng) < cfg.occlusion_rate) ? 0.0 : 1.0;
            }
            det.push_back(kp);

            // Monocular estimate expressed in this camera's frame.
            PoseVector th = gt.theta[f];
            const Mat3 root_cam = gt.camera.rotation * axis_angle_to_matrix(th.head<3>());
            th.head<3>() = matrix_to_axis_angle(root_cam);
            RootTranslation ga = gt.camera.rotation * gt.gamma[f] + gt.camera.translation;
            if (cfg.init_pose_noise_deg > 0) {
                const double a = deg2rad(cfg.init_pose_noise_deg);
                for (int z = 0; z < nj; ++z) {
                    const Mat3 noisy = axis_angle_to_matrix(th.segment<3>(3 * z)) *
                                       axis_angle_to_matrix(a * detail::random_unit(rng));
                    th.segment<3>(3 * z) = nearest_equivalent_axis_angle(matrix_to_axis_angle(noisy),
                                                                         th.segment<3>(3 * z));
                }
            }
            for (int c = 0; c < 3; ++c) ga(c) += cfg.init_translation_noise_m * n01(rng);
            init.theta.push_back(th);
            init.gamma.push_back(ga);
        }
    }
    return scene;
}

/// True correspondences for a chosen reference: each reference frame maps to
/// the frame of video j nearest in base time. Equidistant candidates are
/// split by clean 3D pose distance (measured from the lower-indexed video onto
/// the higher-indexed one, as affinity_grid does), then by lower index.
inline CommonTimeline truth_timeline(const GroundTruth& gt, int reference)
{
    CommonTimeline t;
    t.reference = reference;
    const auto& ref = gt.videos.at(reference);
    t.maps.resize(gt.videos.size());
    for (std::size_t j = 0; j < gt.videos.size(); ++j) {
        const auto& v = gt.videos[j];
        auto& map = t.maps[j];
        const auto tie_distance = [&](std::size_t i, std::size_t k) {
            return static_cast<int>(j) < reference ? pose_distance(v.joints[k], ref.joints[i])
                                                   : pose_distance(ref.joints[i], v.joints[k]);
        };
        map.resize(ref.base_times.size());
        for (std::size_t i = 0; i < ref.base_times.size(); ++i) {
            const int target = ref.base_times[i];
            int best = 0;
            int best_gap = std::abs(v.base_times[0] - target);
            double best_d = -1.0;
            for (std::size_t k = 1; k < v.base_times.size(); ++k) {
                const int gap = std::abs(v.base_times[k] - target);
                if (gap < best_gap) {
                    best = static_cast<int>(k);
                    best_gap = gap;
                    best_d = -1.0;
                } else if (gap == best_gap) {
                    if (best_d < 0) best_d = tie_distance(i, static_cast<std::size_t>(best));
                    const double d = tie_distance(i, k);
                    if (d < best_d) {
                        best = static_cast<int>(k);
                        best_d = d;
                    }
                }
            }
            map[i] = best;
        }
    }
    return t;
}

} // namespace imocap
