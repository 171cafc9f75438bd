#include <imocap/metrics.hpp>
#include <imocap/solver.hpp>
#include <imocap/synth.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace imocap;

namespace {

SceneConfig small_scene(std::uint64_t seed, int videos = 2, int frames = 3)
{
    SceneConfig c;
    c.seed = seed;
    c.videos = videos;
    c.base_frames = 10 * frames;
    c.sample_anchors = frames;
    c.sample_segments = 0;
    return c;
}

// Ground-truth parameters and cameras laid out on `tl`.
MotionSolution truth_solution(const Scene& scene, const CommonTimeline& tl, int s)
{
    const int m = scene.truth.video_count();
    MotionSolution sol;
    sol.params = MotionParams::zeros(m, tl.length(), scene.config.skeleton);
    for (int j = 0; j < m; ++j) {
        const auto& v = scene.truth.videos[j];
        sol.params.beta[j] = v.beta;
        sol.cameras.push_back(v.camera);
        for (int i = 0; i < tl.length(); ++i) {
            sol.params.theta[j][i] = v.theta[tl.maps[j][i]];
            sol.params.gamma[j][i] = v.gamma[tl.maps[j][i]];
        }
    }
    sol.aux = update_auxiliaries(sol.params, s);
    return sol;
}

void perturb(MotionParams& p, std::mt19937_64& rng, double rot, double trans, double shape)
{
    std::normal_distribution<double> n;
    for (int j = 0; j < p.video_count(); ++j) {
        for (auto& t : p.theta[j]) {
            for (auto& x : t) x += rot * n(rng);
        }
        for (auto& g : p.gamma[j]) {
            for (auto& x : g) x += trans * n(rng);
        }
        for (auto& x : p.beta[j]) x += shape * n(rng);
    }
}

// p + eps * d on every block.
MotionParams shifted(const MotionParams& p, const MotionParams& d, double eps)
{
    MotionParams q = p;
    for (int j = 0; j < p.video_count(); ++j) {
        q.beta[j] += eps * d.beta[j];
        for (int i = 0; i < p.frame_count(); ++i) {
            q.theta[j][i] += eps * d.theta[j][i];
            q.gamma[j][i] += eps * d.gamma[j][i];
        }
    }
    return q;
}

double dot(const MotionParams& a, const MotionParams& b)
{
    double s = 0.0;
    for (int j = 0; j < a.video_count(); ++j) {
        s += a.beta[j].dot(b.beta[j]);
        for (int i = 0; i < a.frame_count(); ++i) {
            s += a.theta[j][i].dot(b.theta[j][i]) + a.gamma[j][i].dot(b.gamma[j][i]);
        }
    }
    return s;
}

MotionParams random_direction(const MotionParams& like, std::mt19937_64& rng)
{
    MotionParams d = MotionParams::zeros(like.video_count(), like.frame_count(), default_skeleton());
    perturb(d, rng, 1.0, 1.0, 1.0);
    return d;
}

int numerical_rank_rel(const Eigen::MatrixXd& m)
{
    const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    return static_cast<int>((s.array() > 1e-9 * s(0)).count());
}

} // namespace

TEST(Reprojection, ZeroAtTruthWithNoiselessDetections)
{
    const Scene scene = generate_scene(small_scene(1));
    const auto tl = truth_timeline(scene.truth, 0);
    const auto sol = truth_solution(scene, tl, 1);
    const auto r = reprojection_loss(scene.config.skeleton, sol.params, sol.cameras, scene.detections, tl, {});
    EXPECT_LT(r.value, 1e-20);
    EXPECT_LT(std::sqrt(dot(r.gradient, r.gradient)), 1e-8);
}

TEST(Reprojection, ZeroConfidenceGivesZeroLoss)
{
    Scene scene = generate_scene(small_scene(2));
    for (auto& v : scene.detections.videos) {
        for (auto& kp : v) kp.row(2).setZero();
    }
    const auto tl = truth_timeline(scene.truth, 0);
    auto sol = truth_solution(scene, tl, 1);
    std::mt19937_64 rng(2);
    perturb(sol.params, rng, 0.3, 0.1, 0.1);
    const auto r = reprojection_loss(scene.config.skeleton, sol.params, sol.cameras, scene.detections, tl, {});
    EXPECT_EQ(r.value, 0.0);
}

TEST(Reprojection, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(3);
    int checked = 0;
    for (int inst = 0; inst < 100; ++inst) {
        SceneConfig c = small_scene(100 + inst);
        c.noise_px = 3.0;
        const Scene scene = generate_scene(c);
        const auto tl = truth_timeline(scene.truth, 0);
        auto sol = truth_solution(scene, tl, 1);
        perturb(sol.params, rng, 0.05, 0.02, 0.05);
        SolverConfig cfg;
        cfg.geman_sigma = 5.0 + 20.0 * std::uniform_real_distribution<double>(0, 1)(rng);
        const auto& skel = c.skeleton;
        const auto r = reprojection_loss(skel, sol.params, sol.cameras, scene.detections, tl, cfg);
        const auto d = random_direction(sol.params, rng);
        const double h = 1e-6;
        const double fp = reprojection_loss(skel, shifted(sol.params, d, h), sol.cameras, scene.detections, tl, cfg).value;
        const double fm = reprojection_loss(skel, shifted(sol.params, d, -h), sol.cameras, scene.detections, tl, cfg).value;
        const double fd = (fp - fm) / (2 * h);
        const double an = dot(r.gradient, d);
        EXPECT_NEAR(an, fd, 1e-4 * std::max(std::abs(fd), 1e-8)) << "instance " << inst;
        ++checked;
    }
    EXPECT_EQ(checked, 100);
}

TEST(Reprojection, CheiralityNamesVideoAndFrame)
{
    const Scene scene = generate_scene(small_scene(4));
    const auto tl = truth_timeline(scene.truth, 0);
    auto sol = truth_solution(scene, tl, 1);
    sol.params.gamma[1][2] = sol.cameras[1].rotation.transpose() * (Vec3(0, 0, -3) - sol.cameras[1].translation);
    try {
        reprojection_loss(scene.config.skeleton, sol.params, sol.cameras, scene.detections, tl, {});
        FAIL() << "expected a cheirality error";
    } catch (const CheiralityError& e) {
        EXPECT_NE(std::string(e.what()).find("video 1 frame 2"), std::string::npos) << e.what();
    }
}

TEST(Temporal, ConstantIsZeroAndSingleCoordinateGivesDeltaSquared)
{
    const Skeleton skel = default_skeleton();
    MotionParams p = MotionParams::zeros(1, 2, skel);
    EXPECT_EQ(temporal_loss(p).value, 0.0);
    p.theta[0][1](7) = 0.3;
    EXPECT_NEAR(temporal_loss(p).value, 0.09, 1e-15);
}

TEST(Temporal, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(5);
    for (int inst = 0; inst < 100; ++inst) {
        MotionParams p = MotionParams::zeros(3, 5, default_skeleton());
        perturb(p, rng, 0.5, 0.5, 0.5);
        const auto d = random_direction(p, rng);
        const double h = 1e-6;
        const double fd = (temporal_loss(shifted(p, d, h)).value - temporal_loss(shifted(p, d, -h)).value) / (2 * h);
        EXPECT_NEAR(dot(temporal_loss(p).gradient, d), fd, 1e-4 * std::abs(fd));
    }
}

TEST(LowRank, Examples)
{
    const Eigen::Vector3d u(1, 2, -1);
    const Eigen::Vector4d v(0.5, -1, 3, 2);
    const Eigen::MatrixXd r1 = u * v.transpose();
    EXPECT_LT((lowrank_project(r1, 1) - r1).cwiseAbs().maxCoeff(), 1e-12);

    Eigen::MatrixXd d = Eigen::Vector2d(3, 1).asDiagonal();
    Eigen::MatrixXd expect = Eigen::Vector2d(3, 0).asDiagonal();
    EXPECT_LT((lowrank_project(d, 1) - expect).cwiseAbs().maxCoeff(), 1e-12);

    const Eigen::MatrixXd any = Eigen::MatrixXd::Random(3, 5);
    EXPECT_EQ(lowrank_project(any, 3), any);
    EXPECT_EQ(lowrank_project(any, 7), any);
    EXPECT_THROW(lowrank_project(any, 0), ParameterError);
}

TEST(LowRank, EckartYoungSpotCheck)
{
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n;
    Eigen::MatrixXd a(4, 6);
    for (auto& x : a.reshaped()) x = n(rng);
    const Eigen::MatrixXd p = lowrank_project(a, 2);
    EXPECT_EQ(numerical_rank_rel(p), 2);
    const double best = (a - p).norm();
    for (int t = 0; t < 10000; ++t) {
        Eigen::MatrixXd l(4, 2), r(2, 6);
        for (auto& x : l.reshaped()) x = n(rng);
        for (auto& x : r.reshaped()) x = n(rng);
        // Scale the candidate optimally so the comparison is not trivially won.
        const Eigen::MatrixXd c = l * r;
        const double k = (a.cwiseProduct(c)).sum() / c.squaredNorm();
        ASSERT_LE(best, (a - k * c).norm() + 1e-12);
    }
}

TEST(LowRank, AuxiliariesHaveRankAtMostS)
{
    std::mt19937_64 rng(7);
    for (int s : {1, 2}) {
        MotionParams p = MotionParams::zeros(4, 6, default_skeleton());
        perturb(p, rng, 0.5, 0.5, 0.0);
        const auto aux = update_auxiliaries(p, s);
        for (const auto& z : aux.z) EXPECT_LE(numerical_rank_rel(z), s);
        EXPECT_LE(numerical_rank_rel(aux.y), s);
    }
}

TEST(Objective, ComposesItsTerms)
{
    SceneConfig c = small_scene(8, 3, 4);
    c.noise_px = 2.0;
    const Scene scene = generate_scene(c);
    const auto tl = truth_timeline(scene.truth, 0);
    auto sol = truth_solution(scene, tl, 1);
    std::mt19937_64 rng(8);
    perturb(sol.params, rng, 0.05, 0.02, 0.02);

    SolverConfig only_data;
    only_data.lambda_t = only_data.lambda_r1 = only_data.lambda_r2 = 0.0;
    const double l2d = reprojection_loss(c.skeleton, sol.params, sol.cameras, scene.detections, tl, only_data).value;
    EXPECT_NEAR(total_objective(c.skeleton, sol.params, sol.cameras, sol.aux, scene.detections, tl, only_data), l2d,
                1e-15);

    // theta_i = Z_i and gamma = Y exactly: the coupling terms vanish.
    const auto exact = update_auxiliaries(sol.params, 3);
    const auto t = objective_terms(c.skeleton, sol.params, sol.cameras, exact, scene.detections, tl, {});
    EXPECT_EQ(t.pose_rank, 0.0);
    EXPECT_EQ(t.trajectory_rank, 0.0);

    const SolverConfig cfg;
    const auto full = objective_terms(c.skeleton, sol.params, sol.cameras, sol.aux, scene.detections, tl, cfg);
    EXPECT_NEAR(full.reprojection, l2d, 1e-15);
    EXPECT_NEAR(full.temporal, temporal_loss(sol.params).value, 1e-15);
    double pr = 0.0;
    for (int i = 0; i < tl.length(); ++i) pr += (stacked_pose(sol.params, i) - sol.aux.z[i]).squaredNorm();
    EXPECT_NEAR(full.pose_rank, pr / (3.0 * tl.length()), 1e-14);
    EXPECT_NEAR(full.total,
                l2d + cfg.lambda_t * full.temporal + cfg.lambda_r1 * full.pose_rank +
                    cfg.lambda_r2 * full.trajectory_rank,
                1e-14);
}

// The search direction's slope must be the directional derivative of the
// group objective, which checks the full gradient including the priors.
TEST(Objective, DirectionSlopeMatchesFiniteDifferences)
{
    std::mt19937_64 rng(9);
    for (int inst = 0; inst < 20; ++inst) {
        SceneConfig c = small_scene(200 + inst, 3, 4);
        c.noise_px = 2.0;
        c.s_true = 2;
        c.perturbation_deg = 5.0;
        const Scene scene = generate_scene(c);
        const auto tl = truth_timeline(scene.truth, 0);
        auto sol = truth_solution(scene, tl, 1);
        perturb(sol.params, rng, 0.05, 0.02, 0.02);
        sol.aux = update_auxiliaries(sol.params, 1);
        SolverConfig cfg;
        cfg.shared_motion = inst % 2 == 1;
        const auto sc = detail::scales(scene.detections, tl);
        const detail::SolveContext ctx{c.skeleton, scene.detections, tl, sol.cameras, sol.aux, cfg, sc};
        const auto members = detail::groups(3, cfg.shared_motion).front();
        const auto p = detail::group_params(sol.params, members.front());
        const auto dir = detail::group_direction(ctx, members, p);
        ASSERT_LT(dir.slope, 0.0);
        const double h = 1e-6;
        const double fd = (detail::group_objective(ctx, members, detail::moved(p, dir.step, h)) -
                           detail::group_objective(ctx, members, detail::moved(p, dir.step, -h))) /
                          (2 * h);
        EXPECT_NEAR(dir.slope, fd, 1e-4 * std::abs(fd)) << "instance " << inst;
    }
}

TEST(Solve, TruthIsAFixedPoint)
{
    SceneConfig c = small_scene(10, 3, 8);
    c.trajectory_variation_m = 0.0;
    const Scene scene = generate_scene(c);
    const auto tl = truth_timeline(scene.truth, 0);
    const auto init = truth_solution(scene, tl, 1);
    SolverConfig cfg;
    cfg.lambda_t = 0.0;
    const auto sol = alternating_solve(c.skeleton, init, scene.detections, tl, cfg);
    EXPECT_EQ(sol.outer_iterations, 1);
    EXPECT_TRUE(sol.converged);
    for (int j = 0; j < 3; ++j) {
        EXPECT_LT((sol.params.beta[j] - init.params.beta[j]).norm(), 1e-8);
        for (int i = 0; i < tl.length(); ++i) {
            EXPECT_LT((sol.params.theta[j][i] - init.params.theta[j][i]).norm(), 1e-8);
            EXPECT_LT((sol.params.gamma[j][i] - init.params.gamma[j][i]).norm(), 1e-8);
        }
    }
}

TEST(Solve, ObjectiveMonotoneAndRankBounded)
{
    for (int s : {1, 2}) {
        SceneConfig c = small_scene(11, 3, 10);
        c.noise_px = 2.0;
        c.s_true = 2;
        c.perturbation_deg = 5.0;
        const Scene scene = generate_scene(c);
        const auto tl = truth_timeline(scene.truth, 0);
        auto init = truth_solution(scene, tl, s);
        std::mt19937_64 rng(11);
        perturb(init.params, rng, 0.05, 0.03, 0.02);
        SolverConfig cfg;
        cfg.s = s;
        cfg.max_outer_iters = 15;
        const auto sol = alternating_solve(c.skeleton, init, scene.detections, tl, cfg);
        ASSERT_GE(sol.objective_trace.size(), 2u);
        for (std::size_t k = 1; k < sol.objective_trace.size(); ++k) {
            EXPECT_LE(sol.objective_trace[k], sol.objective_trace[k - 1] + 1e-8);
        }
        for (const auto& z : sol.aux.z) EXPECT_LE(numerical_rank_rel(z), s);
        EXPECT_LE(numerical_rank_rel(sol.aux.y), s);
    }
}

TEST(Solve, SingleVideoWithoutPriorsMatchesPerFrameFits)
{
    SceneConfig c = small_scene(12, 1, 3);
    const Scene scene = generate_scene(c);
    const auto tl = truth_timeline(scene.truth, 0);
    auto init = truth_solution(scene, tl, 1);
    std::mt19937_64 rng(12);
    perturb(init.params, rng, 0.03, 0.02, 0.0);
    SolverConfig cfg;
    cfg.lambda_t = cfg.lambda_r1 = cfg.lambda_r2 = 0.0;
    cfg.convergence_tol = 0.0;
    cfg.max_outer_iters = 30;
    const auto joint = alternating_solve(c.skeleton, init, scene.detections, tl, cfg);
    const double joint_loss =
        total_objective(c.skeleton, joint.params, joint.cameras, joint.aux, scene.detections, tl, cfg);

    double separate = 0.0;
    double conf = 0.0;
    for (int i = 0; i < 3; ++i) {
        PoseVector theta = init.params.theta[0][i];
        RootTranslation gamma = init.params.gamma[0][i];
        const auto& kp = scene.detections.videos[0][tl.maps[0][i]];
        detail::refine_frame(c.skeleton, init.cameras[0], kp, cfg.geman_sigma, 200, theta, init.params.beta[0], gamma);
        separate += detail::frame_cost(forward_kinematics(c.skeleton, theta, init.params.beta[0], gamma),
                                       init.cameras[0], kp, cfg.geman_sigma);
        conf += kp.row(2).sum();
    }
    EXPECT_NEAR(joint_loss, separate / conf, 1e-6);
}

TEST(Initialize, IdenticalVideosGiveIdentityCameras)
{
    SceneConfig c = small_scene(13, 1, 6);
    Scene scene = generate_scene(c);
    for (int k = 0; k < 2; ++k) {
        scene.detections.videos.push_back(scene.detections.videos[0]);
        scene.initial.push_back(scene.initial[0]);
    }
    const auto tl = CommonTimeline::identity(3, 0, 6);
    const auto sol = initialize(c.skeleton, scene.initial, scene.detections, tl, {c.focal_px, c.image_size / 2}, {});
    for (const auto& cam : sol.cameras) {
        EXPECT_LT((cam.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT(cam.translation.norm(), 1e-9);
        EXPECT_EQ(cam.focal, c.focal_px);
    }
}

TEST(Initialize, RecoversRelativeRotations)
{
    SceneConfig c = small_scene(14, 4, 12);
    const Scene scene = generate_scene(c);
    const auto tl = truth_timeline(scene.truth, 1);
    const auto sol = initialize(c.skeleton, scene.initial, scene.detections, tl, {c.focal_px, c.image_size / 2}, {});
    const Mat3 r_ref = scene.truth.videos[1].camera.rotation;
    for (int j = 0; j < 4; ++j) {
        const Mat3 expected = scene.truth.videos[j].camera.rotation * r_ref.transpose();
        const double angle = matrix_to_axis_angle(sol.cameras[j].rotation * expected.transpose()).norm();
        EXPECT_LT(angle, deg2rad(0.5)) << "video " << j;
    }
    EXPECT_TRUE(sol.cameras[1].rotation.isIdentity(0.0));
}

TEST(Initialize, SingleVideoHasIdentityCamera)
{
    const SceneConfig c = small_scene(15, 1, 4);
    const Scene scene = generate_scene(c);
    const auto tl = CommonTimeline::identity(1, 0, 4);
    const auto sol = initialize(c.skeleton, scene.initial, scene.detections, tl, {c.focal_px, c.image_size / 2}, {});
    ASSERT_EQ(sol.cameras.size(), 1u);
    EXPECT_TRUE(sol.cameras[0].rotation.isIdentity(0.0));
    EXPECT_TRUE(sol.cameras[0].translation.isZero(0.0));
}

TEST(Solve, NoiselessIdenticalMotionsFromPerturbedInit)
{
    SceneConfig c = small_scene(16, 4, 30);
    c.init_pose_noise_deg = 5.0;
    const Scene scene = generate_scene(c);
    const auto tl = truth_timeline(scene.truth, 0);
    const auto init = initialize(c.skeleton, scene.initial, scene.detections, tl, {c.focal_px, c.image_size / 2}, {});
    const auto sol = alternating_solve(c.skeleton, init, scene.detections, tl, {});
    const auto ev = evaluate(c.skeleton, sol.params, tl, scene.truth);
    EXPECT_LT(ev.p_mpjpe, 1.0);
}
