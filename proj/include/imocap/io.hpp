#pragma once

// JSON/CSV file formats.
//
// Readers validate shapes and types and throw InputError naming the file and
// field. Writers go through write_file_atomic, so a failed command never
// leaves a half-written output behind.

#include <imocap/body.hpp>
#include <imocap/detections.hpp>
#include <imocap/errors.hpp>
#include <imocap/geometry.hpp>
#include <imocap/metrics.hpp>
#include <imocap/pipeline.hpp>
#include <imocap/solver.hpp>
#include <imocap/sync.hpp>
#include <imocap/synth.hpp>

#include <json.hpp>

#include <Eigen/Core>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace imocap::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline void write_file_atomic(const fs::path& path, const std::string& content)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw InputError("cannot write " + tmp.string());
        }
        out << content;
        out.flush();
        if (!out) {
            throw InputError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw InputError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

inline void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

namespace detail {

// Typed access with field-path diagnostics.
class Reader {
public:
    Reader(const json& node, std::string where) : node_(node), where_(std::move(where)) {}

    const json& node() const { return node_; }
    const std::string& where() const { return where_; }

    bool has(const std::string& key) const { return node_.is_object() && node_.contains(key); }

    Reader at(const std::string& key) const
    {
        if (!node_.is_object()) fail("expected an object");
        if (!node_.contains(key)) fail("missing field '" + key + "'");
        return {node_.at(key), where_ + "." + key};
    }

    Reader at(std::size_t i) const { return {node_.at(i), where_ + "[" + std::to_string(i) + "]"}; }

    std::size_t array_size() const
    {
        if (!node_.is_array()) fail("expected an array");
        return node_.size();
    }

    double number() const
    {
        if (!node_.is_number()) fail("expected a number");
        const double v = node_.get<double>();
        if (!std::isfinite(v)) fail("non-finite number");
        return v;
    }

    long long integer() const
    {
        if (!node_.is_number_integer()) fail("expected an integer");
        return node_.get<long long>();
    }

    bool boolean() const
    {
        if (!node_.is_boolean()) fail("expected true or false");
        return node_.get<bool>();
    }

    std::string string() const
    {
        if (!node_.is_string()) fail("expected a string");
        return node_.get<std::string>();
    }

    Eigen::VectorXd vector(long expected = -1) const
    {
        const auto n = array_size();
        if (expected >= 0 && static_cast<long>(n) != expected) {
            fail("expected " + std::to_string(expected) + " numbers, got " + std::to_string(n));
        }
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = at(i).number();
        return v;
    }

    template <class T>
    void optional(const std::string& key, T& out) const
    {
        if (!has(key)) return;
        const Reader r = at(key);
        if constexpr (std::is_same_v<T, bool>) {
            out = r.boolean();
        } else if constexpr (std::is_integral_v<T>) {
            const auto v = r.integer();
            if constexpr (std::is_unsigned_v<T>) {
                if (v < 0) r.fail("expected a nonnegative integer");
            }
            out = static_cast<T>(v);
        } else {
            out = r.number();
        }
    }

    void only_keys(std::initializer_list<const char*> keys) const
    {
        if (!node_.is_object()) fail("expected an object");
        for (const auto& item : node_.items()) {
            bool known = false;
            for (const char* k : keys) known = known || item.key() == k;
            if (!known) fail("unknown field '" + item.key() + "'");
        }
    }

    [[noreturn]] void fail(const std::string& msg) const { throw InputError(where_ + ": " + msg); }

private:
    const json& node_;
    std::string where_;
};

inline json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

} // namespace detail

// ---- skeleton ------------------------------------------------------------

inline json skeleton_to_json(const Skeleton& s)
{
    json offsets = json::array();
    for (const auto& o : s.rest_offsets) offsets.push_back({o.x(), o.y(), o.z()});
    return {{"parents", s.parents}, {"rest_offsets", offsets}};
}

inline Skeleton skeleton_from_json(const detail::Reader& r)
{
    Skeleton s;
    const auto parents = r.at("parents");
    const auto offsets = r.at("rest_offsets");
    const auto n = parents.array_size();
    if (offsets.array_size() != n) r.fail("parents and rest_offsets differ in length");
    for (std::size_t k = 0; k < n; ++k) {
        s.parents.push_back(static_cast<int>(parents.at(k).integer()));
        s.rest_offsets.push_back(offsets.at(k).vector(3));
    }
    try {
        s.validate();
    } catch (const ParameterError& e) {
        r.fail(e.what());
    }
    return s;
}

inline Skeleton load_skeleton(const fs::path& path)
{
    const json j = read_json(path);
    return skeleton_from_json({j, path.string()});
}

// ---- configuration ------------------------------------------------------

struct RunConfig {
    SceneConfig scene;
    PipelineConfig pipeline;
    bool mpjpe_root_relative = true;
};

inline json config_to_json(const RunConfig& c)
{
    const auto& s = c.scene;
    const auto& p = c.pipeline;
    const char* kernel = p.sync.affinity.kernel == AffinityKernel::gaussian ? "gaussian" : "reciprocal";
    return {
        {"seed", s.seed},
        {"scene",
         {{"videos", s.videos}, {"base_frames", s.base_frames}, {"s_true", s.s_true},
          {"perturbation_deg", s.perturbation_deg}, {"trajectory_variation_m", s.trajectory_variation_m},
          {"shape_std", s.shape_std}, {"ring_radius_m", s.ring_radius_m}, {"camera_height_m", s.camera_height_m},
          {"angle_jitter_deg", s.angle_jitter_deg}, {"focal_px", s.focal_px},
          {"image_size", {s.image_size.x(), s.image_size.y()}}, {"noise_px", s.noise_px},
          {"occlusion_rate", s.occlusion_rate}, {"sample_anchors", s.sample_anchors},
          {"sample_segments", s.sample_segments}, {"init_pose_noise_deg", s.init_pose_noise_deg},
          {"init_translation_noise_m", s.init_translation_noise_m}}},
        {"sync",
         {{"cycle_consistent", p.sync.cycle_consistent}, {"kernel", kernel},
          {"sigma_quantile", p.sync.affinity.sigma_quantile}, {"procrustes_scale", p.sync.affinity.procrustes_scale},
          {"lambda", p.sync.denoise.lambda}, {"lambda_scale", p.sync.denoise.lambda_scale},
          {"max_iter", p.sync.denoise.max_iter}, {"tol", p.sync.denoise.tol}, {"reference", p.sync.reference}}},
        {"solver",
         {{"s", p.solver.s}, {"lambda_t", p.solver.lambda_t}, {"lambda_r1", p.solver.lambda_r1},
          {"lambda_r2", p.solver.lambda_r2}, {"geman_sigma", p.solver.geman_sigma},
          {"step_size", p.solver.step_size}, {"max_outer_iters", p.solver.max_outer_iters},
          {"max_inner_iters", p.solver.max_inner_iters}, {"convergence_tol", p.solver.convergence_tol},
          {"shared_motion", p.solver.shared_motion}, {"refine_cameras", p.solver.refine_cameras},
          {"pnp_iters", p.solver.pnp_iters}, {"init_refine_iters", p.solver.init_refine_iters}}},
        {"pipeline", {{"outer_rounds", p.outer_rounds}}},
        {"metrics", {{"mpjpe_root_relative", c.mpjpe_root_relative}}},
    };
}

/// Overlays the fields present in `j` onto `c`; unknown fields are errors.
inline void apply_config(RunConfig& c, const json& j, const std::string& where)
{
    const detail::Reader r(j, where);
    r.only_keys({"seed", "scene", "sync", "solver", "pipeline", "metrics"});
    r.optional("seed", c.scene.seed);
    c.pipeline.seed = c.scene.seed;
    if (r.has("scene")) {
        const auto s = r.at("scene");
        s.only_keys({"videos", "base_frames", "s_true", "perturbation_deg", "trajectory_variation_m", "shape_std",
                     "ring_radius_m", "camera_height_m", "angle_jitter_deg", "focal_px", "image_size", "noise_px",
                     "occlusion_rate", "sample_anchors", "sample_segments", "init_pose_noise_deg",
                     "init_translation_noise_m", "skeleton"});
        auto& sc = c.scene;
        s.optional("videos", sc.videos);
        s.optional("base_frames", sc.base_frames);
        s.optional("s_true", sc.s_true);
        s.optional("perturbation_deg", sc.perturbation_deg);
        s.optional("trajectory_variation_m", sc.trajectory_variation_m);
        s.optional("shape_std", sc.shape_std);
        s.optional("ring_radius_m", sc.ring_radius_m);
        s.optional("camera_height_m", sc.camera_height_m);
        s.optional("angle_jitter_deg", sc.angle_jitter_deg);
        s.optional("focal_px", sc.focal_px);
        if (s.has("image_size")) sc.image_size = s.at("image_size").vector(2);
        s.optional("noise_px", sc.noise_px);
        s.optional("occlusion_rate", sc.occlusion_rate);
        s.optional("sample_anchors", sc.sample_anchors);
        s.optional("sample_segments", sc.sample_segments);
        s.optional("init_pose_noise_deg", sc.init_pose_noise_deg);
        s.optional("init_translation_noise_m", sc.init_translation_noise_m);
        if (s.has("skeleton")) sc.skeleton = skeleton_from_json(s.at("skeleton"));
    }
    if (r.has("sync")) {
        const auto s = r.at("sync");
        s.only_keys({"cycle_consistent", "kernel", "sigma_quantile", "procrustes_scale", "lambda", "lambda_scale",
                     "max_iter", "tol", "reference"});
        auto& so = c.pipeline.sync;
        s.optional("cycle_consistent", so.cycle_consistent);
        if (s.has("kernel")) {
            const auto k = s.at("kernel").string();
            if (k == "gaussian") {
                so.affinity.kernel = AffinityKernel::gaussian;
            } else if (k == "reciprocal") {
                so.affinity.kernel = AffinityKernel::reciprocal;
            } else {
                s.at("kernel").fail("expected 'reciprocal' or 'gaussian'");
            }
        }
        s.optional("sigma_quantile", so.affinity.sigma_quantile);
        s.optional("procrustes_scale", so.affinity.procrustes_scale);
        s.optional("lambda", so.denoise.lambda);
        s.optional("lambda_scale", so.denoise.lambda_scale);
        s.optional("max_iter", so.denoise.max_iter);
        s.optional("tol", so.denoise.tol);
        s.optional("reference", so.reference);
    }
    if (r.has("solver")) {
        const auto s = r.at("solver");
        s.only_keys({"s", "lambda_t", "lambda_r1", "lambda_r2", "geman_sigma", "step_size", "max_outer_iters",
                     "max_inner_iters", "convergence_tol", "shared_motion", "refine_cameras", "pnp_iters",
                     "init_refine_iters"});
        auto& so = c.pipeline.solver;
        s.optional("s", so.s);
        s.optional("lambda_t", so.lambda_t);
        s.optional("lambda_r1", so.lambda_r1);
        s.optional("lambda_r2", so.lambda_r2);
        s.optional("geman_sigma", so.geman_sigma);
        s.optional("step_size", so.step_size);
        s.optional("max_outer_iters", so.max_outer_iters);
        s.optional("max_inner_iters", so.max_inner_iters);
        s.optional("convergence_tol", so.convergence_tol);
        s.optional("shared_motion", so.shared_motion);
        s.optional("refine_cameras", so.refine_cameras);
        s.optional("pnp_iters", so.pnp_iters);
        s.optional("init_refine_iters", so.init_refine_iters);
    }
    if (r.has("pipeline")) {
        const auto s = r.at("pipeline");
        s.only_keys({"outer_rounds"});
        s.optional("outer_rounds", c.pipeline.outer_rounds);
    }
    if (r.has("metrics")) {
        const auto s = r.at("metrics");
        s.only_keys({"mpjpe_root_relative"});
        s.optional("mpjpe_root_relative", c.mpjpe_root_relative);
    }
    try {
        c.pipeline.validate();
    } catch (const ParameterError& e) {
        throw InputError(where + ": " + e.what());
    }
}

inline RunConfig load_config(const fs::path& path)
{
    RunConfig c;
    apply_config(c, read_json(path), path.string());
    return c;
}

// ---- dataset ------------------------------------------------------------

struct Dataset {
    Skeleton skeleton;
    DetectionSet detections;
    std::vector<VideoInitialPoses> initial;  // empty if the videos carry none
    Intrinsics intrinsics;
    std::optional<GroundTruth> truth;
    json scene_echo;
};

inline json camera_to_json(const CameraModel& c)
{
    json r = json::array();
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) r.push_back(c.rotation(a, b));
    return {{"R", r},
            {"T", {c.translation.x(), c.translation.y(), c.translation.z()}},
            {"focal", c.focal},
            {"principal_point", {c.principal_point.x(), c.principal_point.y()}}};
}

inline CameraModel camera_from_json(const detail::Reader& r)
{
    CameraModel c;
    const auto rv = r.at("R").vector(9);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) c.rotation(a, b) = rv(3 * a + b);
    c.translation = r.at("T").vector(3);
    c.focal = r.at("focal").number();
    c.principal_point = r.at("principal_point").vector(2);
    try {
        c.validate();
    } catch (const ParameterError& e) {
        r.fail(e.what());
    }
    return c;
}

inline json pose_list_json(const std::vector<PoseVector>& v)
{
    json a = json::array();
    for (const auto& p : v) a.push_back(detail::vec_json(p));
    return a;
}

inline json translation_list_json(const std::vector<RootTranslation>& v)
{
    json a = json::array();
    for (const auto& g : v) a.push_back({g.x(), g.y(), g.z()});
    return a;
}

inline std::vector<Eigen::VectorXd> vector_list(const detail::Reader& r, long dim, std::size_t expected)
{
    const auto n = r.array_size();
    if (n != expected) r.fail("expected " + std::to_string(expected) + " entries, got " + std::to_string(n));
    std::vector<Eigen::VectorXd> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(r.at(i).vector(dim));
    return out;
}

inline json video_to_json(const std::vector<FrameKeypoints>& frames, const VideoInitialPoses* initial)
{
    json fr = json::array();
    for (const auto& kp : frames) {
        json joints = json::array();
        for (Eigen::Index z = 0; z < kp.cols(); ++z) joints.push_back({kp(0, z), kp(1, z), kp(2, z)});
        fr.push_back(joints);
    }
    json v = {{"frames", fr}};
    if (initial != nullptr) {
        v["initial"] = {{"beta", detail::vec_json(initial->beta)},
                        {"theta", pose_list_json(initial->theta)},
                        {"gamma", translation_list_json(initial->gamma)}};
    }
    return v;
}

inline json truth_to_json(const GroundTruth& gt)
{
    json vids = json::array();
    for (const auto& v : gt.videos) {
        vids.push_back({{"base_times", v.base_times},
                        {"beta", detail::vec_json(v.beta)},
                        {"theta", pose_list_json(v.theta)},
                        {"gamma", translation_list_json(v.gamma)},
                        {"camera", camera_to_json(v.camera)}});
    }
    return {{"videos", vids}};
}

inline void write_dataset(const fs::path& dir, const Scene& scene, const RunConfig& cfg)
{
    fs::create_directories(dir);
    const auto& c = scene.config;
    json sj = {{"format", "imocap-scene"},
               {"videos", c.videos},
               {"skeleton", skeleton_to_json(c.skeleton)},
               {"intrinsics", {{"focal", c.focal_px}, {"principal_point", {c.image_size.x() / 2, c.image_size.y() / 2}}}},
               {"image_size", {c.image_size.x(), c.image_size.y()}},
               {"config", config_to_json(cfg)}};
    for (int j = 0; j < c.videos; ++j) {
        write_json(dir / ("video_" + std::to_string(j) + ".json"),
                   video_to_json(scene.detections.videos[j], &scene.initial[j]));
    }
    write_json(dir / "truth.json", truth_to_json(scene.truth));
    write_json(dir / "scene.json", sj);  // last: its presence marks a complete dataset
}

inline GroundTruth truth_from_json(const detail::Reader& r, const Skeleton& skel)
{
    GroundTruth gt;
    const auto vids = r.at("videos");
    for (std::size_t j = 0; j < vids.array_size(); ++j) {
        const auto v = vids.at(j);
        GroundTruthVideo g;
        const auto bt = v.at("base_times");
        for (std::size_t k = 0; k < bt.array_size(); ++k) g.base_times.push_back(static_cast<int>(bt.at(k).integer()));
        g.beta = v.at("beta").vector(skel.shape_dim());
        for (auto& t : vector_list(v.at("theta"), skel.pose_dim(), g.base_times.size())) g.theta.push_back(t);
        for (auto& t : vector_list(v.at("gamma"), 3, g.base_times.size())) g.gamma.push_back(t);
        g.camera = camera_from_json(v.at("camera"));
        for (std::size_t k = 0; k < g.theta.size(); ++k) {
            g.joints.push_back(forward_kinematics(skel, g.theta[k], g.beta, g.gamma[k]));
        }
        gt.videos.push_back(std::move(g));
    }
    return gt;
}

inline Dataset load_dataset(const fs::path& dir)
{
    Dataset d;
    const fs::path scene_path = dir / "scene.json";
    const json sj = read_json(scene_path);
    const detail::Reader sr(sj, scene_path.string());
    d.scene_echo = sj;
    d.skeleton = skeleton_from_json(sr.at("skeleton"));
    const int m = static_cast<int>(sr.at("videos").integer());
    if (m < 1) sr.at("videos").fail("need at least one video");
    Vec2 image_size(1000.0, 1000.0);
    if (sr.has("image_size")) image_size = sr.at("image_size").vector(2);
    d.intrinsics = default_intrinsics(image_size);
    if (sr.has("intrinsics")) {
        const auto ir = sr.at("intrinsics");
        d.intrinsics.focal = ir.at("focal").number();
        d.intrinsics.principal_point = ir.at("principal_point").vector(2);
        if (!(d.intrinsics.focal > 0)) ir.at("focal").fail("focal must be positive");
    }
    const int nj = d.skeleton.joint_count();
    bool all_initial = true;
    for (int j = 0; j < m; ++j) {
        const fs::path vp = dir / ("video_" + std::to_string(j) + ".json");
        const json vj = read_json(vp);
        const detail::Reader vr(vj, vp.string());
        const auto frames = vr.at("frames");
        std::vector<FrameKeypoints> kps;
        for (std::size_t f = 0; f < frames.array_size(); ++f) {
            const auto fr = frames.at(f);
            if (fr.array_size() != static_cast<std::size_t>(nj)) {
                fr.fail("expected " + std::to_string(nj) + " joints, got " + std::to_string(fr.array_size()));
            }
            FrameKeypoints kp(3, nj);
            for (int z = 0; z < nj; ++z) {
                kp.col(z) = fr.at(static_cast<std::size_t>(z)).vector(3);
                if (kp(2, z) < 0.0 || kp(2, z) > 1.0) fr.at(static_cast<std::size_t>(z)).fail("confidence outside [0, 1]");
            }
            kps.push_back(std::move(kp));
        }
        if (kps.empty()) frames.fail("no frames");
        if (vr.has("initial")) {
            const auto ir = vr.at("initial");
            VideoInitialPoses ip;
            ip.beta = ir.at("beta").vector(nj);
            ip.theta = vector_list(ir.at("theta"), d.skeleton.pose_dim(), kps.size());
            for (auto& g : vector_list(ir.at("gamma"), 3, kps.size())) ip.gamma.push_back(g);
            d.initial.push_back(std::move(ip));
        } else {
            all_initial = false;
        }
        d.detections.videos.push_back(std::move(kps));
    }
    if (!all_initial) d.initial.clear();
    if (fs::exists(dir / "truth.json")) {
        const json tj = read_json(dir / "truth.json");
        d.truth = truth_from_json({tj, (dir / "truth.json").string()}, d.skeleton);
        if (d.truth->video_count() != m) throw InputError((dir / "truth.json").string() + ": video count differs");
        for (int j = 0; j < m; ++j) {
            if (static_cast<int>(d.truth->videos[j].base_times.size()) != d.detections.frame_count(j)) {
                throw InputError((dir / "truth.json").string() + ": video " + std::to_string(j) +
                                 " frame count differs from its detections");
            }
        }
    }
    return d;
}

// ---- results ------------------------------------------------------------

inline json timeline_to_json(const CommonTimeline& t) { return {{"reference", t.reference}, {"maps", t.maps}}; }

inline CommonTimeline timeline_from_json(const detail::Reader& r)
{
    CommonTimeline t;
    t.reference = static_cast<int>(r.at("reference").integer());
    const auto maps = r.at("maps");
    for (std::size_t j = 0; j < maps.array_size(); ++j) {
        std::vector<int> m;
        const auto mr = maps.at(j);
        for (std::size_t i = 0; i < mr.array_size(); ++i) m.push_back(static_cast<int>(mr.at(i).integer()));
        t.maps.push_back(std::move(m));
    }
    if (t.reference < 0 || t.reference >= t.videos()) r.at("reference").fail("out of range");
    for (const auto& m : t.maps) {
        if (static_cast<int>(m.size()) != t.length()) r.at("maps").fail("maps differ in length");
        for (std::size_t i = 1; i < m.size(); ++i) {
            if (m[i] < m[i - 1]) r.at("maps").fail("maps must be non-decreasing");
        }
    }
    return t;
}

inline json solution_to_json(const MotionSolution& s, const CommonTimeline& t)
{
    json cams = json::array();
    json theta = json::array();
    json beta = json::array();
    json gamma = json::array();
    for (int j = 0; j < s.params.video_count(); ++j) {
        cams.push_back(camera_to_json(s.cameras[j]));
        theta.push_back(pose_list_json(s.params.theta[j]));
        beta.push_back(detail::vec_json(s.params.beta[j]));
        gamma.push_back(translation_list_json(s.params.gamma[j]));
    }
    return {{"cameras", cams},
            {"theta", theta},
            {"beta", beta},
            {"gamma", gamma},
            {"objective_trace", s.objective_trace},
            {"converged", s.converged},
            {"line_search_failed", s.line_search_failed},
            {"timeline", timeline_to_json(t)}};
}

inline std::pair<MotionSolution, CommonTimeline> solution_from_json(const detail::Reader& r, const Skeleton& skel)
{
    MotionSolution s;
    const CommonTimeline t = timeline_from_json(r.at("timeline"));
    const auto cams = r.at("cameras");
    const auto m = cams.array_size();
    const auto n = static_cast<std::size_t>(t.length());
    if (static_cast<int>(m) != t.videos()) cams.fail("camera count differs from the timeline");
    for (std::size_t j = 0; j < m; ++j) {
        s.cameras.push_back(camera_from_json(cams.at(j)));
        s.params.theta.push_back(vector_list(r.at("theta").at(j), skel.pose_dim(), n));
        s.params.beta.push_back(r.at("beta").at(j).vector(skel.shape_dim()));
        std::vector<RootTranslation> g;
        for (auto& v : vector_list(r.at("gamma").at(j), 3, n)) g.push_back(v);
        s.params.gamma.push_back(std::move(g));
    }
    if (r.has("objective_trace")) {
        const auto tr = r.at("objective_trace");
        for (std::size_t i = 0; i < tr.array_size(); ++i) s.objective_trace.push_back(tr.at(i).number());
    }
    return {std::move(s), t};
}

inline std::string matrix_csv(const Eigen::MatrixXd& m)
{
    std::ostringstream os;
    os.precision(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) os << ',';
            os << m(r, c);
        }
        os << '\n';
    }
    return os.str();
}

inline void dump_grid(const fs::path& dir, const std::string& prefix, const BlockGrid& grid)
{
    fs::create_directories(dir);
    for (int a = 0; a < grid.videos(); ++a) {
        for (int b = 0; b < grid.videos(); ++b) {
            if (a == b) continue;
            write_file_atomic(dir / (prefix + "_" + std::to_string(a) + "_" + std::to_string(b) + ".csv"),
                              matrix_csv(grid.block(a, b)));
        }
    }
}

inline json evaluation_to_json(const Evaluation& e)
{
    json per = json::array();
    for (const auto& v : e.per_video) {
        per.push_back({{"video", v.video},
                       {"mpjpe_mm", v.mpjpe},
                       {"p_mpjpe_mm", v.p_mpjpe},
                       {"sync_error_fraction", v.sync_error}});
    }
    return {{"mpjpe_mm", e.mpjpe},
            {"p_mpjpe_mm", e.p_mpjpe},
            {"sync_error_fraction", e.sync_error},
            {"trajectory_rmse_mm", e.trajectory_rmse},
            {"per_video", per}};
}

inline json diagnostics_to_json(const PipelineResult& r)
{
    json rounds = json::array();
    for (const auto& d : r.rounds) {
        json o = {{"round", d.round},
                  {"objective_trace", d.objective_trace},
                  {"final_objective", d.final_objective},
                  {"failed", d.failed},
                  {"line_search_failed", d.line_search_failed},
                  {"reference", d.timeline.reference}};
        if (d.sync_error) o["sync_error_fraction"] = *d.sync_error;
        if (d.p_mpjpe) o["p_mpjpe_mm"] = *d.p_mpjpe;
        if (!d.message.empty()) o["message"] = d.message;
        rounds.push_back(o);
    }
    return {{"rounds", rounds}, {"selected_round", r.selected_round}, {"warning", r.warning}};
}

} // namespace imocap::io
