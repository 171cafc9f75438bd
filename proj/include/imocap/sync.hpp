#pragma once

// Pose-based synchronization of several videos.
//
// Frames are compared through their 3D poses (Procrustes-aligned distance),
// turned into pairwise affinity blocks, stacked into one N_a x N_a matrix and
// denoised jointly under a low-rank prior so the pairwise correspondences agree
// around cycles. Each (reference, j) block is then decoded with DTW.

#include <imocap/errors.hpp>
#include <imocap/geometry.hpp>

#include <Eigen/Core>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace imocap {

enum class AffinityKernel { reciprocal, gaussian };

/// Distance between two 3D poses after Procrustes alignment of a onto b.
inline double pose_distance(const Eigen::Matrix3Xd& pose_a, const Eigen::Matrix3Xd& pose_b, bool with_scale = true)
{
    if (pose_a.cols() != pose_b.cols()) {
        throw ParameterError("pose_distance: joint counts differ");
    }
    return procrustes_align(pose_a, pose_b, with_scale).residual_rmse;
}

struct AffinityBlock {
    Eigen::MatrixXd values;
    std::pair<int, int> video_pair{0, 0};
};

inline double median_of(std::vector<double> v)
{
    if (v.empty()) {
        return 0.0;
    }
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(v.begin(), mid));
    }
    return m;
}

/// Maps a distance to an affinity in [0, 1] given the block scale sigma.
inline double affinity_from_distance(double d, double sigma, AffinityKernel kernel = AffinityKernel::reciprocal)
{
    if (sigma <= 0.0) {
        return d <= 0.0 ? 1.0 : 0.0;
    }
    if (kernel == AffinityKernel::gaussian) {
        return std::exp(-d * d / (2.0 * sigma * sigma));
    }
    return 1.0 / (1.0 + d / sigma);
}

/// Linear-interpolated q-quantile (q in [0, 1]); q = 0.5 equals median_of.
inline double quantile_of(std::vector<double> v, double q)
{
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct AffinityOptions {
    AffinityKernel kernel = AffinityKernel::reciprocal;
    double sigma_quantile = 0.5;  // block scale = this quantile of the block's distances
    bool procrustes_scale = true;
};

/// Entry (p, q) = a(d(p, q)) with a per-block distance quantile (the median
/// by default) as scale. Pairs with a degenerate pose get affinity 0; a block
/// with no valid pair throws DegeneracyError.
inline Eigen::MatrixXd affinity_matrix(std::span<const Eigen::Matrix3Xd> poses_a,
                                       std::span<const Eigen::Matrix3Xd> poses_b, const AffinityOptions& opt = {})
{
    if (poses_a.empty() || poses_b.empty()) {
        throw ParameterError("affinity_matrix: empty pose list");
    }
    if (!(opt.sigma_quantile >= 0.0 && opt.sigma_quantile <= 1.0)) {
        throw ParameterError("affinity_matrix: sigma_quantile must lie in [0, 1]");
    }
    const auto na = static_cast<Eigen::Index>(poses_a.size());
    const auto nb = static_cast<Eigen::Index>(poses_b.size());
    Eigen::MatrixXd dist(na, nb);
    std::vector<double> valid;
    valid.reserve(static_cast<std::size_t>(na * nb));
    for (Eigen::Index p = 0; p < na; ++p) {
        for (Eigen::Index q = 0; q < nb; ++q) {
            try {
                dist(p, q) = pose_distance(poses_a[p], poses_b[q], opt.procrustes_scale);
                valid.push_back(dist(p, q));
            } catch (const DegeneracyError&) {
                dist(p, q) = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    if (valid.empty()) {
        throw DegeneracyError("affinity_matrix: every pose pair is degenerate");
    }
    const double sigma = opt.sigma_quantile == 0.5 ? median_of(std::move(valid))
                                                   : quantile_of(std::move(valid), opt.sigma_quantile);
    Eigen::MatrixXd aff(na, nb);
    for (Eigen::Index p = 0; p < na; ++p) {
        for (Eigen::Index q = 0; q < nb; ++q) {
            aff(p, q) = std::isnan(dist(p, q)) ? 0.0 : affinity_from_distance(dist(p, q), sigma, opt.kernel);
        }
    }
    return aff;
}

/// M x M grid of pairwise blocks over videos with the given frame counts.
class BlockGrid {
public:
    BlockGrid() = default;
    explicit BlockGrid(std::vector<int> frame_counts) : counts_(std::move(frame_counts))
    {
        offsets_.assign(counts_.size() + 1, 0);
        for (std::size_t j = 0; j < counts_.size(); ++j) {
            offsets_[j + 1] = offsets_[j] + counts_[j];
        }
        blocks_.resize(counts_.size() * counts_.size());
        for (int a = 0; a < videos(); ++a) {
            for (int b = 0; b < videos(); ++b) {
                if (a == b) {
                    block(a, b).setIdentity(counts_[a], counts_[a]);
                } else {
                    block(a, b).setZero(counts_[a], counts_[b]);
                }
            }
        }
    }

    int videos() const { return static_cast<int>(counts_.size()); }
    int total_frames() const { return offsets_.empty() ? 0 : offsets_.back(); }
    const std::vector<int>& frame_counts() const { return counts_; }
    int offset(int video) const { return offsets_[video]; }

    Eigen::MatrixXd& block(int a, int b) { return blocks_[static_cast<std::size_t>(a * videos() + b)]; }
    const Eigen::MatrixXd& block(int a, int b) const { return blocks_[static_cast<std::size_t>(a * videos() + b)]; }

    Eigen::MatrixXd stacked() const
    {
        Eigen::MatrixXd s(total_frames(), total_frames());
        for (int a = 0; a < videos(); ++a) {
            for (int b = 0; b < videos(); ++b) {
                s.block(offset(a), offset(b), counts_[a], counts_[b]) = block(a, b);
            }
        }
        return s;
    }

    static BlockGrid from_stacked(const Eigen::MatrixXd& s, std::vector<int> frame_counts)
    {
        BlockGrid g(std::move(frame_counts));
        for (int a = 0; a < g.videos(); ++a) {
            for (int b = 0; b < g.videos(); ++b) {
                g.block(a, b) = s.block(g.offset(a), g.offset(b), g.counts_[a], g.counts_[b]);
            }
        }
        return g;
    }

private:
    std::vector<int> counts_;
    std::vector<int> offsets_;
    std::vector<Eigen::MatrixXd> blocks_;
};

/// Affinity blocks for every pair of videos; diagonal blocks are identity and
/// block (b, a) is the exact transpose of block (a, b).
inline BlockGrid affinity_grid(const std::vector<std::vector<Eigen::Matrix3Xd>>& poses,
                               const AffinityOptions& opt = {})
{
    std::vector<int> counts;
    for (const auto& v : poses) {
        counts.push_back(static_cast<int>(v.size()));
    }
    BlockGrid grid(counts);
    for (int a = 0; a < grid.videos(); ++a) {
        for (int b = a + 1; b < grid.videos(); ++b) {
            grid.block(a, b) = affinity_matrix(poses[a], poses[b], opt);
            grid.block(b, a) = grid.block(a, b).transpose();
        }
    }
    return grid;
}

struct DenoiseOptions {
    double lambda = -1.0;        // <= 0 selects lambda_scale * sigma_max(P(A))
    double lambda_scale = 0.03;
    int max_iter = 300;
    double tol = 1e-9;           // relative objective change
};

struct StackedCorrespondence {
    BlockGrid blocks;
    int total_frames = 0;
    double lambda = 0.0;
    std::vector<double> objective_trace;  // starts at the feasible projection of A
    bool converged = false;
};

namespace detail {

// Symmetric part, entries clamped to [0, 1], diagonal blocks reset to identity.
inline void project_feasible(Eigen::MatrixXd& x, const BlockGrid& layout)
{
    x = (0.5 * (x + x.transpose())).eval().cwiseMax(0.0).cwiseMin(1.0);
    for (int a = 0; a < layout.videos(); ++a) {
        const int n = layout.frame_counts()[a];
        x.block(layout.offset(a), layout.offset(a), n, n).setIdentity();
    }
}

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& x)
{
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x);
    return svd.singularValues();
}

inline Eigen::MatrixXd singular_value_shrink(const Eigen::MatrixXd& x, double tau)
{
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd s = (svd.singularValues().array() - tau).cwiseMax(0.0);
    return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

inline double denoise_objective(const Eigen::MatrixXd& a, const Eigen::MatrixXd& x, double lambda)
{
    return (a - x).squaredNorm() + lambda * singular_values(x).sum();
}

} // namespace detail

inline void check_symmetric_grid(const BlockGrid& grid)
{
    for (int a = 0; a < grid.videos(); ++a) {
        for (int b = 0; b < grid.videos(); ++b) {
            const auto& ab = grid.block(a, b);
            const auto& ba = grid.block(b, a);
            if (ab.rows() != grid.frame_counts()[a] || ab.cols() != grid.frame_counts()[b]) {
                throw InputError("affinity grid: block (" + std::to_string(a) + "," + std::to_string(b) +
                                 ") has the wrong shape");
            }
            if (ab != ba.transpose()) {
                throw InputError("affinity grid: block (" + std::to_string(a) + "," + std::to_string(b) +
                                 ") is not the transpose of its mirror");
            }
        }
    }
}

/// Approximately minimizes |A - X|_F^2 + lambda |X|_* over X with entries in
/// [0, 1] and identity diagonal blocks. Each iteration takes a gradient step
/// on the data term, shrinks singular values and projects onto the box; a
/// candidate that raises the objective halves the step instead. The trace is
/// therefore non-increasing.
inline StackedCorrespondence consistent_denoise(const BlockGrid& affinities, const DenoiseOptions& opt = {})
{
    check_symmetric_grid(affinities);
    const Eigen::MatrixXd a = affinities.stacked();
    Eigen::MatrixXd x = a;
    detail::project_feasible(x, affinities);

    StackedCorrespondence out;
    out.total_frames = affinities.total_frames();
    out.lambda = opt.lambda > 0.0 ? opt.lambda : opt.lambda_scale * detail::singular_values(x)(0);
    if (!(out.lambda > 0.0) || !std::isfinite(out.lambda)) {
        throw ParameterError("consistent_denoise: lambda must be positive");
    }

    double f = detail::denoise_objective(a, x, out.lambda);
    out.objective_trace.push_back(f);
    double step = 0.5;  // 1 / Lipschitz constant of the data-term gradient
    for (int it = 0; it < opt.max_iter; ++it) {
        Eigen::MatrixXd y = x - 2.0 * step * (x - a);
        Eigen::MatrixXd cand = detail::singular_value_shrink(y, out.lambda * step);
        detail::project_feasible(cand, affinities);
        const double fc = detail::denoise_objective(a, cand, out.lambda);
        if (fc <= f) {
            const double change = f - fc;
            x = std::move(cand);
            f = fc;
            out.objective_trace.push_back(f);
            if (change <= opt.tol * std::max(1.0, f)) {
                out.converged = true;
                break;
            }
        } else {
            step *= 0.5;
            if (step < 1e-8) {
                out.converged = true;  // no descent left along this scheme
                break;
            }
        }
    }
    out.blocks = BlockGrid::from_stacked(x, affinities.frame_counts());
    return out;
}

struct WarpingPath {
    std::vector<std::pair<int, int>> pairs;
};

/// Monotone path from (0, 0) to (N1-1, N2-1) with unit steps maximizing the
/// summed score. Ties prefer the diagonal predecessor, then the vertical one.
inline WarpingPath dtw_align(const Eigen::MatrixXd& score)
{
    const auto n1 = score.rows();
    const auto n2 = score.cols();
    if (n1 == 0 || n2 == 0) {
        throw ParameterError("dtw_align: empty matrix");
    }
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Constant(n1, n2, ninf);
    // 0 diagonal, 1 from (i-1, j), 2 from (i, j-1)
    Eigen::MatrixXi from = Eigen::MatrixXi::Constant(n1, n2, -1);
    for (Eigen::Index i = 0; i < n1; ++i) {
        for (Eigen::Index j = 0; j < n2; ++j) {
            if (i == 0 && j == 0) {
                acc(0, 0) = score(0, 0);
                continue;
            }
            double best = ninf;
            int arg = -1;
            if (i > 0 && j > 0 && acc(i - 1, j - 1) > best) {
                best = acc(i - 1, j - 1);
                arg = 0;
            }
            if (i > 0 && acc(i - 1, j) > best) {
                best = acc(i - 1, j);
                arg = 1;
            }
            if (j > 0 && acc(i, j - 1) > best) {
                best = acc(i, j - 1);
                arg = 2;
            }
            acc(i, j) = best + score(i, j);
            from(i, j) = arg;
        }
    }
    WarpingPath path;
    Eigen::Index i = n1 - 1, j = n2 - 1;
    path.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    while (i > 0 || j > 0) {
        switch (from(i, j)) {
        case 0: --i; --j; break;
        case 1: --i; break;
        default: --j; break;
        }
        path.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
    std::reverse(path.pairs.begin(), path.pairs.end());
    return path;
}

inline double path_score(const Eigen::MatrixXd& score, const WarpingPath& path)
{
    double s = 0.0;
    for (const auto& [i, j] : path.pairs) {
        s += score(i, j);
    }
    return s;
}

/// For each reference frame, the matched frame in every video.
struct CommonTimeline {
    int reference = 0;
    std::vector<std::vector<int>> maps;  // maps[j][i]

    int length() const { return maps.empty() ? 0 : static_cast<int>(maps[reference].size()); }
    int videos() const { return static_cast<int>(maps.size()); }

    static CommonTimeline identity(int videos, int reference, int frames)
    {
        CommonTimeline t;
        t.reference = reference;
        t.maps.assign(videos, std::vector<int>(frames));
        for (auto& m : t.maps) {
            for (int i = 0; i < frames; ++i) {
                m[i] = i;
            }
        }
        return t;
    }
};

/// Collapses each (reference, j) warping path into a per-reference-frame index
/// map: where the path pairs reference frame i with several frames of j, the
/// one with the highest score wins (lowest index on ties).
///
/// paths[j] and scores[j] are ignored for j == reference; scores[j] is the
/// reference-by-j block the path was decoded from.
inline CommonTimeline build_common_timeline(const std::vector<WarpingPath>& paths,
                                            const std::vector<Eigen::MatrixXd>& scores, int reference,
                                            int reference_length)
{
    const int m = static_cast<int>(paths.size());
    if (m == 0 || reference < 0 || reference >= m || scores.size() != paths.size()) {
        throw ParameterError("build_common_timeline: bad reference or path count");
    }
    CommonTimeline t;
    t.reference = reference;
    t.maps.resize(m);
    for (int j = 0; j < m; ++j) {
        auto& map = t.maps[j];
        if (j == reference) {
            map.resize(reference_length);
            for (int i = 0; i < reference_length; ++i) {
                map[i] = i;
            }
            continue;
        }
        const auto& pairs = paths[j].pairs;
        if (pairs.empty() || pairs.back().first != reference_length - 1 || pairs.front().first != 0 ||
            scores[j].rows() != reference_length) {
            throw ParameterError("build_common_timeline: path for video " + std::to_string(j) +
                                 " does not span the reference length");
        }
        map.assign(reference_length, -1);
        std::vector<double> best(reference_length, -std::numeric_limits<double>::infinity());
        for (const auto& [i, k] : pairs) {
            const double s = scores[j](i, k);
            if (s > best[i] || (s == best[i] && k < map[i])) {
                best[i] = s;
                map[i] = k;
            }
        }
    }
    return t;
}

/// Video with the largest total affinity to all others (lowest index on ties).
inline int select_reference(const BlockGrid& grid)
{
    int best = 0;
    double best_mass = -1.0;
    for (int a = 0; a < grid.videos(); ++a) {
        double mass = 0.0;
        for (int b = 0; b < grid.videos(); ++b) {
            if (a != b) {
                mass += grid.block(a, b).sum();
            }
        }
        if (mass > best_mass) {
            best_mass = mass;
            best = a;
        }
    }
    return best;
}

struct SyncOptions {
    bool cycle_consistent = true;
    // A sharp kernel keeps the correspondence ridge distinct enough for the
    // low-rank prior to help; the median-scaled reciprocal map does not.
    AffinityOptions affinity{AffinityKernel::gaussian, 0.02, true};
    DenoiseOptions denoise;
    int reference = -1;  // < 0: choose by affinity mass
};

struct SyncResult {
    BlockGrid affinity;
    StackedCorrespondence denoised;  // empty grid when cycle_consistent is off
    std::vector<WarpingPath> paths;
    CommonTimeline timeline;
};

/// Full synchronization from per-video 3D pose sequences.
inline SyncResult synchronize(const std::vector<std::vector<Eigen::Matrix3Xd>>& poses, const SyncOptions& opt = {})
{
    if (poses.empty()) {
        throw ParameterError("synchronize: no videos");
    }
    SyncResult r;
    r.affinity = affinity_grid(poses, opt.affinity);
    const int m = r.affinity.videos();
    const BlockGrid* decode = &r.affinity;
    if (opt.cycle_consistent && m > 1) {
        r.denoised = consistent_denoise(r.affinity, opt.denoise);
        decode = &r.denoised.blocks;
    }
    const int ref = opt.reference >= 0 ? opt.reference : select_reference(*decode);
    if (ref >= m) {
        throw ParameterError("synchronize: reference index out of range");
    }
    r.paths.resize(m);
    std::vector<Eigen::MatrixXd> scores(m);
    for (int j = 0; j < m; ++j) {
        if (j == ref) {
            continue;
        }
        scores[j] = decode->block(ref, j);
        r.paths[j] = dtw_align(scores[j]);
    }
    r.timeline = build_common_timeline(r.paths, scores, ref, r.affinity.frame_counts()[ref]);
    return r;
}

} // namespace imocap
