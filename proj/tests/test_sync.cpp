#include <imocap/body.hpp>
#include <imocap/sync.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

using namespace imocap;

namespace {

Eigen::Matrix3Xd random_pose(std::mt19937_64& rng, int joints)
{
    std::normal_distribution<double> n;
    Eigen::Matrix3Xd p(3, joints);
    for (int k = 0; k < joints; ++k) p.col(k) = Vec3(n(rng), n(rng), n(rng));
    return p;
}

// Exhaustive maximum over monotone unit-step paths from (0, 0) to the corner.
double brute_force_best(const Eigen::MatrixXd& s)
{
    const auto n1 = s.rows();
    const auto n2 = s.cols();
    double best = -std::numeric_limits<double>::infinity();
    std::function<void(Eigen::Index, Eigen::Index, double)> walk = [&](Eigen::Index i, Eigen::Index j, double acc) {
        acc += s(i, j);
        if (i == n1 - 1 && j == n2 - 1) {
            best = std::max(best, acc);
            return;
        }
        if (i + 1 < n1 && j + 1 < n2) walk(i + 1, j + 1, acc);
        if (i + 1 < n1) walk(i + 1, j, acc);
        if (j + 1 < n2) walk(i, j + 1, acc);
    };
    walk(0, 0, 0.0);
    return best;
}

bool is_valid_path(const WarpingPath& p, Eigen::Index n1, Eigen::Index n2)
{
    if (p.pairs.front() != std::pair<int, int>{0, 0}) return false;
    if (p.pairs.back() != std::pair<int, int>{static_cast<int>(n1 - 1), static_cast<int>(n2 - 1)}) return false;
    for (std::size_t k = 1; k < p.pairs.size(); ++k) {
        const int di = p.pairs[k].first - p.pairs[k - 1].first;
        const int dj = p.pairs[k].second - p.pairs[k - 1].second;
        if (di < 0 || dj < 0 || di > 1 || dj > 1 || di + dj == 0) return false;
    }
    return true;
}

BlockGrid random_grid(std::mt19937_64& rng, std::vector<int> counts)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BlockGrid g(counts);
    for (int a = 0; a < g.videos(); ++a) {
        for (int b = a + 1; b < g.videos(); ++b) {
            Eigen::MatrixXd blk(counts[a], counts[b]);
            for (auto& x : blk.reshaped()) x = u(rng);
            g.block(a, b) = blk;
            g.block(b, a) = blk.transpose();
        }
    }
    return g;
}

} // namespace

TEST(PoseDistance, IdenticalAndSimilarPosesAreZero)
{
    std::mt19937_64 rng(3);
    const auto a = random_pose(rng, 6);
    EXPECT_NEAR(pose_distance(a, a), 0.0, 1e-12);
    const Mat3 r = axis_angle_to_matrix(Vec3(0.3, -1.1, 0.4));
    const Eigen::Matrix3Xd b = (1.7 * r * a).colwise() + Vec3(0.5, -2.0, 3.0);
    EXPECT_NEAR(pose_distance(a, b), 0.0, 1e-9);
}

TEST(PoseDistance, DegeneratePoseThrows)
{
    const Eigen::Matrix3Xd flat = Eigen::Matrix3Xd::Zero(3, 5);
    std::mt19937_64 rng(4);
    EXPECT_THROW(pose_distance(flat, random_pose(rng, 5)), DegeneracyError);
}

TEST(Affinity, KernelValues)
{
    EXPECT_DOUBLE_EQ(affinity_from_distance(0.0, 2.0), 1.0);
    EXPECT_DOUBLE_EQ(affinity_from_distance(2.0, 2.0), 0.5);
    EXPECT_LT(affinity_from_distance(1e12, 2.0), 1e-11);
    EXPECT_DOUBLE_EQ(affinity_from_distance(0.0, 2.0, AffinityKernel::gaussian), 1.0);
    EXPECT_NEAR(affinity_from_distance(2.0, 2.0, AffinityKernel::gaussian), std::exp(-0.5), 1e-15);
}

TEST(Affinity, MonotoneDecreasingInDistance)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int t = 0; t < 1000; ++t) {
        const double sigma = 0.01 + u(rng);
        double d1 = u(rng), d2 = u(rng);
        if (d1 > d2) std::swap(d1, d2);
        for (auto k : {AffinityKernel::reciprocal, AffinityKernel::gaussian}) {
            const double a1 = affinity_from_distance(d1, sigma, k);
            const double a2 = affinity_from_distance(d2, sigma, k);
            EXPECT_GE(a1, a2);
            EXPECT_GE(a2, 0.0);
            EXPECT_LE(a1, 1.0);
        }
    }
}

TEST(Affinity, MatrixUsesMedianScale)
{
    std::mt19937_64 rng(6);
    std::vector<Eigen::Matrix3Xd> a, b;
    for (int k = 0; k < 5; ++k) a.push_back(random_pose(rng, 6));
    for (int k = 0; k < 4; ++k) b.push_back(random_pose(rng, 6));
    const auto aff = affinity_matrix(a, b);
    std::vector<double> d;
    for (const auto& x : a) {
        for (const auto& y : b) d.push_back(pose_distance(x, y));
    }
    const double sigma = median_of(d);
    for (int p = 0; p < 5; ++p) {
        for (int q = 0; q < 4; ++q) {
            EXPECT_NEAR(aff(p, q), sigma / (sigma + pose_distance(a[p], b[q])), 1e-14);
        }
    }
    EXPECT_NEAR(quantile_of(d, 0.5), sigma, 1e-14);
}

TEST(Affinity, AllDegenerateThrows)
{
    const std::vector<Eigen::Matrix3Xd> flat(3, Eigen::Matrix3Xd::Zero(3, 4));
    EXPECT_THROW(affinity_matrix(flat, flat), DegeneracyError);
}

TEST(Affinity, GridIsSymmetricWithIdentityDiagonal)
{
    std::mt19937_64 rng(7);
    std::vector<std::vector<Eigen::Matrix3Xd>> poses(3);
    for (int j = 0; j < 3; ++j) {
        for (int k = 0; k < 3 + j; ++k) poses[j].push_back(random_pose(rng, 5));
    }
    const auto g = affinity_grid(poses);
    EXPECT_NO_THROW(check_symmetric_grid(g));
    const Eigen::MatrixXd s = g.stacked();
    EXPECT_EQ(s.rows(), 12);
    EXPECT_TRUE(s.isApprox(s.transpose()));
    EXPECT_TRUE(g.block(1, 1).isIdentity());
}

TEST(Dtw, IdentityTwoByTwo)
{
    const auto p = dtw_align(Eigen::Matrix2d::Identity());
    ASSERT_EQ(p.pairs.size(), 2u);
    EXPECT_EQ(p.pairs[0], (std::pair<int, int>{0, 0}));
    EXPECT_EQ(p.pairs[1], (std::pair<int, int>{1, 1}));
}

TEST(Dtw, SingleRowVisitsEveryColumn)
{
    const auto p = dtw_align(Eigen::MatrixXd::Random(1, 7));
    ASSERT_EQ(p.pairs.size(), 7u);
    for (int j = 0; j < 7; ++j) EXPECT_EQ(p.pairs[j], (std::pair<int, int>{0, j}));
}

TEST(Dtw, MatchesBruteForceOnSmallMatrices)
{
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> size(1, 6);
    std::normal_distribution<double> n;
    for (int t = 0; t < 200; ++t) {
        Eigen::MatrixXd s(size(rng), size(rng));
        for (auto& x : s.reshaped()) x = n(rng);
        const auto p = dtw_align(s);
        ASSERT_TRUE(is_valid_path(p, s.rows(), s.cols()));
        EXPECT_NEAR(path_score(s, p), brute_force_best(s), 1e-12);
    }
}

TEST(Dtw, EmptyThrows)
{
    EXPECT_THROW(dtw_align(Eigen::MatrixXd(0, 3)), ParameterError);
}

TEST(Denoise, ObjectiveIsMonotone)
{
    std::mt19937_64 rng(9);
    for (int t = 0; t < 10; ++t) {
        const auto g = random_grid(rng, {6, 5, 7});
        const auto r = consistent_denoise(g);
        for (std::size_t k = 1; k < r.objective_trace.size(); ++k) {
            EXPECT_LE(r.objective_trace[k], r.objective_trace[k - 1] + 1e-12);
        }
        EXPECT_NO_THROW(check_symmetric_grid(r.blocks));
        const Eigen::MatrixXd x = r.blocks.stacked();
        EXPECT_GE(x.minCoeff(), 0.0);
        EXPECT_LE(x.maxCoeff(), 1.0);
    }
}

TEST(Denoise, ConsistentInputIsNearlyFixed)
{
    BlockGrid g(std::vector<int>(3, 4));
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) g.block(a, b).setIdentity();
    }
    DenoiseOptions opt;
    opt.lambda = 1e-8;
    const auto r = consistent_denoise(g, opt);
    EXPECT_LT((r.blocks.stacked() - g.stacked()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Denoise, VanishingLambdaGivesBoxProjection)
{
    std::mt19937_64 rng(10);
    BlockGrid g = random_grid(rng, {4, 5});
    g.block(0, 1)(0, 0) = 1.7;
    g.block(0, 1)(1, 2) = -0.4;
    g.block(1, 0) = g.block(0, 1).transpose();
    DenoiseOptions opt;
    opt.lambda = 1e-12;
    const auto r = consistent_denoise(g, opt);
    const Eigen::MatrixXd expect = g.block(0, 1).cwiseMax(0.0).cwiseMin(1.0);
    EXPECT_LT((r.blocks.block(0, 1) - expect).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Denoise, AsymmetricGridIsInputError)
{
    std::mt19937_64 rng(11);
    BlockGrid g = random_grid(rng, {3, 3});
    g.block(1, 0)(0, 1) += 0.1;
    EXPECT_THROW(consistent_denoise(g), InputError);
}

// Three videos each see 5 of 8 underlying instants, so true correspondences
// are partial but consistent around every cycle. 20% of the entries of every
// block are flipped.
TEST(Denoise, SaltNoiseMovesTowardTrueCorrespondence)
{
    long correct_raw = 0, correct_denoised = 0, total = 0;
    double err_raw = 0.0, err_denoised = 0.0;
    DenoiseOptions strong;
    strong.lambda_scale = 0.3;
    for (int trial = 0; trial < 100; ++trial) {
        std::mt19937_64 rng(1000 + trial);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<std::vector<int>> seen(3);
        for (auto& s : seen) {
            std::vector<int> all(8);
            std::iota(all.begin(), all.end(), 0);
            std::shuffle(all.begin(), all.end(), rng);
            s.assign(all.begin(), all.begin() + 5);
            std::sort(s.begin(), s.end());
        }
        BlockGrid g(std::vector<int>(3, 5));
        Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(15, 15);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                for (int p = 0; p < 5; ++p) {
                    for (int q = 0; q < 5; ++q) truth(5 * a + p, 5 * b + q) = seen[a][p] == seen[b][q] ? 1.0 : 0.0;
                }
            }
        }
        for (int a = 0; a < 3; ++a) {
            for (int b = a + 1; b < 3; ++b) {
                Eigen::MatrixXd blk = truth.block(5 * a, 5 * b, 5, 5);
                for (auto& v : blk.reshaped()) v = u(rng) < 0.2 ? 1.0 - v : v;
                g.block(a, b) = blk;
                g.block(b, a) = blk.transpose();
            }
        }
        err_raw += (g.stacked() - truth).norm();
        err_denoised += (consistent_denoise(g).blocks.stacked() - truth).norm();

        const auto x = consistent_denoise(g, strong);
        for (int j = 1; j < 3; ++j) {
            const auto raw = build_common_timeline({{}, dtw_align(g.block(0, j))}, {{}, g.block(0, j)}, 0, 5);
            const auto den = build_common_timeline({{}, dtw_align(x.blocks.block(0, j))},
                                                   {{}, x.blocks.block(0, j)}, 0, 5);
            for (int i = 0; i < 5; ++i) {
                const auto it = std::find(seen[j].begin(), seen[j].end(), seen[0][i]);
                if (it == seen[j].end()) continue;
                const int t = static_cast<int>(it - seen[j].begin());
                correct_raw += raw.maps[1][i] == t;
                correct_denoised += den.maps[1][i] == t;
                ++total;
            }
        }
    }
    EXPECT_LT(err_denoised, err_raw);
    EXPECT_GE(correct_denoised, correct_raw) << "raw " << correct_raw << " denoised " << correct_denoised
                                             << " of " << total;
}

TEST(Timeline, SubsampledVideoMapsToHalfIndex)
{
    // Video 1 holds every second frame of the reference.
    Eigen::MatrixXd score = Eigen::MatrixXd::Zero(6, 3);
    for (int k = 0; k < 3; ++k) score(2 * k, k) = 1.0;
    const auto path = dtw_align(score);
    const std::vector<std::pair<int, int>> expected{{0, 0}, {1, 0}, {2, 1}, {3, 1}, {4, 2}, {5, 2}};
    EXPECT_EQ(path.pairs, expected);
    const auto tl = build_common_timeline({{}, path}, {{}, score}, 0, 6);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(tl.maps[1][i], i / 2);
    EXPECT_EQ(tl.length(), 6);
}

TEST(Timeline, BestScoringFrameWinsWithinARun)
{
    Eigen::MatrixXd score(2, 3);
    score << 0.9, 0.2, 0.1,
             0.1, 0.3, 0.8;
    WarpingPath p;
    p.pairs = {{0, 0}, {0, 1}, {1, 1}, {1, 2}};
    const auto tl = build_common_timeline({{}, p}, {{}, score}, 0, 2);
    EXPECT_EQ(tl.maps[1], (std::vector<int>{0, 2}));
}

TEST(Synchronize, IdenticalVideosGiveIdentityMaps)
{
    std::mt19937_64 rng(12);
    std::vector<Eigen::Matrix3Xd> clip;
    for (int k = 0; k < 12; ++k) clip.push_back(random_pose(rng, 8));
    for (bool consistent : {true, false}) {
        SyncOptions opt;
        opt.cycle_consistent = consistent;
        const auto r = synchronize({clip, clip, clip}, opt);
        for (const auto& m : r.timeline.maps) {
            for (int i = 0; i < 12; ++i) EXPECT_EQ(m[i], i);
        }
    }
}

TEST(Synchronize, SingleVideoIsItsOwnTimeline)
{
    std::mt19937_64 rng(13);
    std::vector<Eigen::Matrix3Xd> clip;
    for (int k = 0; k < 5; ++k) clip.push_back(random_pose(rng, 8));
    const auto r = synchronize({clip});
    EXPECT_EQ(r.timeline.reference, 0);
    EXPECT_EQ(r.timeline.maps[0], (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(Synchronize, RecoversKnownOffsets)
{
    std::mt19937_64 rng(14);
    std::vector<Eigen::Matrix3Xd> base;
    for (int k = 0; k < 30; ++k) base.push_back(random_pose(rng, 8));
    // Video 1 skips frames, video 2 repeats some.
    const std::vector<int> idx1{0, 1, 3, 4, 6, 7, 9, 12, 13, 15, 18, 20, 21, 24, 27, 29};
    const std::vector<int> idx2{0, 2, 2, 5, 8, 9, 10, 11, 14, 17, 19, 23, 25, 26, 28, 29};
    std::vector<Eigen::Matrix3Xd> v1, v2;
    for (int k : idx1) v1.push_back(base[k]);
    for (int k : idx2) v2.push_back(base[k]);
    SyncOptions opt;
    opt.reference = 0;
    const auto r = synchronize({base, v1, v2}, opt);
    for (int i = 0; i < 30; ++i) {
        for (int j = 1; j < 3; ++j) {
            const auto& idx = j == 1 ? idx1 : idx2;
            const auto it = std::find(idx.begin(), idx.end(), i);
            if (it != idx.end()) {
                EXPECT_EQ(idx[r.timeline.maps[j][i]], i) << "video " << j << " frame " << i;
            }
        }
    }
}
