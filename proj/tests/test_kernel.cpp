#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "kanalysis/kernel.hpp"
#include "kanalysis/synth.hpp"

using namespace kanalysis;

namespace {

FeatureSet make_features(std::vector<std::vector<double>> rows) {
    RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ids.push_back("r" + std::to_string(i));
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return FeatureSet(std::move(ids), std::move(m));
}

AlignedDataset make_aligned(const FeatureSet& fs, std::vector<std::string> classes) {
    return align(fs, LabelFrame(fs.image_ids(), std::move(classes)));
}

DistanceMatrix distances_from_list(std::size_t n, const std::vector<double>& upper) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    std::size_t idx = 0;
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 0; i < j; ++i) {
            d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = upper[idx];
            d(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = upper[idx];
            ++idx;
        }
    return {d};
}

} // namespace

TEST(PairwiseDistances, AnalyticValues) {
    auto d1 = pairwise_sq_distances(make_features({{0.0}, {3.0}}));
    EXPECT_DOUBLE_EQ(d1.values(0, 1), 9.0);
    auto d2 = pairwise_sq_distances(make_features({{0.0, 0.0}, {3.0, 4.0}}));
    EXPECT_DOUBLE_EQ(d2.values(0, 1), 25.0);
    EXPECT_DOUBLE_EQ(d2.values(1, 0), 25.0);
    auto d3 = pairwise_sq_distances(make_features({{1.5, 2.0}, {1.5, 2.0}, {0.0, 0.0}}));
    EXPECT_EQ(d3.values(0, 1), 0.0);
    EXPECT_EQ(d3.values(2, 2), 0.0);
}

TEST(SigmaCandidates, ConstantDistribution) {
    auto s = sigma_candidates(pairwise_sq_distances(make_features({{0, 0}, {2, 0}, {1, std::sqrt(3.0)}})));
    for (double v : s.sigmas) EXPECT_NEAR(v, 2.0, 1e-15);
}

TEST(SigmaCandidates, MedianOfOneToHundred) {
    // 15 points give 105 pairs; the first 100 carry squared distances 1..100
    // and the remaining 5 are pinned to 100 so the multiset is known exactly.
    std::vector<double> upper;
    for (int i = 1; i <= 100; ++i) upper.push_back(static_cast<double>(i) * i);
    for (int i = 0; i < 5; ++i) upper.push_back(100.0 * 100.0);
    auto s = sigma_candidates(distances_from_list(15, upper), {0.5});
    // oracle: sorted multiset {1..100, 100 x5}, 105 values, median index 52 -> 53
    std::vector<double> sorted;
    for (int i = 1; i <= 100; ++i) sorted.push_back(i);
    for (int i = 0; i < 5; ++i) sorted.push_back(100);
    EXPECT_DOUBLE_EQ(s.sigmas[0], sorted[52]);
}

TEST(SigmaCandidates, LinearInterpolationQuantile) {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    EXPECT_DOUBLE_EQ(interpolated_quantile(v, 0.5), 50.5);
    EXPECT_DOUBLE_EQ(interpolated_quantile(v, 0.1), 10.9);
}

TEST(SigmaCandidates, TwoPoints) {
    auto s = sigma_candidates(pairwise_sq_distances(make_features({{0.0}, {4.0}})));
    for (double v : s.sigmas) EXPECT_DOUBLE_EQ(v, 4.0);
}

TEST(SigmaCandidates, ZeroQuantileFallsBackToSmallestPositive) {
    auto s = sigma_candidates(pairwise_sq_distances(make_features({{0.0}, {0.0}, {0.0}, {0.0}, {2.0}})), {0.1, 0.9});
    EXPECT_DOUBLE_EQ(s.sigmas[0], 2.0);
    EXPECT_DOUBLE_EQ(s.sigmas[1], 2.0);
}

TEST(SigmaCandidates, ConstantRepresentationRejected) {
    try {
        sigma_candidates(pairwise_sq_distances(make_features({{1.0}, {1.0}, {1.0}})));
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("constant representation"), std::string::npos);
    }
}

TEST(SigmaCandidates, BadQuantiles) {
    auto d = pairwise_sq_distances(make_features({{0.0}, {1.0}}));
    EXPECT_THROW(sigma_candidates(d, {0.0}), InputError);
    EXPECT_THROW(sigma_candidates(d, {1.0}), InputError);
    EXPECT_THROW(sigma_candidates(d, {}), InputError);
}

TEST(GaussianKernel, Values) {
    const double sigma = 0.7;
    auto d = distances_from_list(3, {2 * sigma * sigma, 1.0, 4.0});
    auto k = gaussian_kernel(d, sigma);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(k.values(i, i), 1.0);
    EXPECT_NEAR(k.values(0, 1), 0.36787944117144233, 1e-15);
    EXPECT_THROW(gaussian_kernel(d, 0.0), InputError);
    EXPECT_THROW(gaussian_kernel(d, -1.0), InputError);

    auto big = gaussian_kernel(d, std::sqrt(1e6 * 4.0));
    EXPECT_LE((big.values.array() - 1.0).abs().maxCoeff(), 1e-6);
}

TEST(Eigendecompose, Identity) {
    auto eb = eigendecompose(Eigen::MatrixXd::Identity(4, 4));
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(eb.values(i), 1.0, 1e-15);
}

TEST(Eigendecompose, AllOnes) {
    auto eb = eigendecompose(Eigen::MatrixXd::Ones(4, 4));
    EXPECT_NEAR(eb.values(0), 4.0, 1e-12);
    for (int i = 1; i < 4; ++i) EXPECT_NEAR(eb.values(i), 0.0, 1e-12);
    for (int r = 0; r < 4; ++r) EXPECT_NEAR(eb.vectors(r, 0), 0.5, 1e-12);
}

TEST(Eigendecompose, RandomKernelReconstruction) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal;
    RowMatrix x(50, 5);
    for (auto& v : x.reshaped()) v = normal(rng);
    std::vector<std::string> ids;
    for (int i = 0; i < 50; ++i) ids.push_back(std::to_string(i));
    auto k = gaussian_kernel(pairwise_sq_distances(x), 1.5);
    auto eb = eigendecompose(k);
    const Eigen::MatrixXd rebuilt = eb.vectors * eb.values.asDiagonal() * eb.vectors.transpose();
    EXPECT_LE((rebuilt - k.values).cwiseAbs().maxCoeff(), 1e-8);
    const Eigen::MatrixXd gram = eb.vectors.transpose() * eb.vectors;
    EXPECT_LE((gram - Eigen::MatrixXd::Identity(50, 50)).cwiseAbs().maxCoeff(), 1e-10);
    for (int i = 0; i + 1 < 50; ++i) EXPECT_GE(eb.values(i), eb.values(i + 1));
    // sign convention
    for (int i = 0; i < 50; ++i) {
        auto u = eb.vectors.col(i);
        for (int r = 0; r < 50; ++r)
            if (std::abs(u(r)) > 1e-12 * u.cwiseAbs().maxCoeff()) {
                EXPECT_GT(u(r), 0.0);
                break;
            }
    }
}

// The kernel of a 7-class one-hot set with 56 images per class has rank 7
// and a 385-fold zero eigenvalue; some BLAS kernels lose orthogonality here.
TEST(Eigendecompose, DegenerateOneHotStaysOrthonormal) {
    auto [fs, lf] = generate({.kind = SynthKind::OneHot, .k = 7, .n_per_class = 56});
    const auto dm = pairwise_sq_distances(fs);
    const auto eb = eigendecompose(gaussian_kernel(dm, 1.0));
    const auto n = eb.vectors.cols();
    ASSERT_EQ(n, 392);
    const Eigen::MatrixXd gram = eb.vectors.transpose() * eb.vectors;
    EXPECT_LE((gram - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-10);
    const Eigen::MatrixXd k = gaussian_kernel(dm, 1.0).values;
    const Eigen::MatrixXd rebuilt = eb.vectors * eb.values.asDiagonal() * eb.vectors.transpose();
    EXPECT_LE((rebuilt - k).cwiseAbs().maxCoeff(), 1e-10);
    for (Eigen::Index i = 7; i < n; ++i) EXPECT_LE(std::abs(eb.values(i)), 1e-10 * eb.values(0));
}

TEST(EncodeLabels, SignedAndBinary) {
    auto fs = make_features({{0.0}, {1.0}, {2.0}, {3.0}});
    auto ad = make_aligned(fs, {"A", "B", "A", "B"});
    auto s = encode_labels(ad, Encoding::Signed);
    Eigen::MatrixXd expect_s(4, 2);
    expect_s << 1, -1, -1, 1, 1, -1, -1, 1;
    EXPECT_EQ(s.values, expect_s);
    auto b = encode_labels(ad, Encoding::Binary);
    Eigen::MatrixXd expect_b(4, 2);
    expect_b << 1, 0, 0, 1, 1, 0, 0, 1;
    EXPECT_EQ(b.values, expect_b);
    EXPECT_EQ(b.class_names, (std::vector<std::string>{"A", "B"}));
}

TEST(EncodeLabels, ThreeImagesTwoClassesOrderedByName) {
    auto fs = make_features({{0.0}, {1.0}, {2.0}, {3.0}});
    // classes sorted by name: column 0 = "A", column 1 = "B"
    auto ad = make_aligned(fs, {"B", "A", "B", "A"});
    auto s = encode_labels(ad, Encoding::Signed);
    EXPECT_EQ(s.values(0, 0), -1.0);
    EXPECT_EQ(s.values(0, 1), 1.0);
}

TEST(EncodeLabels, StandardizedColumnsHaveZeroMeanUnitSquare) {
    auto [fs, lf] = generate({.kind = SynthKind::Noise, .k = 5, .n_per_class = 7, .p = 3, .seed = 4});
    auto y = encode_labels(align(fs, lf));
    for (Eigen::Index j = 0; j < y.values.cols(); ++j) {
        EXPECT_NEAR(y.values.col(j).mean(), 0.0, 1e-14);
        EXPECT_NEAR(y.values.col(j).squaredNorm() / 35.0, 1.0, 1e-14);
    }
}

TEST(LossCurve, CompletenessAndMonotonicity) {
    auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = 4, .n_per_class = 10, .p = 6, .noise = 0.4, .seed = 9});
    auto ad = align(fs, lf);
    for (auto enc : {Encoding::Standardized, Encoding::Signed, Encoding::Binary}) {
        auto y = encode_labels(ad, enc);
        auto eb = eigendecompose(gaussian_kernel(pairwise_sq_distances(fs), 1.0));
        auto e = loss_curve_for_sigma(eb, y);
        ASSERT_EQ(e.size(), 41u);
        for (std::size_t d = 0; d + 1 < e.size(); ++d) EXPECT_LE(e[d + 1], e[d] + 1e-12);
        EXPECT_LE(e.back(), 1e-10);
        if (enc == Encoding::Binary)
            EXPECT_NEAR(e[0], 0.25, 1e-15);
        else
            EXPECT_NEAR(e[0], 1.0, 1e-14);
    }
}

TEST(LossCurve, DimensionMismatch) {
    auto fs = make_features({{0.0}, {1.0}, {2.0}, {3.0}});
    auto ad = make_aligned(fs, {"A", "B", "A", "B"});
    auto eb = eigendecompose(Eigen::MatrixXd::Identity(3, 3));
    EXPECT_THROW(loss_curve_for_sigma(eb, encode_labels(ad)), InputError);
}

TEST(LossCurve, FourPointBruteForce) {
    // 1-D features (0,0,1,1), classes (A,A,B,B). Distances are 0 or 1, so
    // every quantile-based sigma is 1 and K has off-diagonal blocks e^{-1/2}.
    auto fs = make_features({{0.0}, {0.0}, {1.0}, {1.0}});
    auto ad = make_aligned(fs, {"A", "A", "B", "B"});
    auto sc = sigma_candidates(pairwise_sq_distances(fs), {0.5});
    ASSERT_DOUBLE_EQ(sc.sigmas[0], 1.0);
    for (auto enc : {Encoding::Standardized, Encoding::Signed, Encoding::Binary}) {
        auto y = encode_labels(ad, enc);
        auto e = loss_curve_for_sigma(eigendecompose(gaussian_kernel(pairwise_sq_distances(fs), 1.0)), y);
        auto oracle = oracle_curve(fs, y, 1.0);
        ASSERT_EQ(e.size(), oracle.size());
        for (std::size_t d = 0; d < e.size(); ++d) EXPECT_NEAR(e[d], oracle[d], 1e-12) << "d=" << d;
    }
    // Hand values for the signed encoding: K = [[1,1,a,a],[1,1,a,a],[a,a,1,1],[a,a,1,1]]
    // with a = e^{-1/2}. Its range is spanned by (1,1,1,1) (lambda = 2+2a) and
    // (1,1,-1,-1) (lambda = 2-2a). Signed Y columns are (1,1,-1,-1) and
    // (-1,-1,1,1): orthogonal to u_1, inside u_2. So e = (1, 1, 0, 0, 0).
    auto e = loss_curve_for_sigma(eigendecompose(gaussian_kernel(pairwise_sq_distances(fs), 1.0)),
                                  encode_labels(ad, Encoding::Signed));
    const std::vector<double> hand{1.0, 1.0, 0.0, 0.0, 0.0};
    for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(e[d], hand[d], 1e-12);
}

TEST(KACurve, SingleCandidateEqualsItsCurve) {
    auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = 3, .n_per_class = 8, .p = 4, .noise = 0.3, .seed = 2});
    auto ad = align(fs, lf);
    auto y = encode_labels(ad);
    AnalysisConfig cfg;
    cfg.quantiles = {0.5};
    auto c = ka_curve(fs, y, cfg);
    ASSERT_EQ(c.per_sigma.size(), 1u);
    EXPECT_EQ(c.loss, c.per_sigma[0]);
}

TEST(KACurve, MinimumOverCandidates) {
    auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = 4, .n_per_class = 12, .p = 5, .noise = 0.6, .seed = 3});
    auto ad = align(fs, lf);
    AnalysisConfig cfg;
    cfg.workers = 3;
    auto c = ka_curve(fs, encode_labels(ad), cfg);
    ASSERT_EQ(c.per_sigma.size(), 3u);
    for (std::size_t d = 0; d < c.loss.size(); ++d) {
        for (const auto& curve : c.per_sigma) EXPECT_LE(c.loss[d], curve[d]);
        EXPECT_EQ(c.loss[d], c.per_sigma[c.argmin[d]][d]);
    }
    // d = 0 ties across all candidates and resolves to the smallest sigma
    EXPECT_EQ(c.argmin[0], 0u);
}

TEST(KACurve, ParallelMatchesSerial) {
    auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = 4, .n_per_class = 12, .p = 5, .noise = 0.6, .seed = 5});
    auto y = encode_labels(align(fs, lf));
    AnalysisConfig serial, parallel;
    parallel.workers = 4;
    EXPECT_EQ(ka_curve(fs, y, serial).loss, ka_curve(fs, y, parallel).loss);
}

TEST(KAAuc, TrapezoidArithmetic) {
    KACurve c;
    c.sigmas = {{0.5}, {1.0}};
    const std::size_t dim = 10;
    c.loss.assign(dim + 1, 0.0);
    c.loss[0] = 1.0;
    c.argmin.assign(dim + 1, 0);
    EXPECT_NEAR(ka_auc(c), 1.0 - 1.0 / (2.0 * dim), 1e-15);
    for (std::size_t d = 0; d <= dim; ++d) c.loss[d] = 1.0 - static_cast<double>(d) / dim;
    EXPECT_NEAR(ka_auc(c), 0.5, 1e-15);
}

TEST(KACurve, OneHotIsExactBeyondK) {
    auto [fs, lf] = generate({.kind = SynthKind::OneHot, .k = 5, .n_per_class = 6, .seed = 1});
    auto ad = align(fs, lf);
    auto c = ka_curve(fs, encode_labels(ad));
    for (std::size_t d = 5; d < c.loss.size(); ++d) EXPECT_LE(c.loss[d], 1e-10);
}

TEST(KACurve, CenteredOptionStaysComplete) {
    auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = 3, .n_per_class = 6, .p = 4, .noise = 0.3, .seed = 8});
    AnalysisConfig cfg;
    cfg.center = true;
    auto c = ka_curve(fs, encode_labels(align(fs, lf)), cfg);
    EXPECT_LE(c.loss.back(), 1e-10);
    for (std::size_t d = 0; d + 1 < c.loss.size(); ++d) EXPECT_LE(c.loss[d + 1], c.loss[d] + 1e-12);
}

TEST(LossCurve, ProjectedMatchesBasisRoute) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = 5, .n_per_class = 30, .p = 12, .noise = 0.6, .seed = seed});
        auto ad = align(fs, lf);
        auto dm = pairwise_sq_distances(fs);
        for (double sigma : {0.5, 2.0, 8.0}) {
            auto k = gaussian_kernel(dm, sigma);
            for (auto enc : {Encoding::Standardized, Encoding::Binary}) {
                auto y = encode_labels(ad, enc);
                std::size_t clamped = 99;
                auto fast = projected_loss_curve(k.values, y, &clamped);
                auto eb = eigendecompose(k);
                auto ref = loss_curve_for_sigma(eb, y);
                ASSERT_EQ(fast.size(), ref.size());
                EXPECT_EQ(clamped, eb.clamped);
                // inside a cluster of near-equal eigenvalues the split point is not defined
                for (std::size_t d = 0; d < ref.size(); ++d) {
                    const auto di = static_cast<Eigen::Index>(d);
                    if (d > 0 && d + 1 < ref.size() && eb.values(di - 1) - eb.values(di) < 1e-6 * eb.values(0)) continue;
                    EXPECT_NEAR(fast[d], ref[d], 1e-10) << "d=" << d;
                }
                for (std::size_t d = 0; d + 1 < fast.size(); ++d) EXPECT_LE(fast[d + 1], fast[d]);
                EXPECT_EQ(fast.back(), 0.0);
            }
        }
    }
}
