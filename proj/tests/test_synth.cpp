#include <gtest/gtest.h>

#include <set>

#include "kanalysis/kernel.hpp"
#include "kanalysis/synth.hpp"

using namespace kanalysis;

TEST(Generate, OneHotShape) {
    auto [fs, lf] = generate({.kind = SynthKind::OneHot, .k = 7, .n_per_class = 70, .seed = 1});
    EXPECT_EQ(fs.rows(), 490u);
    EXPECT_EQ(fs.cols(), 7u);
    std::set<std::vector<double>> distinct;
    for (Eigen::Index i = 0; i < fs.matrix().rows(); ++i) {
        const auto row = fs.matrix().row(i);
        distinct.insert(std::vector<double>(row.begin(), row.end()));
    }
    EXPECT_EQ(distinct.size(), 7u);
    EXPECT_EQ(align(fs, lf).class_counts, std::vector<std::size_t>(7, 70));
}

TEST(Generate, ZeroNoiseClustersCollapseToKPoints) {
    auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = 4, .n_per_class = 5, .p = 6, .noise = 0.0, .seed = 2});
    std::set<std::vector<double>> distinct;
    for (Eigen::Index i = 0; i < fs.matrix().rows(); ++i) {
        const auto row = fs.matrix().row(i);
        distinct.insert(std::vector<double>(row.begin(), row.end()));
        EXPECT_NEAR(row.norm(), 1.0, 1e-12); // centroid on the unit sphere
    }
    EXPECT_EQ(distinct.size(), 4u);
}

TEST(Generate, DeterministicPerSeed) {
    SynthSpec spec{.kind = SynthKind::Clusters, .k = 3, .n_per_class = 4, .p = 5, .noise = 0.2, .seed = 77};
    auto a = generate(spec);
    auto b = generate(spec);
    EXPECT_EQ(a.first.matrix(), b.first.matrix());
    spec.seed = 78;
    auto c = generate(spec);
    EXPECT_NE(a.first.matrix(), c.first.matrix());
}

TEST(Generate, RejectsBadSpecs) {
    EXPECT_THROW(generate({.k = 1}), InputError);
    EXPECT_THROW(generate({.n_per_class = 1}), InputError);
    EXPECT_THROW(generate({.noise = -1.0}), InputError);
    EXPECT_THROW(generate({.kind = SynthKind::OneHot, .k = 5, .p = 3}), InputError);
}

TEST(OracleCurve, CompleteAtFullDimension) {
    auto [fs, lf] = generate({.kind = SynthKind::Noise, .k = 3, .n_per_class = 10, .p = 4, .seed = 3});
    auto e = oracle_curve(fs, encode_labels(align(fs, lf)), 1.3);
    ASSERT_EQ(e.size(), 31u);
    EXPECT_LE(e.back(), 1e-10);
    EXPECT_NEAR(e.front(), 1.0, 1e-14);
}

TEST(OracleCurve, OneHotZeroBeyondK) {
    auto [fs, lf] = generate({.kind = SynthKind::OneHot, .k = 4, .n_per_class = 6, .seed = 3});
    auto e = oracle_curve(fs, encode_labels(align(fs, lf)), 0.8);
    for (std::size_t d = 4; d < e.size(); ++d) EXPECT_LE(e[d], 1e-10) << d;
}

TEST(OracleCurve, MatchesIncrementalPipeline) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = 3, .n_per_class = 8 + seed, .p = 12,
                                  .noise = 0.5, .seed = seed});
        auto y = encode_labels(align(fs, lf));
        const auto sc = sigma_candidates(pairwise_sq_distances(fs));
        for (double s : sc.sigmas) {
            auto eb = eigendecompose(gaussian_kernel(pairwise_sq_distances(fs), s));
            auto fast = loss_curve_for_sigma(eb, y);
            auto slow = oracle_curve(fs, y, s);
            const double top = eb.values(0);
            for (std::size_t d = 0; d < fast.size(); ++d) {
                const bool gap_ok = d == 0 || d == fast.size() - 1 ||
                                    eb.values(static_cast<Eigen::Index>(d) - 1) - eb.values(static_cast<Eigen::Index>(d)) > 1e-8 * top;
                if (gap_ok) EXPECT_NEAR(fast[d], slow[d], 1e-10) << "seed " << seed << " d " << d;
            }
        }
    }
}
