#pragma once

// Synthetic representations whose kernel-analysis behavior is known in
// advance, and a deliberately naive reference implementation of the loss
// curve used to cross-check the main pipeline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kanalysis/dataset.hpp"
#include "kanalysis/error.hpp"
#include "kanalysis/kernel.hpp"
#include "kanalysis/rng.hpp"

namespace kanalysis {

enum class SynthKind { OneHot, Clusters, Noise };

inline std::string to_string(SynthKind k) {
    switch (k) {
    case SynthKind::OneHot: return "onehot";
    case SynthKind::Clusters: return "clusters";
    case SynthKind::Noise: return "noise";
    }
    return "noise";
}

inline SynthKind parse_synth_kind(std::string_view s) {
    if (s == "onehot") return SynthKind::OneHot;
    if (s == "clusters") return SynthKind::Clusters;
    if (s == "noise") return SynthKind::Noise;
    throw InputError("unknown synthetic kind '" + std::string(s) + "'");
}

struct SynthSpec {
    SynthKind kind = SynthKind::Clusters;
    std::size_t k = 7;
    std::size_t n_per_class = 70;
    std::size_t p = 0; // 0: k for onehot, 32 otherwise
    double noise = 0.1;
    double separation = 1.0;
    std::uint64_t seed = 0;
    std::string id_prefix = "img";
    Variation variation = Variation::Unspecified;

    std::size_t dimension() const { return p != 0 ? p : (kind == SynthKind::OneHot ? k : 32); }
};

inline std::string class_name(std::size_t j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "class%02zu", j);
    return buf;
}

/// Images are laid out class by class. onehot: class j sits at
/// separation * e_j. clusters: centroids uniform on the sphere of radius
/// `separation`, plus isotropic Gaussian noise. noise: standard normal
/// features unrelated to the labels.
inline std::pair<FeatureSet, LabelFrame> generate(const SynthSpec& spec) {
    if (spec.k < 2) throw InputError("synthetic spec needs k >= 2");
    if (spec.n_per_class < 2) throw InputError("synthetic spec needs n_per_class >= 2");
    if (!(spec.noise >= 0.0)) throw InputError("synthetic noise must be non-negative");
    const std::size_t p = spec.dimension();
    if (spec.kind == SynthKind::OneHot && p < spec.k) throw InputError("onehot needs p >= k");
    const std::size_t n = spec.k * spec.n_per_class;

    auto rng = keyed_engine(spec.seed, Stream::Synth, {static_cast<std::uint64_t>(spec.kind)});
    std::normal_distribution<double> normal(0.0, 1.0);

    RowMatrix centroids = RowMatrix::Zero(static_cast<Eigen::Index>(spec.k), static_cast<Eigen::Index>(p));
    if (spec.kind == SynthKind::OneHot) {
        for (std::size_t j = 0; j < spec.k; ++j) centroids(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = spec.separation;
    } else if (spec.kind == SynthKind::Clusters) {
        for (std::size_t j = 0; j < spec.k; ++j) {
            auto row = centroids.row(static_cast<Eigen::Index>(j));
            do {
                for (auto& v : row) v = normal(rng);
            } while (row.norm() == 0.0);
            row *= spec.separation / row.norm();
        }
    }

    std::vector<std::string> ids, classes;
    ids.reserve(n);
    classes.reserve(n);
    RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    char buf[64];
    for (std::size_t j = 0; j < spec.k; ++j) {
        for (std::size_t i = 0; i < spec.n_per_class; ++i) {
            const auto r = static_cast<Eigen::Index>(j * spec.n_per_class + i);
            std::snprintf(buf, sizeof buf, "%s%05zu", spec.id_prefix.c_str(), static_cast<std::size_t>(r));
            ids.emplace_back(buf);
            classes.push_back(class_name(j));
            switch (spec.kind) {
            case SynthKind::OneHot:
                x.row(r) = centroids.row(static_cast<Eigen::Index>(j));
                break;
            case SynthKind::Clusters:
                x.row(r) = centroids.row(static_cast<Eigen::Index>(j));
                for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) += spec.noise * normal(rng);
                break;
            case SynthKind::Noise:
                for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = normal(rng);
                break;
            }
        }
    }
    LabelFrame labels(ids, std::move(classes));
    return {FeatureSet(std::move(ids), std::move(x), spec.variation), std::move(labels)};
}

/// Reference loss curve for a single bandwidth. Every step is recomputed
/// from scratch: the kernel from raw features, the eigenbasis with Eigen's
/// own solver, and for each d an explicit projection onto the leading d
/// eigenvectors. Cost is O(n^3 k), so keep n modest.
inline std::vector<double> oracle_curve(const FeatureSet& fs, const LabelMatrix& y, double sigma) {
    const auto n = static_cast<Eigen::Index>(fs.rows());
    if (y.values.rows() != n) throw InputError("oracle: label rows do not match feature rows");
    const auto& x = fs.matrix();
    Eigen::MatrixXd kmat(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            kmat(i, j) = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / (2.0 * sigma * sigma));

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(kmat);
    if (solver.info() != Eigen::Success) throw NumericError("oracle eigensolver failed");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return solver.eigenvalues()(a) > solver.eigenvalues()(b);
    });
    Eigen::MatrixXd u(n, n);
    for (Eigen::Index i = 0; i < n; ++i) u.col(i) = solver.eigenvectors().col(order[static_cast<std::size_t>(i)]);

    const auto k = y.values.cols();
    std::vector<double> e;
    for (Eigen::Index d = 0; d <= n; ++d) {
        const Eigen::MatrixXd ud = u.leftCols(d);
        const Eigen::MatrixXd theta = ud.transpose() * y.values;
        const Eigen::MatrixXd fitted = ud * theta;
        double total = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) total += (fitted.col(j) - y.values.col(j)).squaredNorm() / static_cast<double>(n);
        e.push_back(total / static_cast<double>(k));
    }
    return e;
}

} // namespace kanalysis
