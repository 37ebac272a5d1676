#pragma once

// Kernel analysis: accuracy of a linear one-vs-all readout as a function of
// the number of leading Gaussian-kernel principal directions it may use.
//
// For each bandwidth candidate sigma:
//   K = exp(-D / (2 sigma^2)),  K = U diag(lambda) U^T  (lambda descending)
//   e(d, sigma) = mean_j (1/n) || Y_j - U_d U_d^T Y_j ||^2
// and e(d) = min_sigma e(d, sigma). The score is the area under 1 - e(d)
// plotted against d / D.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <lapacke.h>

#include "kanalysis/dataset.hpp"
#include "kanalysis/error.hpp"
#include "kanalysis/parallel.hpp"

namespace kanalysis {

/// Squared Euclidean distances between all pairs of rows.
struct DistanceMatrix {
    Eigen::MatrixXd values;

    std::size_t size() const { return static_cast<std::size_t>(values.rows()); }

    /// Principal submatrix for a subset of rows, in the given order.
    DistanceMatrix restrict(std::span<const std::size_t> rows) const {
        const auto m = static_cast<Eigen::Index>(rows.size());
        Eigen::MatrixXd out(m, m);
        for (Eigen::Index j = 0; j < m; ++j)
            for (Eigen::Index i = 0; i < m; ++i)
                out(i, j) = values(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]),
                                   static_cast<Eigen::Index>(rows[static_cast<std::size_t>(j)]));
        return {std::move(out)};
    }
};

inline DistanceMatrix pairwise_sq_distances(const RowMatrix& x) {
    const Eigen::Index n = x.rows();
    if (n < 2) throw InputError("need at least 2 rows to compute distances");
    const Eigen::Index p = x.cols();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double* xi = x.data() + i * p;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double* xj = x.data() + j * p;
            double s = 0.0;
            for (Eigen::Index m = 0; m < p; ++m) {
                const double diff = xi[m] - xj[m];
                s += diff * diff;
            }
            d(i, j) = s;
            d(j, i) = s;
        }
    }
    return {std::move(d)};
}

inline DistanceMatrix pairwise_sq_distances(const FeatureSet& fs) { return pairwise_sq_distances(fs.matrix()); }

struct SigmaCandidates {
    std::vector<double> quantiles;
    std::vector<double> sigmas;
};

inline const std::vector<double>& default_quantiles() {
    static const std::vector<double> q{0.10, 0.50, 0.90};
    return q;
}

/// Linear-interpolation quantile of sorted data (the "type 7" definition).
inline double interpolated_quantile(std::span<const double> sorted, double q) {
    const double h = static_cast<double>(sorted.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

/// Bandwidths at quantiles of the off-diagonal Euclidean distances. A zero
/// quantile falls back to the smallest positive distance. Quantiles are
/// reported in ascending order.
inline SigmaCandidates sigma_candidates(const DistanceMatrix& dm,
                                        std::vector<double> quantiles = default_quantiles()) {
    const auto n = dm.size();
    if (n < 2) throw InputError("need at least one pair of images for sigma candidates");
    if (quantiles.empty()) throw InputError("at least one quantile is required");
    for (double q : quantiles)
        if (!(q > 0.0 && q < 1.0)) throw InputError("quantile " + detail::format_double(q) + " not in (0, 1)");
    std::sort(quantiles.begin(), quantiles.end());
    quantiles.erase(std::unique(quantiles.begin(), quantiles.end()), quantiles.end());

    std::vector<double> dist;
    dist.reserve(n * (n - 1) / 2);
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 0; i < j; ++i)
            dist.push_back(std::sqrt(dm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    std::sort(dist.begin(), dist.end());
    auto first_positive = std::upper_bound(dist.begin(), dist.end(), 0.0);
    if (first_positive == dist.end()) throw InputError("constant representation: all pairwise distances are zero");

    SigmaCandidates out{quantiles, {}};
    for (double q : quantiles) {
        double s = interpolated_quantile(dist, q);
        out.sigmas.push_back(s > 0.0 ? s : *first_positive);
    }
    return out;
}

struct KernelMatrix {
    Eigen::MatrixXd values;
    double sigma = 0.0;
};

inline KernelMatrix gaussian_kernel(const DistanceMatrix& dm, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw InputError("kernel bandwidth must be positive and finite, got " + detail::format_double(sigma));
    const double scale = -1.0 / (2.0 * sigma * sigma);
    KernelMatrix k{(dm.values.array() * scale).exp().matrix(), sigma};
    k.values.diagonal().setOnes();
    return k;
}

/// H K H with H = I - 11^T/n.
inline Eigen::MatrixXd center_kernel(const Eigen::MatrixXd& k) {
    const Eigen::VectorXd col_mean = k.colwise().mean().transpose();
    const double total = col_mean.mean();
    Eigen::MatrixXd c = k;
    c.rowwise() -= col_mean.transpose();
    c.colwise() -= col_mean;
    c.array() += total;
    return c;
}

struct EigenBasis {
    Eigen::MatrixXd vectors;  // orthonormal columns u_1..u_n
    Eigen::VectorXd values;   // descending; large negatives clamped to 0
    std::size_t clamped = 0;  // eigenvalues below -1e-8 * lambda_1

    std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};

/// Full symmetric eigendecomposition (LAPACK dsyevd), eigenvalues in
/// descending order, each eigenvector's first non-negligible component
/// made positive.
inline EigenBasis eigendecompose(const Eigen::MatrixXd& symmetric) {
    const auto n = symmetric.rows();
    if (n != symmetric.cols() || n == 0) throw InputError("eigendecompose: matrix must be square and non-empty");
    Eigen::MatrixXd a = symmetric;
    Eigen::VectorXd w(n);
    const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', static_cast<lapack_int>(n), a.data(),
                                           static_cast<lapack_int>(n), w.data());
    if (info != 0) throw NumericError("eigensolver failed to converge (dsyevd info=" + std::to_string(info) + ")");

    EigenBasis eb{a.rowwise().reverse(), w.reverse(), 0};
    const double top = eb.values(0);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (eb.values(i) < -1e-8 * std::abs(top)) {
            ++eb.clamped;
            eb.values(i) = 0.0;
        }
        auto u = eb.vectors.col(i);
        const double tol = 1e-12 * u.cwiseAbs().maxCoeff();
        for (Eigen::Index r = 0; r < n; ++r) {
            if (std::abs(u(r)) > tol) {
                if (u(r) < 0) u = -u;
                break;
            }
        }
    }
    return eb;
}

inline EigenBasis eigendecompose(const KernelMatrix& k) { return eigendecompose(k.values); }

// ---------------------------------------------------------------------------
// Labels

enum class Encoding {
    Standardized, // signed indicators, column-centered and scaled to unit mean square
    Signed,       // +1 member / -1 non-member
    Binary,       // 1 member / 0 non-member
};

inline std::string to_string(Encoding e) {
    switch (e) {
    case Encoding::Standardized: return "standardized";
    case Encoding::Signed: return "signed";
    case Encoding::Binary: return "binary";
    }
    return "standardized";
}

inline Encoding parse_encoding(std::string_view s) {
    if (s == "standardized") return Encoding::Standardized;
    if (s == "signed") return Encoding::Signed;
    if (s == "binary") return Encoding::Binary;
    throw InputError("unknown label encoding '" + std::string(s) + "'");
}

struct LabelMatrix {
    Eigen::MatrixXd values; // n x k
    Encoding encoding = Encoding::Standardized;
    std::vector<std::string> class_names;
};

inline LabelMatrix encode_labels(const AlignedDataset& ad, Encoding encoding = Encoding::Standardized) {
    const auto n = static_cast<Eigen::Index>(ad.size());
    const auto k = static_cast<Eigen::Index>(ad.k());
    if (k < 2) throw InputError("label encoding needs at least 2 classes");
    const double off = encoding == Encoding::Binary ? 0.0 : -1.0;
    Eigen::MatrixXd y = Eigen::MatrixXd::Constant(n, k, off);
    for (Eigen::Index i = 0; i < n; ++i) y(i, static_cast<Eigen::Index>(ad.class_index[static_cast<std::size_t>(i)])) = 1.0;
    if (encoding == Encoding::Standardized) {
        for (Eigen::Index j = 0; j < k; ++j) {
            auto col = y.col(j);
            col.array() -= col.mean();
            const double rms = std::sqrt(col.squaredNorm() / static_cast<double>(n));
            if (rms == 0.0)
                throw InputError("class '" + ad.class_names[static_cast<std::size_t>(j)] +
                                 "' covers all or none of the images");
            col /= rms;
        }
    }
    return {std::move(y), encoding, ad.class_names};
}

// ---------------------------------------------------------------------------
// Loss curves

/// e(d, sigma) for d = 0..n from an eigenbasis: residual R starts at Y and
/// loses its component along u_d at step d.
inline std::vector<double> loss_curve_for_sigma(const EigenBasis& eb, const LabelMatrix& y) {
    const auto n = y.values.rows();
    const auto k = y.values.cols();
    if (eb.vectors.rows() != n || eb.vectors.cols() != n)
        throw InputError("loss curve: eigenbasis is " + std::to_string(eb.vectors.rows()) + "x" +
                         std::to_string(eb.vectors.cols()) + " but labels have " + std::to_string(n) + " rows");
    const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(k));
    std::vector<double> e;
    e.reserve(static_cast<std::size_t>(n) + 1);
    Eigen::MatrixXd r = y.values;
    e.push_back(r.squaredNorm() * norm);
    Eigen::RowVectorXd c(k);
    for (Eigen::Index d = 0; d < n; ++d) {
        const auto u = eb.vectors.col(d);
        c.noalias() = u.transpose() * r;
        r.noalias() -= u * c;
        e.push_back(r.squaredNorm() * norm);
    }
    return e;
}

/// Same curve without forming the eigenvectors of K. With K = Q T Q^T
/// (Householder) and T = Z diag(lambda) Z^T (MRRR), the label projections
/// are C = Z^T (Q^T Y), and e(d) is the tail sum of squared rows of C past d.
/// Falls back to the full eigensolver if MRRR does not converge.
inline std::vector<double> projected_loss_curve(const Eigen::MatrixXd& symmetric, const LabelMatrix& y,
                                                std::size_t* clamped = nullptr) {
    const auto n = symmetric.rows();
    const auto k = y.values.cols();
    if (n != symmetric.cols() || n == 0) throw InputError("loss curve: kernel must be square and non-empty");
    if (y.values.rows() != n)
        throw InputError("loss curve: kernel is " + std::to_string(n) + "x" + std::to_string(n) + " but labels have " +
                         std::to_string(y.values.rows()) + " rows");
    auto fallback = [&] {
        auto eb = eigendecompose(symmetric);
        if (clamped) *clamped = eb.clamped;
        return loss_curve_for_sigma(eb, y);
    };
    if (n < 3) return fallback();

    const auto ln = static_cast<lapack_int>(n);
    Eigen::MatrixXd a = symmetric;
    Eigen::VectorXd diag(n), off(n), tau(n - 1);
    if (LAPACKE_dsytrd(LAPACK_COL_MAJOR, 'L', ln, a.data(), ln, diag.data(), off.data(), tau.data()) != 0)
        return fallback();
    Eigen::MatrixXd qty = y.values;
    if (LAPACKE_dormtr(LAPACK_COL_MAJOR, 'L', 'L', 'T', ln, static_cast<lapack_int>(k), a.data(), ln, tau.data(),
                       qty.data(), ln) != 0)
        return fallback();
    a.resize(0, 0);

    Eigen::MatrixXd z(n, n);
    Eigen::VectorXd w(n);
    std::vector<lapack_int> support(2 * static_cast<std::size_t>(n));
    lapack_int found = 0;
    lapack_logical tryrac = 1;
    const lapack_int info = LAPACKE_dstemr(LAPACK_COL_MAJOR, 'V', 'A', ln, diag.data(), off.data(), 0.0, 0.0, 0, 0,
                                           &found, w.data(), z.data(), ln, ln, support.data(), &tryrac);
    if (info != 0 || found != ln) return fallback();

    // ascending from dstemr; row i of c belongs to w(i)
    const Eigen::MatrixXd c = z.transpose() * qty;
    if (clamped) {
        const double top = w(n - 1);
        *clamped = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (w(i) < -1e-8 * std::abs(top)) ++*clamped;
    }
    const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(k));
    std::vector<double> e(static_cast<std::size_t>(n) + 1, 0.0);
    // e[d] sums the components on eigenvalues d+1..n (descending), i.e. the
    // n-d smallest, which are rows 0..n-d-1 of c
    double tail = 0.0;
    for (Eigen::Index d = n; d-- > 0;) {
        tail += c.row(n - 1 - d).squaredNorm();
        e[static_cast<std::size_t>(d)] = tail * norm;
    }
    return e;
}

struct AnalysisConfig {
    std::vector<double> quantiles = default_quantiles();
    Encoding encoding = Encoding::Standardized;
    bool center = false; // centered kernel PCA
    unsigned workers = 1;
};

struct KACurve {
    SigmaCandidates sigmas;
    std::vector<std::vector<double>> per_sigma; // [candidate][d], d = 0..D
    std::vector<double> loss;                   // e(d) = min over candidates
    std::vector<std::size_t> argmin;            // candidate index per d
    std::size_t clamped_eigenvalues = 0;

    std::size_t dimension() const { return loss.empty() ? 0 : loss.size() - 1; }
    double accuracy(std::size_t d) const { return 1.0 - loss[d]; }
    double argmin_sigma(std::size_t d) const { return sigmas.sigmas[argmin[d]]; }
};

/// Curve from a precomputed distance matrix. Candidates are evaluated
/// independently (optionally in parallel) and combined afterwards.
inline KACurve ka_curve(const DistanceMatrix& dm, const LabelMatrix& y, const AnalysisConfig& cfg = {}) {
    if (static_cast<Eigen::Index>(dm.size()) != y.values.rows())
        throw InputError("distance matrix and label matrix disagree on the number of images");
    KACurve curve;
    curve.sigmas = sigma_candidates(dm, cfg.quantiles);
    const auto m = curve.sigmas.sigmas.size();
    curve.per_sigma.resize(m);
    std::vector<std::size_t> clamped(m, 0);
    parallel_for(m, cfg.workers, [&](std::size_t s) {
        auto k = gaussian_kernel(dm, curve.sigmas.sigmas[s]);
        curve.per_sigma[s] = cfg.center ? projected_loss_curve(center_kernel(k.values), y, &clamped[s])
                                        : projected_loss_curve(k.values, y, &clamped[s]);
    });
    for (auto c : clamped) curve.clamped_eigenvalues += c;

    const auto len = curve.per_sigma[0].size();
    curve.loss.resize(len);
    curve.argmin.resize(len);
    for (std::size_t d = 0; d < len; ++d) {
        // candidates are in ascending sigma order, so strict < keeps the smallest on ties
        std::size_t best = 0;
        for (std::size_t s = 1; s < m; ++s)
            if (curve.per_sigma[s][d] < curve.per_sigma[best][d]) best = s;
        curve.loss[d] = curve.per_sigma[best][d];
        curve.argmin[d] = best;
    }
    return curve;
}

inline KACurve ka_curve(const FeatureSet& fs, const LabelMatrix& y, const AnalysisConfig& cfg = {}) {
    return ka_curve(pairwise_sq_distances(fs), y, cfg);
}

/// Trapezoid area under accuracy over d/D on the grid d = 0..D.
inline double ka_auc(const KACurve& c) {
    const auto dim = c.dimension();
    if (dim == 0) throw InputError("curve has no dimensions");
    double area = 0.0;
    for (std::size_t d = 0; d < dim; ++d) area += 0.5 * (c.accuracy(d) + c.accuracy(d + 1));
    return area / static_cast<double>(dim);
}

struct KAResult {
    double auc = 0.0;
    KACurve curve;
    std::optional<std::size_t> subset;
};

/// Curve and AUC for an aligned dataset.
inline KAResult evaluate(const AlignedDataset& ad, const AnalysisConfig& cfg = {}) {
    auto curve = ka_curve(ad.features, encode_labels(ad, cfg.encoding), cfg);
    const double auc = ka_auc(curve);
    return {auc, std::move(curve), std::nullopt};
}

} // namespace kanalysis
