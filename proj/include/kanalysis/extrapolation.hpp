#pragma once

// Score versus number of feature columns (recording sites), and a
// saturating fit AUC(t) = a + b * exp(-c * t^d) whose `a` estimates the
// score of an unlimited population.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "kanalysis/dataset.hpp"
#include "kanalysis/error.hpp"
#include "kanalysis/kernel.hpp"
#include "kanalysis/parallel.hpp"
#include "kanalysis/protocol.hpp"
#include "kanalysis/rng.hpp"

namespace kanalysis {

struct SamplingPoint {
    std::size_t t = 0;
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> aucs; // one per repeat
};

struct SamplingCurve {
    std::uint64_t seed = 0;
    std::size_t repeats = 0;
    std::vector<SamplingPoint> points;
};

/// Column subset of size t for repeat r: uniform without replacement,
/// returned in ascending order.
inline std::vector<std::size_t> sample_columns(std::size_t p, std::size_t t, std::uint64_t seed, std::size_t repeat) {
    std::vector<std::size_t> cols(p);
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    auto rng = keyed_engine(seed, Stream::Sites, {t, repeat});
    for (std::size_t i = 0; i < t; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, p - 1);
        std::swap(cols[i], cols[pick(rng)]);
    }
    cols.resize(t);
    std::sort(cols.begin(), cols.end());
    return cols;
}

inline SamplingCurve subsample_sites_auc(const AlignedDataset& ad, std::vector<std::size_t> t_grid,
                                         std::size_t repeats, std::uint64_t seed, const AnalysisConfig& cfg = {}) {
    if (repeats < 1) throw InputError("repeats must be at least 1");
    if (t_grid.empty()) throw InputError("site-count grid is empty");
    std::sort(t_grid.begin(), t_grid.end());
    t_grid.erase(std::unique(t_grid.begin(), t_grid.end()), t_grid.end());
    const auto p = ad.features.cols();
    for (auto t : t_grid) {
        if (t < 1) throw InputError("site count must be at least 1");
        if (t > p)
            throw InputError("site count " + std::to_string(t) + " exceeds the " + std::to_string(p) +
                             " available feature columns");
    }

    const auto y = encode_labels(ad, cfg.encoding);
    AnalysisConfig inner = cfg;
    inner.workers = 1;
    const auto jobs = t_grid.size() * repeats;
    std::vector<double> aucs(jobs);
    parallel_for(jobs, cfg.workers, [&](std::size_t job) {
        const auto t = t_grid[job / repeats];
        const auto r = job % repeats;
        const auto cols = sample_columns(p, t, seed, r);
        aucs[job] = ka_auc(ka_curve(ad.features.select_columns(cols), y, inner));
    });

    SamplingCurve out{seed, repeats, {}};
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        SamplingPoint pt;
        pt.t = t_grid[i];
        pt.aucs.assign(aucs.begin() + static_cast<std::ptrdiff_t>(i * repeats),
                       aucs.begin() + static_cast<std::ptrdiff_t>((i + 1) * repeats));
        pt.mean = std::accumulate(pt.aucs.begin(), pt.aucs.end(), 0.0) / static_cast<double>(repeats);
        pt.std = sample_std(pt.aucs);
        out.points.push_back(std::move(pt));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Saturation fit

struct SaturationFit {
    double a = 0.0;
    double b = 0.0;
    double c = 1.0;
    double d_exp = 1.0;
    double rss = 0.0;
    bool converged = false;
    std::size_t start = 0; // index of the winning initialization (16 = constant model)
};

inline double predict_auc(const SaturationFit& f, double t) {
    if (!(t > 0.0)) throw InputError("site count must be positive");
    if (f.b == 0.0) return f.a;
    return f.a + f.b * std::exp(-f.c * std::pow(t, f.d_exp));
}

struct SaturationOptions {
    bool weighted = false; // weight residuals by 1 / std
    std::size_t max_iterations = 500;
};

namespace detail {

struct FitBounds {
    static constexpr double a_lo = 0.0, a_hi = 1.0;
    static constexpr double c_lo = 1e-12, c_hi = 1e3;
    static constexpr double d_lo = 1e-6, d_hi = 4.0;

    static void project(Eigen::Vector4d& x) {
        x(0) = std::clamp(x(0), a_lo, a_hi);
        x(2) = std::clamp(x(2), c_lo, c_hi);
        x(3) = std::clamp(x(3), d_lo, d_hi);
    }
};

struct SaturationProblem {
    std::vector<double> t, y, w;

    double rss(const Eigen::Vector4d& x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double r = w[i] * (y[i] - (x(0) + x(1) * std::exp(-x(2) * std::pow(t[i], x(3)))));
            s += r * r;
        }
        return s;
    }

    // residuals r = w (y - f) and Jacobian of f, weighted
    void linearize(const Eigen::Vector4d& x, Eigen::VectorXd& r, Eigen::MatrixXd& jac) const {
        const auto m = static_cast<Eigen::Index>(t.size());
        r.resize(m);
        jac.resize(m, 4);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto k = static_cast<std::size_t>(i);
            const double td = std::pow(t[k], x(3));
            const double e = std::exp(-x(2) * td);
            r(i) = w[k] * (y[k] - (x(0) + x(1) * e));
            jac(i, 0) = w[k];
            jac(i, 1) = w[k] * e;
            jac(i, 2) = -w[k] * x(1) * td * e;
            jac(i, 3) = -w[k] * x(1) * x(2) * td * std::log(t[k]) * e;
        }
    }
};

/// Projected Levenberg-Marquardt from one start.
inline std::pair<Eigen::Vector4d, bool> fit_from(const SaturationProblem& prob, Eigen::Vector4d x,
                                                 std::size_t max_iterations) {
    FitBounds::project(x);
    double cost = prob.rss(x);
    double lambda = 1e-3;
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    for (std::size_t it = 0; it < max_iterations; ++it) {
        if (cost == 0.0) return {x, true};
        prob.linearize(x, r, jac);
        const Eigen::Matrix4d jtj = jac.transpose() * jac;
        const Eigen::Vector4d grad = jac.transpose() * r;
        if (grad.cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + cost)) return {x, true};
        bool improved = false;
        while (lambda < 1e16) {
            Eigen::Matrix4d damped = jtj;
            for (int i = 0; i < 4; ++i) damped(i, i) += lambda * (jtj(i, i) + 1e-12);
            Eigen::Vector4d step = damped.ldlt().solve(grad);
            Eigen::Vector4d cand = x + step;
            FitBounds::project(cand);
            const double cand_cost = prob.rss(cand);
            if (std::isfinite(cand_cost) && cand_cost < cost) {
                const double rel = (cost - cand_cost) / cost;
                const double moved = (cand - x).cwiseAbs().maxCoeff();
                x = cand;
                cost = cand_cost;
                lambda = std::max(lambda * 0.3, 1e-12);
                improved = true;
                if (rel < 1e-14 || moved < 1e-14) return {x, true};
                break;
            }
            lambda *= 10.0;
        }
        if (!improved) return {x, true}; // no descent direction left: local minimum within bounds
    }
    return {x, false};
}

} // namespace detail

/// Multi-start fit. Starts: a0 = max AUC, b0 = first AUC - a0, and (c0, d0)
/// over a 4 x 4 log grid. The constant model a = mean is also considered so
/// the fit is never worse than a flat line.
inline SaturationFit fit_saturation(std::span<const double> t, std::span<const double> auc,
                                    std::span<const double> std_dev = {}, const SaturationOptions& opt = {}) {
    if (t.size() != auc.size()) throw InputError("saturation fit: t and AUC lists differ in length");
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!(t[i] > 0.0)) throw InputError("saturation fit: site counts must be positive");
        if (!std::isfinite(auc[i])) throw InputError("saturation fit: non-finite AUC");
        order.emplace_back(t[i], i);
    }
    std::sort(order.begin(), order.end());
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < order.size(); ++i)
        if (i == 0 || order[i].first != order[i - 1].first) ++distinct;
    if (distinct < 4) throw InputError("saturation fit needs at least 4 distinct site counts, got " + std::to_string(distinct));

    detail::SaturationProblem prob;
    for (auto [tv, i] : order) {
        prob.t.push_back(tv);
        prob.y.push_back(auc[i]);
        double w = 1.0;
        if (opt.weighted) {
            if (std_dev.size() != t.size()) throw InputError("weighted fit needs one std per point");
            w = std_dev[i] > 0.0 ? 1.0 / std_dev[i] : 1.0;
        }
        prob.w.push_back(w);
    }

    const double a0 = *std::max_element(prob.y.begin(), prob.y.end());
    const double b0 = prob.y.front() - a0;
    constexpr std::array<double, 4> c_grid{1e-3, 1e-2, 1e-1, 1.0};
    constexpr std::array<double, 4> d_grid{0.25, 0.5, 1.0, 2.0};

    SaturationFit best;
    best.rss = std::numeric_limits<double>::infinity();
    std::size_t start = 0;
    bool any_converged = false;
    for (double c0 : c_grid)
        for (double d0 : d_grid) {
            auto [x, ok] = detail::fit_from(prob, Eigen::Vector4d(a0, b0, c0, d0), opt.max_iterations);
            any_converged = any_converged || ok;
            const double cost = prob.rss(x);
            if (cost < best.rss) best = SaturationFit{x(0), x(1), x(2), x(3), cost, ok, start};
            ++start;
        }

    double wsum = 0.0, wy = 0.0;
    for (std::size_t i = 0; i < prob.y.size(); ++i) {
        wsum += prob.w[i] * prob.w[i];
        wy += prob.w[i] * prob.w[i] * prob.y[i];
    }
    const double mean = std::clamp(wy / wsum, 0.0, 1.0);
    const Eigen::Vector4d flat(mean, 0.0, 1.0, 1.0);
    const double flat_cost = prob.rss(flat);
    if (flat_cost < best.rss) best = SaturationFit{mean, 0.0, 1.0, 1.0, flat_cost, true, 16};
    best.converged = best.converged || (any_converged && best.start == 16);
    return best;
}

inline SaturationFit fit_saturation(const SamplingCurve& sc, const SaturationOptions& opt = {}) {
    std::vector<double> t, m, s;
    for (const auto& p : sc.points) {
        t.push_back(static_cast<double>(p.t));
        m.push_back(p.mean);
        s.push_back(p.std);
    }
    return fit_saturation(t, m, s, opt);
}

inline nlohmann::ordered_json to_json(const SamplingCurve& sc) {
    nlohmann::ordered_json j;
    j["seed"] = sc.seed;
    j["repeats"] = sc.repeats;
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& p : sc.points)
        j["points"].push_back({{"t", p.t}, {"mean_auc", p.mean}, {"std_auc", p.std}, {"aucs", p.aucs}});
    return j;
}

inline nlohmann::ordered_json to_json(const SaturationFit& f) {
    return {{"model", "a + b * exp(-c * t^d_exp)"},
            {"a", f.a},
            {"b", f.b},
            {"c", f.c},
            {"d_exp", f.d_exp},
            {"rss", f.rss},
            {"converged", f.converged},
            {"start", f.start}};
}

inline std::string sampling_csv(const SamplingCurve& sc) {
    std::string out = "t,mean_auc,std_auc\n";
    for (const auto& p : sc.points)
        out += std::to_string(p.t) + "," + detail::format_double(p.mean) + "," + detail::format_double(p.std) + "\n";
    return out;
}

} // namespace kanalysis
