#pragma once

// Subset protocol: repeated class-balanced subsamples of a variation level,
// one kernel-analysis curve per subsample, and summary statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "kanalysis/dataset.hpp"
#include "kanalysis/error.hpp"
#include "kanalysis/kernel.hpp"
#include "kanalysis/parallel.hpp"
#include "kanalysis/rng.hpp"
#include "kanalysis/version.hpp"

namespace kanalysis {

struct SubsetSpec {
    std::uint64_t seed = 0;
    std::size_t n_subsets = 10;
    double fraction = 0.8;
    std::size_t per_class = 0;                  // equalized count per class
    std::vector<std::vector<std::size_t>> indices; // ascending row indices per subset
};

/// Draws `n_subsets` class-balanced subsets. For each class c,
/// floor(fraction * n_c) members are drawn without replacement, then every
/// class is truncated to the smallest of those counts. Subset s uses its own
/// generator keyed by (seed, s).
inline SubsetSpec make_subsets(std::span<const std::size_t> class_index, std::size_t k, std::size_t n_subsets,
                               double fraction, std::uint64_t seed) {
    if (n_subsets == 0) throw InputError("number of subsets must be at least 1");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("subset fraction must be in (0, 1]");
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < class_index.size(); ++i) {
        if (class_index[i] >= k) throw InputError("class index out of range");
        members[class_index[i]].push_back(i);
    }
    std::size_t per_class = std::numeric_limits<std::size_t>::max();
    for (const auto& m : members) {
        // small slack so that e.g. 0.7 * 10 counts as 7
        const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(m.size()) + 1e-9));
        per_class = std::min(per_class, take);
    }
    if (per_class == 0) throw InputError("a class is empty after subsampling; increase the fraction");

    SubsetSpec spec{seed, n_subsets, fraction, per_class, {}};
    for (std::size_t s = 0; s < n_subsets; ++s) {
        auto rng = keyed_engine(seed, Stream::Subsets, {s});
        std::vector<std::size_t> chosen;
        chosen.reserve(per_class * k);
        for (const auto& m : members) {
            auto pool = m;
            // partial Fisher-Yates; only the first per_class slots matter
            for (std::size_t i = 0; i < per_class; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
                std::swap(pool[i], pool[pick(rng)]);
            }
            chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_class));
        }
        std::sort(chosen.begin(), chosen.end());
        spec.indices.push_back(std::move(chosen));
    }
    return spec;
}

inline SubsetSpec make_subsets(const AlignedDataset& ad, std::size_t n_subsets, double fraction,
                               std::uint64_t seed) {
    return make_subsets(ad.class_index, ad.k(), n_subsets, fraction, seed);
}

inline SubsetSpec make_subsets(const LabelFrame& lf, std::size_t n_subsets, double fraction, std::uint64_t seed) {
    std::vector<std::string> names(lf.classes());
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    std::vector<std::size_t> index;
    for (const auto& c : lf.classes())
        index.push_back(static_cast<std::size_t>(std::lower_bound(names.begin(), names.end(), c) - names.begin()));
    return make_subsets(index, names.size(), n_subsets, fraction, seed);
}

inline constexpr std::size_t kEnvelopeGridSize = 512;

/// Accuracy curve resampled onto an evenly spaced grid over d/D in [0, 1].
inline std::vector<double> resample_accuracy(const KACurve& c, std::size_t grid = kEnvelopeGridSize) {
    const auto dim = static_cast<double>(c.dimension());
    std::vector<double> out(grid);
    for (std::size_t g = 0; g < grid; ++g) {
        const double pos = static_cast<double>(g) / static_cast<double>(grid - 1) * dim;
        const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), c.dimension());
        const auto hi = std::min(lo + 1, c.dimension());
        const double w = pos - static_cast<double>(lo);
        out[g] = (1.0 - w) * c.accuracy(lo) + w * c.accuracy(hi);
    }
    return out;
}

struct Envelope {
    std::vector<double> grid; // d/D
    std::vector<double> mean;
    std::vector<double> min;
    std::vector<double> max;
};

struct LevelReport {
    Variation level = Variation::Unspecified;
    std::size_t n_images = 0;
    std::size_t per_class = 0;
    double auc_mean = 0.0;
    double auc_std = 0.0;
    std::vector<double> auc_per_subset;
    std::vector<std::vector<double>> curves; // accuracy on the envelope grid, per subset
    std::vector<std::vector<double>> sigmas;  // candidates per subset
    Envelope envelope;
};

struct ProtocolReport {
    std::uint64_t seed = 0;
    std::size_t n_subsets = 0;
    double fraction = 0.0;
    AnalysisConfig config;
    std::vector<LevelReport> levels;

    const LevelReport* find(Variation v) const {
        for (const auto& l : levels)
            if (l.level == v) return &l;
        return nullptr;
    }
};

/// Sample (n - 1) standard deviation; 0 for a single value.
inline double sample_std(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// One variation level. The full distance matrix is computed once and each
/// subset takes its principal submatrix; subsets run in parallel and are
/// combined in subset order.
inline LevelReport run_protocol(const AlignedDataset& ad, const SubsetSpec& subsets, const AnalysisConfig& cfg = {}) {
    if (subsets.indices.empty()) throw InputError("subset specification is empty");
    const auto full = pairwise_sq_distances(ad.features);
    const auto count = subsets.indices.size();
    std::vector<KAResult> results(count);

    // parallelism goes to subsets; each curve evaluates its candidates serially
    AnalysisConfig inner = cfg;
    inner.workers = 1;
    parallel_for(count, cfg.workers, [&](std::size_t s) {
        const auto& idx = subsets.indices[s];
        for (auto i : idx)
            if (i >= ad.size()) throw InputError("subset index out of range");
        const auto sub = ad.select_rows(idx);
        auto curve = ka_curve(full.restrict(idx), encode_labels(sub, cfg.encoding), inner);
        const double auc = ka_auc(curve);
        results[s] = KAResult{auc, std::move(curve), s};
    });

    LevelReport rep;
    rep.level = ad.features.variation();
    rep.n_images = ad.size();
    rep.per_class = subsets.per_class;
    for (const auto& r : results) {
        rep.auc_per_subset.push_back(r.auc);
        rep.curves.push_back(resample_accuracy(r.curve));
        rep.sigmas.push_back(r.curve.sigmas.sigmas);
    }
    rep.auc_mean = std::accumulate(rep.auc_per_subset.begin(), rep.auc_per_subset.end(), 0.0) /
                   static_cast<double>(count);
    rep.auc_std = sample_std(rep.auc_per_subset);

    auto& env = rep.envelope;
    const auto grid = kEnvelopeGridSize;
    env.grid.resize(grid);
    env.mean.assign(grid, 0.0);
    env.min.assign(grid, std::numeric_limits<double>::infinity());
    env.max.assign(grid, -std::numeric_limits<double>::infinity());
    for (std::size_t g = 0; g < grid; ++g) {
        env.grid[g] = static_cast<double>(g) / static_cast<double>(grid - 1);
        for (const auto& c : rep.curves) {
            env.mean[g] += c[g];
            env.min[g] = std::min(env.min[g], c[g]);
            env.max[g] = std::max(env.max[g], c[g]);
        }
        env.mean[g] /= static_cast<double>(count);
        // the mean can land a rounding error outside [min, max] when all curves agree
        env.mean[g] = std::clamp(env.mean[g], env.min[g], env.max[g]);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Comparison

struct ComparisonReport {
    Variation level = Variation::Unspecified;
    double delta_mean = 0.0; // mean over subsets of (a - b)
    double p_value = 1.0;
    std::size_t n_subsets = 0;
    std::size_t n_permutations = 0;
    bool exact = false; // all 2^n sign patterns enumerated
};

/// Paired sign-flip permutation test on per-subset AUC differences,
/// two-sided on |mean difference|. Enumerates every sign pattern when there
/// are at most `max_permutations` of them, otherwise samples that many.
inline ComparisonReport compare(const ProtocolReport& a, const ProtocolReport& b, Variation level,
                                std::uint64_t seed = 0, std::size_t max_permutations = 10000) {
    const auto* la = a.find(level);
    const auto* lb = b.find(level);
    if (!la || !lb) throw InputError("level '" + to_string(level) + "' missing from one of the reports");
    const auto m = la->auc_per_subset.size();
    if (m != lb->auc_per_subset.size())
        throw InputError("subset count mismatch: " + std::to_string(m) + " vs " +
                         std::to_string(lb->auc_per_subset.size()));
    if (m == 0) throw InputError("reports contain no subsets");

    std::vector<double> diff(m);
    for (std::size_t i = 0; i < m; ++i) diff[i] = la->auc_per_subset[i] - lb->auc_per_subset[i];
    const double observed = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(m);
    const double threshold = std::abs(observed) - 1e-12 * (1.0 + std::abs(observed));

    ComparisonReport out{level, observed, 1.0, m, 0, false};
    auto flipped_mean = [&](auto&& sign) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += sign(i) ? -diff[i] : diff[i];
        return s / static_cast<double>(m);
    };
    std::size_t extreme = 0;
    if (m < 63 && (std::uint64_t{1} << m) <= max_permutations) {
        const std::uint64_t total = std::uint64_t{1} << m;
        for (std::uint64_t pattern = 0; pattern < total; ++pattern)
            if (std::abs(flipped_mean([&](std::size_t i) { return (pattern >> i) & 1U; })) >= threshold) ++extreme;
        out.n_permutations = total;
        out.exact = true;
        out.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    } else {
        auto rng = keyed_engine(seed, Stream::Permutation, {static_cast<std::uint64_t>(level)});
        std::vector<bool> signs(m);
        for (std::size_t p = 0; p < max_permutations; ++p) {
            for (std::size_t i = 0; i < m; ++i) signs[i] = (rng() >> 63) != 0;
            if (std::abs(flipped_mean([&](std::size_t i) { return signs[i]; })) >= threshold) ++extreme;
        }
        out.n_permutations = max_permutations;
        out.p_value = static_cast<double>(extreme + 1) / static_cast<double>(max_permutations + 1);
    }
    return out;
}

/// Rows reordered by image id, so subsets do not depend on file row order.
inline AlignedDataset sorted_by_id(const AlignedDataset& ad) {
    std::vector<std::size_t> order(ad.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto& ids = ad.features.image_ids();
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    return ad.select_rows(order);
}

/// Every variation level in a manifest under one set of protocol settings.
/// Each level gets its own pre-defined subsets drawn from (seed, subset index).
inline ProtocolReport run_manifest(const DatasetManifest& m, std::size_t n_subsets, double fraction,
                                   std::uint64_t seed, const AnalysisConfig& cfg = {}) {
    const auto labels = load_labels(m.labels);
    ProtocolReport report{seed, n_subsets, fraction, cfg, {}};
    for (const auto& e : m.entries) {
        auto fs = load_feature_matrix(e.path, e.format).with_variation(e.variation);
        const auto ad = sorted_by_id(align(fs, labels));
        report.levels.push_back(run_protocol(ad, make_subsets(ad, n_subsets, fraction, seed), cfg));
    }
    return report;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json config_json(const AnalysisConfig& cfg) {
    return {{"quantiles", cfg.quantiles}, {"encoding", to_string(cfg.encoding)}, {"center", cfg.center}};
}

inline nlohmann::ordered_json to_json(const LevelReport& l, const ProtocolReport& parent, bool with_curves = true) {
    nlohmann::ordered_json j;
    j["level"] = to_string(l.level);
    j["n_images"] = l.n_images;
    j["per_class"] = l.per_class;
    j["auc_mean"] = l.auc_mean;
    j["auc_std"] = l.auc_std;
    j["auc_per_subset"] = l.auc_per_subset;
    j["sigmas_per_subset"] = l.sigmas;
    j["envelope"] = {{"grid_size", l.envelope.grid.size()},
                     {"mean", l.envelope.mean},
                     {"min", l.envelope.min},
                     {"max", l.envelope.max}};
    if (with_curves) j["curves_per_subset"] = l.curves;
    j["seed"] = parent.seed;
    j["quantiles"] = parent.config.quantiles;
    return j;
}

inline nlohmann::ordered_json to_json(const ProtocolReport& r, bool with_curves = true) {
    nlohmann::ordered_json j;
    j["version"] = kVersion;
    j["seed"] = r.seed;
    j["subsets"] = r.n_subsets;
    j["fraction"] = r.fraction;
    j["config"] = config_json(r.config);
    j["levels"] = nlohmann::ordered_json::array();
    for (const auto& l : r.levels) j["levels"].push_back(to_json(l, r, with_curves));
    return j;
}

inline ProtocolReport protocol_report_from_json(const nlohmann::json& j) {
    try {
        ProtocolReport r;
        r.seed = j.at("seed").get<std::uint64_t>();
        r.n_subsets = j.at("subsets").get<std::size_t>();
        r.fraction = j.at("fraction").get<double>();
        const auto& c = j.at("config");
        r.config.quantiles = c.at("quantiles").get<std::vector<double>>();
        r.config.encoding = parse_encoding(c.at("encoding").get<std::string>());
        r.config.center = c.value("center", false);
        for (const auto& lj : j.at("levels")) {
            LevelReport l;
            l.level = parse_variation(lj.at("level").get<std::string>());
            l.n_images = lj.value("n_images", std::size_t{0});
            l.per_class = lj.value("per_class", std::size_t{0});
            l.auc_mean = lj.at("auc_mean").get<double>();
            l.auc_std = lj.at("auc_std").get<double>();
            l.auc_per_subset = lj.at("auc_per_subset").get<std::vector<double>>();
            if (lj.contains("sigmas_per_subset")) l.sigmas = lj.at("sigmas_per_subset").get<std::vector<std::vector<double>>>();
            const auto& e = lj.at("envelope");
            l.envelope.mean = e.at("mean").get<std::vector<double>>();
            l.envelope.min = e.at("min").get<std::vector<double>>();
            l.envelope.max = e.at("max").get<std::vector<double>>();
            const auto g = l.envelope.mean.size();
            for (std::size_t i = 0; i < g; ++i) l.envelope.grid.push_back(g > 1 ? static_cast<double>(i) / static_cast<double>(g - 1) : 0.0);
            if (lj.contains("curves_per_subset")) l.curves = lj.at("curves_per_subset").get<std::vector<std::vector<double>>>();
            r.levels.push_back(std::move(l));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed protocol report: ") + e.what());
    }
}

inline nlohmann::ordered_json to_json(const ComparisonReport& c) {
    return {{"level", to_string(c.level)},     {"delta_auc_mean", c.delta_mean}, {"p_value", c.p_value},
            {"n_subsets", c.n_subsets},        {"n_permutations", c.n_permutations},
            {"exact", c.exact},                {"test", "paired sign-flip permutation, two-sided"}};
}

} // namespace kanalysis
