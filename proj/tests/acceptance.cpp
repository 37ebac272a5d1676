// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "kanalysis/extrapolation.hpp"
#include "kanalysis/kernel.hpp"
#include "kanalysis/neural.hpp"
#include "kanalysis/protocol.hpp"
#include "kanalysis/search.hpp"
#include "kanalysis/synth.hpp"

using namespace kanalysis;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

char buf[512];

template <class... Args>
std::string fmt(const char* f, Args... args) {
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

AlignedDataset make(SynthKind kind, std::size_t k, std::size_t per_class, std::size_t p, double noise,
                    std::uint64_t seed) {
    auto [fs, lf] = generate({.kind = kind, .k = k, .n_per_class = per_class, .p = p, .noise = noise, .seed = seed});
    return align(fs, lf);
}

// the synthetic battery: kinds x sizes x noise x seeds, n <= 200
std::vector<AlignedDataset> battery() {
    std::vector<AlignedDataset> out;
    std::uint64_t seed = 100;
    for (std::size_t k : {2, 4, 7})
        for (std::size_t per_class : {5, 12, 25}) {
            if (k * per_class > 200) continue;
            out.push_back(make(SynthKind::OneHot, k, per_class, 0, 0.0, seed++));
            for (double noise : {0.2, 0.8}) out.push_back(make(SynthKind::Clusters, k, per_class, 16, noise, seed++));
            out.push_back(make(SynthKind::Clusters, k, per_class, 64, 0.5, seed++));
            out.push_back(make(SynthKind::Noise, k, per_class, 8, 0.0, seed++));
            out.push_back(make(SynthKind::Noise, k, per_class, 32, 0.0, seed++));
        }
    return out;
}

Outcome one_hot_exactness() {
    auto ad = make(SynthKind::OneHot, 7, 70, 0, 0.0, 1);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = evaluate(ad);
    const double secs = seconds_since(t0);
    double tail = 0.0;
    for (std::size_t d = 7; d < r.curve.loss.size(); ++d) tail = std::max(tail, r.curve.loss[d]);
    return {tail <= 1e-8 && r.auc >= 0.98 && secs < 10.0,
            fmt("max e(d>=7) = %.2e, AUC = %.4f, %.2f s", tail, r.auc, secs)};
}

Outcome chance_floor() {
    double sum = 0.0, worst_rms = 0.0, lo = 1.0, hi = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto ad = make(SynthKind::Noise, 7, 50, 32, 0.0, 1000 + seed);
        const auto r = evaluate(ad);
        sum += r.auc;
        lo = std::min(lo, r.auc);
        hi = std::max(hi, r.auc);
        const auto dim = r.curve.dimension();
        double ss = 0.0;
        for (std::size_t d = 0; d <= dim; ++d) {
            const double diff = r.curve.accuracy(d) - static_cast<double>(d) / static_cast<double>(dim);
            ss += diff * diff;
        }
        worst_rms = std::max(worst_rms, std::sqrt(ss / static_cast<double>(dim + 1)));
    }
    const double mean = sum / 10.0;
    return {std::abs(mean - 0.5) <= 0.05 && worst_rms <= 0.05,
            fmt("mean AUC = %.4f (range %.4f..%.4f), worst RMS |acc - d/D| = %.4f", mean, lo, hi, worst_rms)};
}

Outcome monotone_complete(const std::vector<AlignedDataset>& sets) {
    double worst_rise = -1.0, worst_end = 0.0;
    for (const auto& ad : sets) {
        const auto c = ka_curve(ad.features, encode_labels(ad));
        for (const auto& e : c.per_sigma) {
            for (std::size_t d = 0; d + 1 < e.size(); ++d) worst_rise = std::max(worst_rise, e[d + 1] - e[d]);
            worst_end = std::max(worst_end, e.back());
        }
    }
    return {sets.size() >= 50 && worst_rise <= 1e-12 && worst_end <= 1e-6,
            fmt("%zu instances, max e(d+1)-e(d) = %.2e, max e(D) = %.2e", sets.size(), worst_rise, worst_end)};
}

Outcome oracle_equivalence(const std::vector<AlignedDataset>& sets) {
    double worst = 0.0;
    std::size_t used = 0, max_n = 0;
    for (const auto& ad : sets) {
        if (used == 50) break;
        if (ad.size() > 200) continue;
        const auto y = encode_labels(ad);
        const auto c = ka_curve(ad.features, y);
        for (std::size_t s = 0; s < c.sigmas.sigmas.size(); ++s)
            worst = std::max(worst, max_abs_diff(c.per_sigma[s], oracle_curve(ad.features, y, c.sigmas.sigmas[s])));
        max_n = std::max(max_n, ad.size());
        ++used;
    }
    return {used == 50 && worst <= 1e-10, fmt("%zu instances (n <= %zu), max deviation %.2e", used, max_n, worst)};
}

Outcome invariance(const std::vector<AlignedDataset>& sets) {
    double rot = 0.0, shift = 0.0, scale = 0.0, perm = 0.0;
    std::size_t compared_d = 0;
    std::mt19937_64 rng(77);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& ad : sets) {
        const auto y = encode_labels(ad);
        const auto base = ka_curve(ad.features, y);
        const auto& x = ad.features.matrix();
        const auto p = x.cols();
        const auto& ids = ad.features.image_ids();

        Eigen::MatrixXd g(p, p);
        for (auto& v : g.reshaped()) v = normal(rng);
        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
        RowMatrix xr = x * q;
        RowMatrix xt = x;
        Eigen::RowVectorXd offset(p);
        for (auto& v : offset) v = 5.0 * normal(rng);
        xt.rowwise() += offset;
        RowMatrix xs = x * 3.7;
        rot = std::max(rot, max_abs_diff(base.loss, ka_curve(FeatureSet(ids, xr), y).loss));
        shift = std::max(shift, max_abs_diff(base.loss, ka_curve(FeatureSet(ids, xt), y).loss));
        scale = std::max(scale, max_abs_diff(base.loss, ka_curve(FeatureSet(ids, xs), y).loss));

        // permutation: compare only where every candidate has an eigengap at d
        std::vector<std::size_t> order(ad.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const auto shuffled = ad.select_rows(order);
        const auto pc = ka_curve(shuffled.features, encode_labels(shuffled));
        const auto dm = pairwise_sq_distances(ad.features);
        std::vector<bool> gap(ad.size() + 1, true);
        for (double sigma : base.sigmas.sigmas) {
            const auto eb = eigendecompose(gaussian_kernel(dm, sigma));
            const double l1 = eb.values(0);
            for (std::size_t d = 1; d < ad.size(); ++d)
                if (eb.values(static_cast<Eigen::Index>(d - 1)) - eb.values(static_cast<Eigen::Index>(d)) <= 1e-8 * l1)
                    gap[d] = false;
        }
        for (std::size_t d = 0; d <= ad.size(); ++d)
            if (gap[d]) {
                perm = std::max(perm, std::abs(base.loss[d] - pc.loss[d]));
                ++compared_d;
            }
    }
    return {rot <= 1e-9 && shift <= 1e-9 && scale <= 1e-9 && perm <= 1e-9,
            fmt("%zu instances; rotation %.2e, translation %.2e, scale %.2e, permutation %.2e over %zu gapped d",
                sets.size(), rot, shift, scale, perm, compared_d)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int sh(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome protocol_determinism() {
    const auto dir = fs::temp_directory_path() / ("ka_accept_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const std::string ka = std::string("'") + KA_CLI + "'";
    const std::string d = "'" + dir.string() + "'";
    if (sh(ka + " synth --kind clusters --k 7 --n-per-class 280 --p 256 --noise 0.5 --variation medium --seed 3 --out " +
           d + "/data > /dev/null") != 0)
        return {false, "synth failed"};
    std::vector<double> secs;
    for (const char* name : {"a.json", "b.json"}) {
        const auto t0 = std::chrono::steady_clock::now();
        const int rc = sh(ka + " protocol --manifest " + d + "/data/manifest.json --subsets 10 --seed 7 --out " + d +
                          "/" + name + " > /dev/null");
        secs.push_back(seconds_since(t0));
        if (rc != 0) return {false, fmt("protocol exited with %d", rc)};
    }
    const auto a = slurp(dir / "a.json"), b = slurp(dir / "b.json");
    const auto report = nlohmann::json::parse(a);
    const auto& level = report["levels"][0];
    const bool shape = level["n_images"] == 1960 && level["auc_per_subset"].size() == 10 && level["sigmas_per_subset"][0].size() == 3;
    fs::remove_all(dir);
    return {shape && a == b && secs[0] + secs[1] <= 300.0,
            fmt("1960 x 256, 10 subsets; identical = %s; %.1f s + %.1f s", a == b ? "yes" : "no", secs[0], secs[1])};
}

Outcome graded_difficulty() {
    std::vector<double> mean, sd;
    for (double noise : {0.1, 0.5, 1.5}) {
        auto ad = make(SynthKind::Clusters, 7, 40, 32, noise, 5);
        auto l = run_protocol(ad, make_subsets(ad, 10, 0.8, 9));
        mean.push_back(l.auc_mean);
        sd.push_back(l.auc_std);
    }
    bool ok = true;
    double worst_ratio = 1e300;
    for (std::size_t i = 0; i + 1 < mean.size(); ++i) {
        const double pooled = std::sqrt(0.5 * (sd[i] * sd[i] + sd[i + 1] * sd[i + 1]));
        const double gap = mean[i] - mean[i + 1];
        ok = ok && gap > 2.0 * pooled;
        worst_ratio = std::min(worst_ratio, pooled > 0 ? gap / pooled : 1e300);
    }
    return {ok, fmt("AUC %.4f > %.4f > %.4f; smallest gap / pooled std = %.1f", mean[0], mean[1], mean[2], worst_ratio)};
}

Outcome saturation_recovery() {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> noise(0.0, 1e-3);
    std::vector<double> t, y;
    for (double v = 8; v <= 512; v *= 2) {
        t.push_back(v);
        y.push_back(0.90 - 0.35 * std::exp(-0.08 * v) + noise(rng));
    }
    const auto fit = fit_saturation(t, y);
    bool monotone = true;
    double prev = -1.0;
    for (double v = 1.0; v <= 4096.0; v *= 1.1) {
        const double cur = predict_auc(fit, v);
        monotone = monotone && cur >= prev - 1e-15;
        prev = cur;
    }
    return {std::abs(fit.a - 0.90) <= 0.01 && monotone,
            fmt("a = %.5f, b = %.4f, c = %.4f, d = %.3f; monotone = %s", fit.a, fit.b, fit.c, fit.d_exp,
                monotone ? "yes" : "no")};
}

RepetitionTable random_table(std::mt19937_64& rng) {
    std::poisson_distribution<int> pois(8.0);
    RepetitionTable t;
    for (int s = 0; s < 6; ++s)
        for (int b = 0; b < 3; ++b) {
            const auto site = "s" + std::to_string(s), block = "b" + std::to_string(b);
            for (int r = 0; r < 4; ++r) t.records.push_back({site, kBlankImageId, block, r, pois(rng), true});
            for (int i = 0; i < 10; ++i)
                for (int r = 0; r < 6; ++r)
                    t.records.push_back({site, "im" + std::to_string(b * 10 + i), block, r, pois(rng) + (i * s) % 7, false});
        }
    return t;
}

Outcome neural_algebra() {
    std::mt19937_64 rng(31);
    double shift_dev = 0.0, gain_dev = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto t = random_table(rng);
        for (auto level : {Variation::Low, Variation::Medium, Variation::High}) {
            PreprocConfig cfg;
            cfg.level = level;
            const auto base = build_neural_features(t, cfg);
            auto shifted = t, scaled = t;
            std::uniform_int_distribution<int> off(1, 50), gain(2, 9);
            std::map<std::pair<std::string, std::string>, int> o, gmap;
            for (auto& r : shifted.records) {
                auto [it, fresh] = o.try_emplace({r.site, r.block}, 0);
                if (fresh) it->second = off(rng);
                r.count += it->second;
            }
            for (auto& r : scaled.records) {
                auto [it, fresh] = gmap.try_emplace({r.site, r.block}, 0);
                if (fresh) it->second = gain(rng);
                r.count *= it->second;
            }
            shift_dev = std::max(shift_dev, (build_neural_features(shifted, cfg).features.matrix() - base.features.matrix())
                                                .cwiseAbs().maxCoeff());
            gain_dev = std::max(gain_dev, (build_neural_features(scaled, cfg).features.matrix() - base.features.matrix())
                                              .cwiseAbs().maxCoeff());
        }
    }
    return {shift_dev <= 1e-12 && gain_dev <= 1e-12,
            fmt("60 tables; background shift %.2e, per-site gain %.2e", shift_dev, gain_dev)};
}

Outcome harness_sanity() {
    SyntheticFamily family;
    const auto records = random_search(SyntheticFamily::default_space(), family.evaluator(), 30, 0);
    std::vector<double> noise;
    for (const auto& r : records)
        if (r.ok) noise.push_back(r.assignment["noise"].get<double>());
    if (noise.size() != 30) return {false, fmt("%zu of 30 draws succeeded", noise.size())};
    const double r_low = transfer_correlation(records, Variation::Low);
    const double r_med = transfer_correlation(records, Variation::Medium);
    const double r_high = transfer_correlation(records, Variation::High);
    const auto& top = select_top(records);
    const double top_noise = top.assignment["noise"].get<double>();
    std::size_t rank = 0;
    for (double v : noise) rank += v < top_noise ? 1 : 0;
    // lowest-noise region: among the lowest 10% of sampled noise values
    const bool region = rank < 3;
    const double r_min = std::min({r_low, r_med, r_high});
    return {r_min >= 0.8 && region,
            fmt("r low/medium/high = %.3f/%.3f/%.3f; top draw %zu noise %.3f (rank %zu of 30)", r_low, r_med, r_high,
                top.draw, top_noise, rank)};
}

} // namespace

int main() {
    const auto sets = battery();
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"one-hot exactness", one_hot_exactness},
        {"chance floor", chance_floor},
        {"monotonicity and completeness", [&] { return monotone_complete(sets); }},
        {"oracle equivalence", [&] { return oracle_equivalence(sets); }},
        {"invariance suite", [&] { return invariance(sets); }},
        {"protocol determinism", protocol_determinism},
        {"graded difficulty", graded_difficulty},
        {"saturation-fit recovery", saturation_recovery},
        {"neural preprocessing algebra", neural_algebra},
        {"harness sanity", harness_sanity},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o{false, ""};
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        std::printf("%s  %-30s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
