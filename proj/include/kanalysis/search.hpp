#pragma once

// Random search over a parameter space of some model family, scoring each
// draw on a training image set and on held-out test sets, then asking how
// well the training score predicts the test score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
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
#include "kanalysis/synth.hpp"
#include "kanalysis/version.hpp"

namespace kanalysis {

using Assignment = nlohmann::ordered_json;

struct ParamDimension {
    enum class Kind { Choice, Uniform, Int };
    std::string name;
    Kind kind = Kind::Uniform;
    double low = 0.0, high = 1.0;     // Uniform, Int (inclusive)
    nlohmann::ordered_json values;    // Choice
};

struct ParamSpace {
    std::vector<ParamDimension> dims;

    /// {"dimensions": [{"name": "noise", "kind": "uniform", "low": 0, "high": 1},
    ///                 {"name": "dim", "kind": "int", "low": 8, "high": 32},
    ///                 {"name": "act", "kind": "choice", "values": ["relu", "tanh"]}]}
    static ParamSpace from_json(const nlohmann::ordered_json& j) {
        ParamSpace space;
        try {
            const auto& arr = j.at("dimensions");
            if (!arr.is_array() || arr.empty()) throw InputError("parameter space has no dimensions");
            for (const auto& dj : arr) {
                ParamDimension d;
                d.name = dj.at("name").get<std::string>();
                const auto kind = dj.at("kind").get<std::string>();
                if (kind == "choice") {
                    d.kind = ParamDimension::Kind::Choice;
                    d.values = dj.at("values");
                    if (!d.values.is_array() || d.values.empty())
                        throw InputError("dimension '" + d.name + "': choice needs a non-empty values list");
                } else if (kind == "uniform" || kind == "int") {
                    d.kind = kind == "int" ? ParamDimension::Kind::Int : ParamDimension::Kind::Uniform;
                    d.low = dj.at("low").get<double>();
                    d.high = dj.at("high").get<double>();
                    if (!std::isfinite(d.low) || !std::isfinite(d.high) || !(d.low < d.high))
                        throw InputError("dimension '" + d.name + "': bounds must satisfy low < high");
                    if (d.kind == ParamDimension::Kind::Int && (d.low != std::floor(d.low) || d.high != std::floor(d.high)))
                        throw InputError("dimension '" + d.name + "': integer bounds must be whole numbers");
                } else {
                    throw InputError("dimension '" + d.name + "': unknown kind '" + kind + "'");
                }
                space.dims.push_back(std::move(d));
            }
        } catch (const nlohmann::json::exception& e) {
            throw InputError(std::string("malformed parameter space: ") + e.what());
        }
        std::vector<std::string> names;
        for (const auto& d : space.dims) {
            if (d.name.empty()) throw InputError("parameter space: empty dimension name");
            names.push_back(d.name);
        }
        std::sort(names.begin(), names.end());
        if (std::adjacent_find(names.begin(), names.end()) != names.end())
            throw InputError("parameter space: duplicate dimension name");
        return space;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& d : dims) {
            nlohmann::ordered_json dj{{"name", d.name}};
            switch (d.kind) {
            case ParamDimension::Kind::Choice:
                dj["kind"] = "choice";
                dj["values"] = d.values;
                break;
            case ParamDimension::Kind::Uniform:
            case ParamDimension::Kind::Int:
                dj["kind"] = d.kind == ParamDimension::Kind::Int ? "int" : "uniform";
                dj["low"] = d.low;
                dj["high"] = d.high;
                break;
            }
            arr.push_back(std::move(dj));
        }
        return {{"dimensions", arr}};
    }
};

inline ParamSpace load_param_space(const std::filesystem::path& path) {
    const auto text = detail::read_file(path.string());
    try {
        return ParamSpace::from_json(nlohmann::ordered_json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

/// Assignment for one draw; depends only on (space, seed, draw).
inline Assignment sample_assignment(const ParamSpace& space, std::uint64_t seed, std::size_t draw) {
    auto rng = keyed_engine(seed, Stream::Search, {draw, 0});
    Assignment a = Assignment::object();
    for (const auto& d : space.dims) {
        switch (d.kind) {
        case ParamDimension::Kind::Choice: {
            std::uniform_int_distribution<std::size_t> pick(0, d.values.size() - 1);
            a[d.name] = d.values[pick(rng)];
            break;
        }
        case ParamDimension::Kind::Uniform:
            a[d.name] = std::uniform_real_distribution<double>(d.low, d.high)(rng);
            break;
        case ParamDimension::Kind::Int:
            a[d.name] = std::uniform_int_distribution<std::int64_t>(static_cast<std::int64_t>(d.low),
                                                                    static_cast<std::int64_t>(d.high))(rng);
            break;
        }
    }
    return a;
}

/// What an evaluator hands back for one assignment: features on the
/// training images and on each test level.
struct EvalData {
    AlignedDataset train;
    std::vector<std::pair<Variation, AlignedDataset>> tests;
};

using Evaluator = std::function<EvalData(const Assignment&, std::uint64_t draw_seed)>;

struct SearchRecord {
    std::size_t draw = 0;
    Assignment assignment;
    bool ok = false;
    double train_auc = 0.0;
    std::map<Variation, double> test_auc;
    std::string error;
};

inline nlohmann::ordered_json to_json(const SearchRecord& r) {
    nlohmann::ordered_json j;
    j["draw"] = r.draw;
    j["assignment"] = r.assignment;
    j["status"] = r.ok ? "ok" : "failed";
    if (r.ok) {
        j["train_auc"] = r.train_auc;
        nlohmann::ordered_json t = nlohmann::ordered_json::object();
        for (const auto& [level, auc] : r.test_auc) t[to_string(level)] = auc;
        j["test_auc"] = t;
    } else {
        j["error"] = r.error;
    }
    return j;
}

inline SearchRecord search_record_from_json(const nlohmann::ordered_json& j) {
    SearchRecord r;
    r.draw = j.at("draw").get<std::size_t>();
    r.assignment = j.at("assignment");
    r.ok = j.at("status").get<std::string>() == "ok";
    if (r.ok) {
        r.train_auc = j.at("train_auc").get<double>();
        for (const auto& [k, v] : j.at("test_auc").items()) r.test_auc[parse_variation(k)] = v.get<double>();
    } else {
        r.error = j.value("error", std::string{});
    }
    return r;
}

struct SearchOptions {
    AnalysisConfig analysis;
    unsigned workers = 1;                    // concurrent draws
    std::optional<std::filesystem::path> log; // JSON-lines stream
    bool resume = false;
};

namespace detail {

inline nlohmann::ordered_json search_header(const ParamSpace& space, std::size_t n_draws, std::uint64_t seed,
                                            const SearchOptions& opt) {
    return {{"type", "config"},    {"version", kVersion},     {"seed", seed},
            {"n_draws", n_draws},  {"space", space.to_json()}, {"config", config_json(opt.analysis)}};
}

inline std::map<std::size_t, SearchRecord> read_search_log(const std::filesystem::path& path,
                                                           const nlohmann::ordered_json& header) {
    std::map<std::size_t, SearchRecord> done;
    std::ifstream in(path);
    if (!in) return done;
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!detail::trim(line).empty()) lines.push_back(line);
    if (lines.empty()) return done;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(lines[i]);
        } catch (const nlohmann::json::parse_error&) {
            if (i + 1 == lines.size()) break; // torn final line from an interrupted run
            throw InputError(path.string() + ": line " + std::to_string(i + 1) + " is not valid JSON");
        }
        if (i == 0) {
            if (j.value("type", "") != "config") throw InputError(path.string() + ": missing config header line");
            if (j.at("seed") != header.at("seed") || j.at("space") != header.at("space") ||
                j.at("config") != header.at("config"))
                throw InputError(path.string() + ": cannot resume, log was written with a different seed, space or config");
            continue;
        }
        try {
            auto r = search_record_from_json(j);
            done[r.draw] = std::move(r);
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path.string() + ": line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return done;
}

} // namespace detail

/// Evaluates n_draws assignments. Failures are recorded, not fatal. Output is
/// in draw order regardless of completion order; with a log, each record is
/// appended as it completes and the file is rewritten in draw order at the end.
inline std::vector<SearchRecord> random_search(const ParamSpace& space, const Evaluator& evaluator, std::size_t n_draws,
                                               std::uint64_t seed, const SearchOptions& opt = {}) {
    if (n_draws < 1) throw InputError("search needs at least one draw");
    if (space.dims.empty()) throw InputError("parameter space has no dimensions");
    const auto header = detail::search_header(space, n_draws, seed, opt);

    std::map<std::size_t, SearchRecord> done;
    if (opt.log && opt.resume) done = detail::read_search_log(*opt.log, header);
    std::ofstream stream;
    std::mutex stream_mutex;
    if (opt.log) {
        const bool append = opt.resume && !done.empty();
        if (append) {
            // rewrite what survived so a torn tail line does not linger
            std::string text = header.dump() + "\n";
            for (const auto& [draw, r] : done) text += to_json(r).dump() + "\n";
            detail::write_file(opt.log->string(), text);
            stream.open(*opt.log, std::ios::app);
        } else {
            stream.open(*opt.log, std::ios::trunc);
            stream << header.dump() << "\n";
        }
        if (!stream) throw InputError("cannot write search log: " + opt.log->string());
        stream.flush();
    }

    std::vector<std::size_t> todo;
    for (std::size_t d = 0; d < n_draws; ++d)
        if (!done.count(d)) todo.push_back(d);

    std::vector<SearchRecord> fresh(todo.size());
    parallel_for(todo.size(), opt.workers, [&](std::size_t slot) {
        SearchRecord r;
        r.draw = todo[slot];
        r.assignment = sample_assignment(space, seed, r.draw);
        try {
            auto data = evaluator(r.assignment, derive_key(seed, Stream::Search, {r.draw, 1}));
            AnalysisConfig cfg = opt.analysis;
            cfg.workers = 1;
            r.train_auc = evaluate(data.train, cfg).auc;
            for (const auto& [level, ad] : data.tests) r.test_auc[level] = evaluate(ad, cfg).auc;
            r.ok = true;
        } catch (const std::exception& e) {
            r.ok = false;
            r.error = e.what();
            r.test_auc.clear();
        }
        if (opt.log) {
            std::lock_guard lock(stream_mutex);
            stream << to_json(r).dump() << "\n";
            stream.flush();
        }
        fresh[slot] = std::move(r);
    });
    for (auto& r : fresh) done[r.draw] = std::move(r);

    std::vector<SearchRecord> out;
    for (auto& [draw, r] : done) out.push_back(std::move(r));
    if (opt.log) {
        stream.close();
        std::string text = header.dump() + "\n";
        for (const auto& r : out) text += to_json(r).dump() + "\n";
        detail::write_file(opt.log->string(), text);
    }
    return out;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InputError("correlation: series differ in length");
    if (x.size() < 3) throw InputError("correlation needs at least 3 paired scores");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw InputError("correlation undefined: a score series has zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Pearson r between train AUC and test AUC at `level` over ok records.
inline double transfer_correlation(const std::vector<SearchRecord>& records, Variation level) {
    std::vector<double> train, test;
    for (const auto& r : records) {
        if (!r.ok) continue;
        auto it = r.test_auc.find(level);
        if (it == r.test_auc.end()) continue;
        train.push_back(r.train_auc);
        test.push_back(it->second);
    }
    if (train.size() < 3)
        throw InputError("transfer correlation needs at least 3 ok records scored at level " + to_string(level));
    return pearson(train, test);
}

/// Best training score; ties go to the lowest draw index.
inline const SearchRecord& select_top(const std::vector<SearchRecord>& records) {
    const SearchRecord* best = nullptr;
    for (const auto& r : records) {
        if (!r.ok) continue;
        if (!best || r.train_auc > best->train_auc || (r.train_auc == best->train_auc && r.draw < best->draw)) best = &r;
    }
    if (!best) throw InputError("no successful records to select from");
    return *best;
}

// ---------------------------------------------------------------------------
// Built-in demonstration family

/// A fixed "world" of images (latent class clusters) seen through a model
/// with three knobs: `noise` in [0,1] corrupts every feature, `dim` sets the
/// embedding width, `rotation` applies a random orthogonal map. Test levels
/// draw images with growing within-class spread.
struct SyntheticFamily {
    std::size_t k = 4;
    std::size_t n_per_class = 20;
    std::size_t latent_dim = 8;
    double train_spread = 0.4;
    std::vector<std::pair<Variation, double>> test_spread{
        {Variation::Low, 0.2}, {Variation::Medium, 0.5}, {Variation::High, 0.8}};
    double noise_scale = 2.0;
    std::uint64_t world_seed = 0;

    static ParamSpace default_space() {
        return ParamSpace::from_json(nlohmann::ordered_json::parse(R"({"dimensions": [
            {"name": "noise", "kind": "uniform", "low": 0, "high": 1},
            {"name": "dim", "kind": "int", "low": 8, "high": 32},
            {"name": "rotation", "kind": "choice", "values": ["identity", "random"]}]})"));
    }

    Evaluator evaluator() const {
        auto world = std::make_shared<std::vector<std::pair<Variation, AlignedDataset>>>();
        std::uint64_t tag = 0;
        auto make = [&](Variation v, double spread) {
            auto [fs, lf] = generate({.kind = SynthKind::Clusters, .k = k, .n_per_class = n_per_class,
                                      .p = latent_dim, .noise = spread, .separation = 1.0,
                                      .seed = derive_key(world_seed, Stream::Synth, {tag++}), .variation = v});
            world->emplace_back(v, align(fs, lf));
        };
        make(Variation::Unspecified, train_spread);
        for (auto [v, s] : test_spread) make(v, s);
        recenter(*world);

        const auto latent = latent_dim;
        const auto scale = noise_scale;
        return [world, latent, scale](const Assignment& a, std::uint64_t draw_seed) {
            const double noise = a.at("noise").get<double>();
            const auto dim = static_cast<std::size_t>(a.value("dim", static_cast<std::int64_t>(latent)));
            const auto rotation = a.value("rotation", std::string("identity"));
            if (noise < 0.0 || noise > 1.0) throw InputError("noise must lie in [0, 1]");
            if (dim < latent) throw InputError("dim must be at least the latent width");
            if (rotation != "identity" && rotation != "random") throw InputError("unknown rotation '" + rotation + "'");

            std::mt19937_64 rng(draw_seed);
            std::normal_distribution<double> normal(0.0, 1.0);
            const auto p = static_cast<Eigen::Index>(dim);
            Eigen::MatrixXd q = Eigen::MatrixXd::Identity(p, p);
            if (rotation == "random") {
                Eigen::MatrixXd g(p, p);
                for (auto& v : g.reshaped()) v = normal(rng);
                q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
            }
            // fixed total noise energy regardless of width
            const double sd = scale * noise * std::sqrt(static_cast<double>(latent) / static_cast<double>(dim));
            auto view = [&](const AlignedDataset& ad) {
                const auto& x = ad.features.matrix();
                RowMatrix y = RowMatrix::Zero(x.rows(), p);
                y.leftCols(x.cols()) = x;
                for (auto& v : y.reshaped()) v += sd * normal(rng);
                RowMatrix out = y * q.transpose();
                AlignedDataset copy = ad;
                copy.features = FeatureSet(ad.features.image_ids(), std::move(out), ad.features.variation());
                return copy;
            };
            EvalData data{view((*world)[0].second), {}};
            for (std::size_t i = 1; i < world->size(); ++i) data.tests.emplace_back((*world)[i].first, view((*world)[i].second));
            return data;
        };
    }

private:
    // Put every set on the centroids of the first one: subtract each row's own
    // set centroid and add the first set's centroid for that class.
    void recenter(std::vector<std::pair<Variation, AlignedDataset>>& sets) const {
        auto centroids = [&](const AlignedDataset& ad) {
            Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ad.k()), ad.features.matrix().cols());
            for (std::size_t i = 0; i < ad.size(); ++i)
                c.row(static_cast<Eigen::Index>(ad.class_index[i])) += ad.features.matrix().row(static_cast<Eigen::Index>(i));
            for (std::size_t j = 0; j < ad.k(); ++j) c.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(ad.class_counts[j]);
            return c;
        };
        const Eigen::MatrixXd ref = centroids(sets[0].second);
        for (std::size_t s = 1; s < sets.size(); ++s) {
            auto& ad = sets[s].second;
            const Eigen::MatrixXd own = centroids(ad);
            RowMatrix x = ad.features.matrix();
            for (std::size_t i = 0; i < ad.size(); ++i) {
                const auto j = static_cast<Eigen::Index>(ad.class_index[i]);
                x.row(static_cast<Eigen::Index>(i)) += ref.row(j) - own.row(j);
            }
            ad.features = FeatureSet(ad.features.image_ids(), std::move(x), ad.features.variation());
        }
    }
};

inline nlohmann::ordered_json search_summary(const std::vector<SearchRecord>& records) {
    nlohmann::ordered_json j;
    std::size_t ok = 0;
    for (const auto& r : records) ok += r.ok ? 1 : 0;
    j["n_records"] = records.size();
    j["n_ok"] = ok;
    if (ok > 0) {
        const auto& top = select_top(records);
        j["top"] = to_json(top);
    }
    nlohmann::ordered_json corr = nlohmann::ordered_json::object();
    for (auto level : {Variation::Low, Variation::Medium, Variation::High, Variation::Unspecified}) {
        try {
            corr[to_string(level)] = transfer_correlation(records, level);
        } catch (const InputError&) {
        }
    }
    j["transfer_pearson_r"] = corr;
    return j;
}

} // namespace kanalysis
