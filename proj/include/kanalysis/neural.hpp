#pragma once

// Turns repetition-level spike counts into a feature set (images x sites):
//   1. subtract the site's mean blank-image count within the block
//   2. divide by the site's standard deviation over the block's responses
//      (Low variation: over each repetition set within the block)
//   3. average the normalized responses over all repetitions of an image

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "kanalysis/dataset.hpp"
#include "kanalysis/detail/text.hpp"
#include "kanalysis/error.hpp"

namespace kanalysis {

inline constexpr const char* kBlankImageId = "__blank__";

struct RepetitionRecord {
    std::string site;
    std::string image;
    std::string block;
    std::int64_t repetition = 0;
    std::int64_t count = 0;
    bool is_blank = false;
};

struct RepetitionTable {
    std::vector<RepetitionRecord> records;
    double window_onset_ms = 70.0; // counts arrive pre-windowed
    double window_offset_ms = 170.0;
};

enum class ZeroVariancePolicy { Error, Epsilon, DropSite };

inline ZeroVariancePolicy parse_zero_variance_policy(std::string_view s) {
    if (s == "error") return ZeroVariancePolicy::Error;
    if (s == "epsilon") return ZeroVariancePolicy::Epsilon;
    if (s == "drop_site" || s == "drop") return ZeroVariancePolicy::DropSite;
    throw InputError("unknown zero-variance policy '" + std::string(s) + "'");
}

inline std::string to_string(ZeroVariancePolicy p) {
    switch (p) {
    case ZeroVariancePolicy::Error: return "error";
    case ZeroVariancePolicy::Epsilon: return "epsilon";
    case ZeroVariancePolicy::DropSite: return "drop_site";
    }
    return "error";
}

struct PreprocConfig {
    Variation level = Variation::Medium;
    std::size_t low_splits = 3;
    ZeroVariancePolicy zero_variance = ZeroVariancePolicy::Error;
    double epsilon = 1e-12;
};

struct NeuralFeatures {
    FeatureSet features;            // rows: images in first-seen order; cols: retained sites
    std::vector<std::string> sites; // column labels
    std::vector<std::string> warnings;
};

namespace detail {

inline void check_unique_keys(const std::vector<RepetitionRecord>& records) {
    std::set<std::tuple<std::string, std::string, std::string, std::int64_t>> keys;
    for (const auto& r : records)
        if (!keys.emplace(r.site, r.image, r.block, r.repetition).second)
            throw InputError("duplicate record for (site=" + r.site + ", image=" + r.image + ", block=" + r.block +
                             ", repetition=" + std::to_string(r.repetition) + ")");
}

} // namespace detail

/// CSV with header `site_id,image_id,block_id,repetition,count,is_blank`.
inline RepetitionTable load_repetition_table(const std::filesystem::path& path) {
    const auto text = detail::read_file(path.string());
    const auto lines = detail::data_lines(text);
    if (lines.empty()) throw InputError(path.string() + ": empty repetition table");
    const std::vector<std::string> expected{"site_id", "image_id", "block_id", "repetition", "count", "is_blank"};
    auto header = detail::split(lines[0].text);
    for (const auto& col : expected)
        if (std::find(header.begin(), header.end(), col) == header.end())
            throw InputError(path.string() + ": missing column '" + col + "'");
    std::map<std::string, std::size_t> at;
    for (std::size_t c = 0; c < header.size(); ++c) at[std::string(header[c])] = c;

    RepetitionTable table;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto where = path.string() + ": line " + std::to_string(lines[r].number);
        auto cells = detail::split(lines[r].text);
        if (cells.size() != header.size())
            throw InputError(where + ": expected " + std::to_string(header.size()) + " cells");
        RepetitionRecord rec;
        rec.site = std::string(cells[at["site_id"]]);
        rec.image = std::string(cells[at["image_id"]]);
        rec.block = std::string(cells[at["block_id"]]);
        auto rep = detail::parse_int(cells[at["repetition"]]);
        auto count = detail::parse_int(cells[at["count"]]);
        auto blank = detail::parse_int(cells[at["is_blank"]]);
        if (!rep) throw InputError(where + ": repetition is not an integer");
        if (!count) throw InputError(where + ": count is not an integer");
        if (*count < 0) throw InputError(where + ": negative spike count " + std::to_string(*count));
        if (!blank || (*blank != 0 && *blank != 1)) throw InputError(where + ": is_blank must be 0 or 1");
        rec.repetition = *rep;
        rec.count = *count;
        rec.is_blank = *blank == 1;
        if (rec.site.empty() || rec.image.empty() || rec.block.empty())
            throw InputError(where + ": empty site, image or block id");
        if (rec.is_blank != (rec.image == kBlankImageId))
            throw InputError(where + ": blank rows must use image_id " + std::string(kBlankImageId) +
                             " and is_blank=1");
        table.records.push_back(std::move(rec));
    }
    detail::check_unique_keys(table.records);
    return table;
}

inline void save_repetition_table(const RepetitionTable& t, const std::filesystem::path& path) {
    std::string out = "site_id,image_id,block_id,repetition,count,is_blank\n";
    for (const auto& r : t.records)
        out += r.site + "," + r.image + "," + r.block + "," + std::to_string(r.repetition) + "," +
               std::to_string(r.count) + "," + (r.is_blank ? "1" : "0") + "\n";
    detail::write_file(path.string(), out);
}

inline NeuralFeatures build_neural_features(const RepetitionTable& rt, const PreprocConfig& cfg) {
    if (cfg.low_splits < 1) throw InputError("low-variation split count must be at least 1");
    detail::check_unique_keys(rt.records);

    std::vector<std::string> sites, images;
    std::unordered_map<std::string, std::size_t> site_index, image_index;
    for (const auto& r : rt.records) {
        if (r.count < 0) throw InputError("negative spike count for site " + r.site);
        if (site_index.emplace(r.site, sites.size()).second) sites.push_back(r.site);
        if (!r.is_blank && image_index.emplace(r.image, images.size()).second) images.push_back(r.image);
    }
    if (images.empty()) throw InputError("repetition table has no image presentations");

    // background: mean blank count per (site, block)
    std::map<std::pair<std::size_t, std::string>, std::pair<double, std::size_t>> blank;
    for (const auto& r : rt.records)
        if (r.is_blank) {
            auto& [sum, n] = blank[{site_index[r.site], r.block}];
            sum += static_cast<double>(r.count);
            ++n;
        }

    // normalization groups: (site, block, repetition set)
    const bool split = cfg.level == Variation::Low;
    const auto splits = static_cast<std::int64_t>(cfg.low_splits);
    using GroupKey = std::tuple<std::size_t, std::string, std::int64_t>;
    std::map<GroupKey, std::vector<std::size_t>> groups; // record indices
    std::vector<double> centered(rt.records.size(), 0.0);
    for (std::size_t i = 0; i < rt.records.size(); ++i) {
        const auto& r = rt.records[i];
        if (r.is_blank) continue;
        const auto site = site_index[r.site];
        auto it = blank.find({site, r.block});
        if (it == blank.end())
            throw InputError("missing blank rows for site " + r.site + " in block " + r.block);
        centered[i] = static_cast<double>(r.count) - it->second.first / static_cast<double>(it->second.second);
        const std::int64_t set = split ? ((r.repetition % splits) + splits) % splits : 0;
        groups[{site, r.block, set}].push_back(i);
    }

    std::vector<std::string> warnings;
    std::vector<double> normalized(rt.records.size(), 0.0);
    std::vector<bool> dropped(sites.size(), false);
    for (const auto& [key, members] : groups) {
        const auto& [site, block, set] = key;
        double mean = 0.0;
        for (auto i : members) mean += centered[i];
        mean /= static_cast<double>(members.size());
        double ss = 0.0, scale = 0.0;
        for (auto i : members) {
            ss += (centered[i] - mean) * (centered[i] - mean);
            scale = std::max(scale, std::abs(centered[i]));
        }
        double sd = std::sqrt(ss / static_cast<double>(members.size())); // population estimator
        if (sd <= 1e-12 * std::max(1.0, scale)) {
            const auto where = "site " + sites[site] + " in block " + block +
                               (split ? " (repetition set " + std::to_string(set) + ")" : "");
            switch (cfg.zero_variance) {
            case ZeroVariancePolicy::Error:
                throw InputError("zero response variance for " + where);
            case ZeroVariancePolicy::Epsilon:
                sd = std::max(sd, cfg.epsilon);
                break;
            case ZeroVariancePolicy::DropSite:
                if (!dropped[site]) warnings.push_back("dropping " + where + ": zero response variance");
                dropped[site] = true;
                continue;
            }
        }
        for (auto i : members) normalized[i] = centered[i] / sd;
    }

    std::vector<std::size_t> kept;
    for (std::size_t s = 0; s < sites.size(); ++s)
        if (!dropped[s]) kept.push_back(s);
    if (kept.empty()) throw InputError("every site was dropped for zero variance");

    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(images.size()),
                                                static_cast<Eigen::Index>(sites.size()));
    Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(sum.rows(), sum.cols());
    for (std::size_t i = 0; i < rt.records.size(); ++i) {
        const auto& r = rt.records[i];
        if (r.is_blank) continue;
        const auto row = static_cast<Eigen::Index>(image_index[r.image]);
        const auto col = static_cast<Eigen::Index>(site_index[r.site]);
        sum(row, col) += normalized[i];
        ++seen(row, col);
    }
    RowMatrix x(sum.rows(), static_cast<Eigen::Index>(kept.size()));
    for (Eigen::Index row = 0; row < sum.rows(); ++row)
        for (std::size_t c = 0; c < kept.size(); ++c) {
            const auto col = static_cast<Eigen::Index>(kept[c]);
            if (seen(row, col) == 0)
                throw InputError("site " + sites[kept[c]] + " never observed for image " +
                                 images[static_cast<std::size_t>(row)]);
            x(row, static_cast<Eigen::Index>(c)) = sum(row, col) / seen(row, col);
        }

    std::vector<std::string> kept_sites;
    for (auto s : kept) kept_sites.push_back(sites[s]);
    return {FeatureSet(images, std::move(x), cfg.level), std::move(kept_sites), std::move(warnings)};
}

} // namespace kanalysis
