#pragma once

// Feature matrices, category labels and dataset manifests, plus their
// on-disk formats:
//
//   CSV features   header `image_id,f0,...,f{p-1}`, one row per image
//   binary         `<name>.f64` little-endian row-major doubles, with a
//                  `<name>.json` sidecar {rows, cols, dtype, order, ids}
//   labels         CSV `image_id,class`
//   manifest       JSON {name, seed, labels, entries:[{variation,path,format}]}

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "kanalysis/detail/text.hpp"
#include "kanalysis/error.hpp"

namespace kanalysis {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Variation { Low, Medium, High, Unspecified };

inline std::string to_string(Variation v) {
    switch (v) {
    case Variation::Low: return "low";
    case Variation::Medium: return "medium";
    case Variation::High: return "high";
    case Variation::Unspecified: return "unspecified";
    }
    return "unspecified";
}

inline Variation parse_variation(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "low") return Variation::Low;
    if (lower == "medium") return Variation::Medium;
    if (lower == "high") return Variation::High;
    if (lower == "unspecified" || lower.empty()) return Variation::Unspecified;
    throw InputError("unknown variation level '" + std::string(s) + "'");
}

enum class FeatureFormat { Csv, Binary };

inline FeatureFormat parse_format(std::string_view s) {
    if (s == "csv") return FeatureFormat::Csv;
    if (s == "binary" || s == "f64") return FeatureFormat::Binary;
    throw InputError("unknown feature format '" + std::string(s) + "'");
}

/// Guesses the format from the file extension (`.csv` vs `.f64`/`.json`).
inline FeatureFormat infer_format(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    if (ext == ".f64" || ext == ".json") return FeatureFormat::Binary;
    return FeatureFormat::Csv;
}

/// n images by p feature dimensions. Immutable once constructed.
class FeatureSet {
public:
    FeatureSet(std::vector<std::string> image_ids, RowMatrix features,
               Variation variation = Variation::Unspecified)
        : ids_(std::move(image_ids)), x_(std::move(features)), variation_(variation) {
        if (x_.rows() < 2) throw InputError("feature set needs at least 2 rows, got " + std::to_string(x_.rows()));
        if (x_.cols() < 1) throw InputError("feature set needs at least 1 column");
        if (static_cast<Eigen::Index>(ids_.size()) != x_.rows())
            throw InputError("image id count " + std::to_string(ids_.size()) + " does not match row count " +
                             std::to_string(x_.rows()));
        std::unordered_set<std::string> seen;
        for (const auto& id : ids_)
            if (!seen.insert(id).second) throw InputError("duplicate image id '" + id + "'");
        for (Eigen::Index i = 0; i < x_.rows(); ++i)
            for (Eigen::Index j = 0; j < x_.cols(); ++j)
                if (!std::isfinite(x_(i, j)))
                    throw InputError("non-finite feature value at row " + std::to_string(i) + ", column " +
                                     std::to_string(j));
    }

    std::size_t rows() const { return ids_.size(); }
    std::size_t cols() const { return static_cast<std::size_t>(x_.cols()); }
    const std::vector<std::string>& image_ids() const { return ids_; }
    const RowMatrix& matrix() const { return x_; }
    Variation variation() const { return variation_; }

    FeatureSet with_variation(Variation v) const { return FeatureSet(*this, v); }

    FeatureSet select_rows(std::span<const std::size_t> rows) const {
        std::vector<std::string> ids;
        RowMatrix m(static_cast<Eigen::Index>(rows.size()), x_.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            ids.push_back(ids_.at(rows[r]));
            m.row(static_cast<Eigen::Index>(r)) = x_.row(static_cast<Eigen::Index>(rows[r]));
        }
        return FeatureSet(std::move(ids), std::move(m), variation_);
    }

    FeatureSet select_columns(std::span<const std::size_t> cols) const {
        RowMatrix m(x_.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (cols[c] >= this->cols()) throw InputError("column index out of range");
            m.col(static_cast<Eigen::Index>(c)) = x_.col(static_cast<Eigen::Index>(cols[c]));
        }
        return FeatureSet(ids_, std::move(m), variation_);
    }

private:
    FeatureSet(const FeatureSet& other, Variation v) : ids_(other.ids_), x_(other.x_), variation_(v) {}

    std::vector<std::string> ids_;
    RowMatrix x_;
    Variation variation_;
};

/// Per-image category labels; class names are opaque strings.
class LabelFrame {
public:
    LabelFrame(std::vector<std::string> image_ids, std::vector<std::string> classes)
        : ids_(std::move(image_ids)), classes_(std::move(classes)) {
        if (ids_.size() != classes_.size()) throw InputError("label frame: id and class counts differ");
        for (std::size_t i = 0; i < ids_.size(); ++i)
            if (!index_.emplace(ids_[i], i).second) throw InputError("duplicate image id '" + ids_[i] + "' in labels");
    }

    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& image_ids() const { return ids_; }
    const std::vector<std::string>& classes() const { return classes_; }

    std::optional<std::string> class_of(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return classes_[it->second];
    }

private:
    std::vector<std::string> ids_;
    std::vector<std::string> classes_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Features and labels co-indexed in feature-set row order.
struct AlignedDataset {
    FeatureSet features;
    std::vector<std::string> class_names;  // sorted distinct classes; column order of Y
    std::vector<std::size_t> class_index;  // per row, index into class_names
    std::vector<std::size_t> class_counts; // per class

    std::size_t size() const { return features.rows(); }
    std::size_t k() const { return class_names.size(); }

    std::string label(std::size_t row) const { return class_names[class_index[row]]; }

    /// Restriction to a subset of rows. Class names are kept so that label
    /// matrix columns stay comparable; counts are recomputed.
    AlignedDataset select_rows(std::span<const std::size_t> rows) const {
        AlignedDataset out{features.select_rows(rows), class_names, {}, std::vector<std::size_t>(k(), 0)};
        out.class_index.reserve(rows.size());
        for (auto r : rows) {
            out.class_index.push_back(class_index.at(r));
            ++out.class_counts[class_index[r]];
        }
        return out;
    }

    AlignedDataset select_columns(std::span<const std::size_t> cols) const {
        return AlignedDataset{features.select_columns(cols), class_names, class_index, class_counts};
    }
};

/// Co-indexes labels with a feature set. Labels for images not in `fs` are
/// ignored; every feature row must have a label.
inline AlignedDataset align(const FeatureSet& fs, const LabelFrame& lf) {
    std::vector<std::string> per_row;
    per_row.reserve(fs.rows());
    for (const auto& id : fs.image_ids()) {
        auto c = lf.class_of(id);
        if (!c) throw InputError("missing label for image id '" + id + "'");
        per_row.push_back(*c);
    }
    std::set<std::string> distinct(per_row.begin(), per_row.end());
    if (distinct.size() < 2)
        throw InputError("need at least 2 classes, found " + std::to_string(distinct.size()));
    std::vector<std::string> names(distinct.begin(), distinct.end());
    std::map<std::string, std::size_t> index;
    for (std::size_t j = 0; j < names.size(); ++j) index[names[j]] = j;

    AlignedDataset ad{fs, names, {}, std::vector<std::size_t>(names.size(), 0)};
    for (const auto& c : per_row) {
        ad.class_index.push_back(index[c]);
        ++ad.class_counts[index[c]];
    }
    for (std::size_t j = 0; j < names.size(); ++j)
        if (ad.class_counts[j] < 2)
            throw InputError("class '" + names[j] + "' has fewer than 2 members");
    return ad;
}

// ---------------------------------------------------------------------------
// Feature file I/O

namespace detail {

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
    auto s = p;
    return s.replace_extension(".json");
}

inline std::filesystem::path data_path(const std::filesystem::path& p) {
    auto s = p;
    return s.replace_extension(".f64");
}

} // namespace detail

inline FeatureSet load_feature_csv(const std::filesystem::path& path) {
    const auto text = detail::read_file(path.string());
    const auto lines = detail::data_lines(text);
    const auto where = [&](std::size_t line) { return path.string() + ": line " + std::to_string(line); };
    if (lines.empty()) throw InputError(path.string() + ": empty feature file");

    auto header = detail::split(lines[0].text);
    if (header.size() < 2 || header[0] != "image_id")
        throw InputError(where(lines[0].number) + ": malformed header, expected 'image_id,f0,...'");
    for (std::size_t c = 1; c < header.size(); ++c)
        if (header[c] != "f" + std::to_string(c - 1))
            throw InputError(where(lines[0].number) + ": malformed header, column " + std::to_string(c + 1) +
                             " should be 'f" + std::to_string(c - 1) + "'");
    const std::size_t p = header.size() - 1;
    const std::size_t n = lines.size() - 1;

    std::vector<std::string> ids;
    ids.reserve(n);
    RowMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (std::size_t r = 0; r < n; ++r) {
        const auto& line = lines[r + 1];
        auto cells = detail::split(line.text);
        if (cells.size() != p + 1)
            throw InputError(where(line.number) + ": expected " + std::to_string(p + 1) + " cells, found " +
                             std::to_string(cells.size()));
        if (cells[0].empty()) throw InputError(where(line.number) + ", column 1: empty image id");
        ids.emplace_back(cells[0]);
        for (std::size_t c = 0; c < p; ++c) {
            auto v = detail::parse_double(cells[c + 1]);
            if (!v)
                throw InputError(where(line.number) + ", column " + std::to_string(c + 2) + ": non-numeric cell '" +
                                 std::string(cells[c + 1]) + "'");
            if (!std::isfinite(*v))
                throw InputError(where(line.number) + ", column " + std::to_string(c + 2) + ": non-finite value");
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
        }
    }
    return FeatureSet(std::move(ids), std::move(m));
}

inline FeatureSet load_feature_binary(const std::filesystem::path& path) {
    const auto side = detail::sidecar_path(path);
    const auto data = detail::data_path(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(detail::read_file(side.string()));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(side.string() + ": malformed sidecar: " + e.what());
    }
    std::size_t rows = 0, cols = 0;
    std::vector<std::string> ids;
    try {
        rows = meta.at("rows").get<std::size_t>();
        cols = meta.at("cols").get<std::size_t>();
        if (meta.value("dtype", "f64") != "f64") throw InputError(side.string() + ": dtype must be f64");
        if (meta.value("order", "row-major") != "row-major")
            throw InputError(side.string() + ": order must be row-major");
        ids = meta.at("ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(side.string() + ": malformed sidecar: " + e.what());
    }
    if (ids.size() != rows)
        throw InputError(side.string() + ": sidecar lists " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(rows) + " rows");

    const auto raw = detail::read_file(data.string());
    const std::size_t row_bytes = cols * sizeof(double);
    if (row_bytes == 0 || raw.size() % row_bytes != 0)
        throw InputError(data.string() + ": size " + std::to_string(raw.size()) +
                         " bytes is not a whole number of rows");
    const std::size_t held = raw.size() / row_bytes;
    if (held != rows)
        throw InputError(data.string() + ": row-count mismatch: sidecar declares " + std::to_string(rows) +
                         " rows, data holds " + std::to_string(held));

    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows * cols; ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, raw.data() + i * sizeof(double), sizeof bits);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        double v = std::bit_cast<double>(bits);
        if (!std::isfinite(v))
            throw InputError(data.string() + ": non-finite value at row " + std::to_string(i / cols + 1) +
                             ", column " + std::to_string(i % cols + 1));
        m.data()[i] = v;
    }
    return FeatureSet(std::move(ids), std::move(m));
}

inline FeatureSet load_feature_matrix(const std::filesystem::path& path, FeatureFormat format) {
    return format == FeatureFormat::Csv ? load_feature_csv(path) : load_feature_binary(path);
}

// A non-null `config` is embedded: a `# config:` comment line for CSV, a
// "config" key for JSON sidecars and manifests. Loaders ignore both.
inline void save_feature_csv(const FeatureSet& fs, const std::filesystem::path& path,
                             const nlohmann::ordered_json& config = nullptr) {
    std::string out = config.is_null() ? "" : "# config: " + config.dump() + "\n";
    out += "image_id";
    for (std::size_t c = 0; c < fs.cols(); ++c) out += ",f" + std::to_string(c);
    out += '\n';
    const auto& m = fs.matrix();
    for (std::size_t r = 0; r < fs.rows(); ++r) {
        out += fs.image_ids()[r];
        for (std::size_t c = 0; c < fs.cols(); ++c) {
            out += ',';
            out += detail::format_double(m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
        }
        out += '\n';
    }
    detail::write_file(path.string(), out);
}

/// Writes `<stem>.f64` and `<stem>.json` next to each other.
inline void save_feature_binary(const FeatureSet& fs, const std::filesystem::path& path,
                                const nlohmann::ordered_json& config = nullptr) {
    const auto& m = fs.matrix();
    std::string raw(fs.rows() * fs.cols() * sizeof(double), '\0');
    for (std::size_t i = 0; i < fs.rows() * fs.cols(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(m.data()[i]);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        std::memcpy(raw.data() + i * sizeof(double), &bits, sizeof bits);
    }
    detail::write_file(detail::data_path(path).string(), raw);
    nlohmann::ordered_json meta;
    meta["rows"] = fs.rows();
    meta["cols"] = fs.cols();
    meta["dtype"] = "f64";
    meta["order"] = "row-major";
    meta["ids"] = fs.image_ids();
    if (!config.is_null()) meta["config"] = config;
    detail::write_file(detail::sidecar_path(path).string(), meta.dump(2) + "\n");
}

inline void save_feature_matrix(const FeatureSet& fs, const std::filesystem::path& path, FeatureFormat format,
                                const nlohmann::ordered_json& config = nullptr) {
    format == FeatureFormat::Csv ? save_feature_csv(fs, path, config) : save_feature_binary(fs, path, config);
}

inline LabelFrame load_labels(const std::filesystem::path& path) {
    const auto text = detail::read_file(path.string());
    const auto lines = detail::data_lines(text);
    if (lines.empty()) throw InputError(path.string() + ": empty label file");
    auto header = detail::split(lines[0].text);
    if (header.size() != 2 || header[0] != "image_id" || header[1] != "class")
        throw InputError(path.string() + ": line " + std::to_string(lines[0].number) +
                         ": malformed header, expected 'image_id,class'");
    std::vector<std::string> ids, classes;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        auto cells = detail::split(lines[r].text);
        if (cells.size() != 2 || cells[0].empty() || cells[1].empty())
            throw InputError(path.string() + ": line " + std::to_string(lines[r].number) +
                             ": expected 'image_id,class'");
        ids.emplace_back(cells[0]);
        classes.emplace_back(cells[1]);
    }
    return LabelFrame(std::move(ids), std::move(classes));
}

inline void save_labels(const LabelFrame& lf, const std::filesystem::path& path,
                        const nlohmann::ordered_json& config = nullptr) {
    std::string out = config.is_null() ? "" : "# config: " + config.dump() + "\n";
    out += "image_id,class\n";
    for (std::size_t i = 0; i < lf.size(); ++i) out += lf.image_ids()[i] + "," + lf.classes()[i] + "\n";
    detail::write_file(path.string(), out);
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
    Variation variation = Variation::Unspecified;
    std::filesystem::path path;
    FeatureFormat format = FeatureFormat::Csv;
};

struct DatasetManifest {
    std::string name;
    std::optional<std::uint64_t> seed;
    std::filesystem::path labels;
    std::vector<ManifestEntry> entries;
};

/// Relative paths inside the manifest resolve against the manifest's directory.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + ": malformed manifest: " + e.what());
    }
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    DatasetManifest m;
    try {
        m.name = j.value("name", "");
        if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
        m.labels = resolve(j.at("labels").get<std::string>());
        std::set<Variation> seen;
        for (const auto& e : j.at("entries")) {
            ManifestEntry entry;
            entry.variation = parse_variation(e.value("variation", "unspecified"));
            entry.path = resolve(e.at("path").get<std::string>());
            entry.format = e.contains("format") ? parse_format(e.at("format").get<std::string>())
                                                : infer_format(entry.path);
            if (!seen.insert(entry.variation).second)
                throw InputError(path.string() + ": duplicate variation level '" + to_string(entry.variation) + "'");
            m.entries.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + ": malformed manifest: " + e.what());
    }
    if (m.entries.empty()) throw InputError(path.string() + ": manifest has no entries");
    auto require = [](const std::filesystem::path& p) {
        if (!std::filesystem::exists(p)) throw InputError("referenced file does not exist: " + p.string());
    };
    require(m.labels);
    for (const auto& e : m.entries)
        require(e.format == FeatureFormat::Binary ? detail::sidecar_path(e.path) : e.path);
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path,
                          const nlohmann::ordered_json& config = nullptr) {
    nlohmann::ordered_json j;
    j["name"] = m.name;
    if (m.seed) j["seed"] = *m.seed;
    j["labels"] = m.labels.string();
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : m.entries)
        j["entries"].push_back({{"variation", to_string(e.variation)},
                                {"path", e.path.string()},
                                {"format", e.format == FeatureFormat::Csv ? "csv" : "binary"}});
    if (!config.is_null()) j["config"] = config;
    detail::write_file(path.string(), j.dump(2) + "\n");
}

} // namespace kanalysis
