#pragma once

// Curve files and plots: per-d curve CSV, envelope CSV, run summaries and an
// SVG of accuracy against normalized complexity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kanalysis/dataset.hpp"
#include "kanalysis/detail/text.hpp"
#include "kanalysis/error.hpp"
#include "kanalysis/kernel.hpp"
#include "kanalysis/protocol.hpp"
#include "kanalysis/version.hpp"

namespace kanalysis {

namespace detail {

inline std::string comment_block(const nlohmann::ordered_json& config) {
    return "# config: " + config.dump() + "\n";
}

} // namespace detail

/// d,d_over_D,e_d,accuracy,argmin_sigma, preceded by a `# config:` line.
inline std::string curve_csv(const KACurve& c, const nlohmann::ordered_json& config) {
    using detail::format_double;
    const auto dim = c.dimension();
    std::string out = detail::comment_block(config);
    out += "d,d_over_D,e_d,accuracy,argmin_sigma\n";
    for (std::size_t d = 0; d <= dim; ++d) {
        out += std::to_string(d) + "," + format_double(static_cast<double>(d) / static_cast<double>(dim)) + "," +
               format_double(c.loss[d]) + "," + format_double(c.accuracy(d)) + "," + format_double(c.argmin_sigma(d)) +
               "\n";
    }
    return out;
}

inline std::string envelope_csv(const LevelReport& l, const nlohmann::ordered_json& config) {
    using detail::format_double;
    std::string out = detail::comment_block(config);
    out += "d_over_D,accuracy_mean,accuracy_min,accuracy_max\n";
    for (std::size_t i = 0; i < l.envelope.grid.size(); ++i)
        out += format_double(l.envelope.grid[i]) + "," + format_double(l.envelope.mean[i]) + "," +
               format_double(l.envelope.min[i]) + "," + format_double(l.envelope.max[i]) + "\n";
    return out;
}

inline nlohmann::ordered_json summary_json(const KAResult& r, const AlignedDataset& ad,
                                           const nlohmann::ordered_json& config) {
    nlohmann::ordered_json j;
    j["version"] = kVersion;
    j["auc"] = r.auc;
    j["sigmas"] = r.curve.sigmas.sigmas;
    j["n"] = ad.size();
    j["k"] = ad.k();
    j["p"] = ad.features.cols();
    j["classes"] = ad.class_names;
    j["clamped_eigenvalues"] = r.curve.clamped_eigenvalues;
    j["config"] = config;
    return j;
}

/// One plottable series: accuracy over d/D, optionally with a min/max band.
struct PlotCurve {
    std::string label;
    std::vector<double> x, y;
    std::vector<double> lo, hi; // empty when there is no band
    nlohmann::ordered_json config;
};

/// Reads a curve CSV (`d_over_D`, `accuracy`) or an envelope CSV
/// (`d_over_D`, `accuracy_mean`, `accuracy_min`, `accuracy_max`).
inline PlotCurve load_curve_csv(const std::filesystem::path& path) {
    const auto text = detail::read_file(path.string());
    PlotCurve c;
    c.label = path.stem().string();
    for (auto line : detail::split(text, '\n')) {
        const std::string prefix = "# config: ";
        if (line.substr(0, prefix.size()) == prefix) {
            try {
                c.config = nlohmann::ordered_json::parse(line.substr(prefix.size()));
            } catch (const nlohmann::json::parse_error&) {
            }
        }
    }
    const auto lines = detail::data_lines(text);
    if (lines.empty()) throw InputError(path.string() + ": empty curve file");
    const auto header = detail::split(lines[0].text);
    auto col = [&](std::string_view name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (detail::trim(header[i]) == name) return i;
        return std::nullopt;
    };
    const auto xc = col("d_over_D");
    auto yc = col("accuracy");
    const auto lo = col("accuracy_min"), hi = col("accuracy_max");
    if (!yc) yc = col("accuracy_mean");
    if (!xc || !yc) throw InputError(path.string() + ": line " + std::to_string(lines[0].number) +
                                     ": header needs d_over_D and accuracy (or accuracy_mean) columns");
    const bool band = lo && hi;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = detail::split(lines[r].text);
        const auto where = path.string() + ": line " + std::to_string(lines[r].number);
        if (cells.size() != header.size())
            throw InputError(where + ": expected " + std::to_string(header.size()) + " cells, found " +
                             std::to_string(cells.size()));
        auto get = [&](std::size_t i) {
            auto v = detail::parse_double(cells[i]);
            if (!v || !std::isfinite(*v))
                throw InputError(where + ", column " + std::to_string(i + 1) + ": not a finite number");
            return *v;
        };
        c.x.push_back(get(*xc));
        c.y.push_back(get(*yc));
        if (band) {
            c.lo.push_back(get(*lo));
            c.hi.push_back(get(*hi));
        }
        if (c.x.back() < 0.0 || c.x.back() > 1.0) throw InputError(where + ": d_over_D outside [0, 1]");
        if (c.x.size() > 1 && c.x.back() < c.x[c.x.size() - 2]) throw InputError(where + ": d_over_D decreases");
    }
    if (c.x.size() < 2) throw InputError(path.string() + ": a curve needs at least 2 points");
    return c;
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

inline std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

} // namespace detail

struct PlotOptions {
    bool bands = true;
    std::string title = "Kernel analysis";
    double width = 640, height = 480;
};

/// Accuracy (1 - e(d)) on [0,1] against d/D on [0,1]; one polyline per curve
/// and, where available, a polygon for the min/max band.
inline std::string render_svg(const std::vector<PlotCurve>& curves, const nlohmann::ordered_json& config,
                              const PlotOptions& opt = {}) {
    if (curves.empty()) throw InputError("nothing to plot: no curves given");
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
    const double left = 64, right = 160, top = 40, bottom = 56;
    const double pw = opt.width - left - right, ph = opt.height - top - bottom;
    auto px = [&](double x) { return detail::fixed(left + std::clamp(x, 0.0, 1.0) * pw); };
    auto py = [&](double y) { return detail::fixed(top + (1.0 - std::clamp(y, 0.0, 1.0)) * ph); };

    std::string s;
    s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fixed(opt.width) + "\" height=\"" +
         detail::fixed(opt.height) + "\" viewBox=\"0 0 " + detail::fixed(opt.width) + " " + detail::fixed(opt.height) +
         "\">\n";
    s += "<title>" + detail::xml_escape(opt.title) + "</title>\n";
    s += "<desc>" + detail::xml_escape(config.dump()) + "</desc>\n";
    s += "<rect x=\"0\" y=\"0\" width=\"" + detail::fixed(opt.width) + "\" height=\"" + detail::fixed(opt.height) +
         "\" fill=\"white\"/>\n";

    // axes and ticks
    s += "<g stroke=\"#444\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<line x1=\"" + px(0) + "\" y1=\"" + py(0) + "\" x2=\"" + px(1) + "\" y2=\"" + py(0) + "\"/>\n";
    s += "<line x1=\"" + px(0) + "\" y1=\"" + py(0) + "\" x2=\"" + px(0) + "\" y2=\"" + py(1) + "\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double t = i / 4.0;
        const auto label = detail::fixed(t);
        s += "<line x1=\"" + px(t) + "\" y1=\"" + py(0) + "\" x2=\"" + px(t) + "\" y2=\"" +
             detail::fixed(top + ph + 4) + "\"/>\n";
        s += "<text x=\"" + px(t) + "\" y=\"" + detail::fixed(top + ph + 18) +
             "\" text-anchor=\"middle\" stroke=\"none\">" + label + "</text>\n";
        s += "<line x1=\"" + detail::fixed(left - 4) + "\" y1=\"" + py(t) + "\" x2=\"" + px(0) + "\" y2=\"" + py(t) +
             "\"/>\n";
        s += "<text x=\"" + detail::fixed(left - 8) + "\" y=\"" + py(t) +
             "\" text-anchor=\"end\" dominant-baseline=\"middle\" stroke=\"none\">" + label + "</text>\n";
    }
    s += "<text x=\"" + px(0.5) + "\" y=\"" + detail::fixed(opt.height - 14) +
         "\" text-anchor=\"middle\" stroke=\"none\">complexity d/D</text>\n";
    s += "<text x=\"16\" y=\"" + py(0.5) + "\" text-anchor=\"middle\" stroke=\"none\" transform=\"rotate(-90 16 " +
         py(0.5) + ")\">accuracy 1 - e(d)</text>\n";
    s += "</g>\n";

    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& c = curves[i];
        const std::string color = palette[i % std::size(palette)];
        if (opt.bands && !c.lo.empty()) {
            std::string pts;
            for (std::size_t j = 0; j < c.x.size(); ++j) pts += px(c.x[j]) + "," + py(c.hi[j]) + " ";
            for (std::size_t j = c.x.size(); j-- > 0;) pts += px(c.x[j]) + "," + py(c.lo[j]) + " ";
            pts.pop_back();
            s += "<polygon class=\"band\" points=\"" + pts + "\" fill=\"" + color +
                 "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
        }
        std::string pts;
        for (std::size_t j = 0; j < c.x.size(); ++j) pts += px(c.x[j]) + "," + py(c.y[j]) + " ";
        pts.pop_back();
        s += "<polyline class=\"curve\" points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
             "\" stroke-width=\"1.5\"/>\n";
        const double ly = top + 12 + 18.0 * static_cast<double>(i);
        s += "<line x1=\"" + detail::fixed(left + pw + 12) + "\" y1=\"" + detail::fixed(ly) + "\" x2=\"" +
             detail::fixed(left + pw + 32) + "\" y2=\"" + detail::fixed(ly) + "\" stroke=\"" + color +
             "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + detail::fixed(left + pw + 38) + "\" y=\"" + detail::fixed(ly) +
             "\" dominant-baseline=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
             detail::xml_escape(c.label) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

} // namespace kanalysis
