// ka: command-line front end for kernel analysis.
// Exit codes: 0 success, 1 internal error, 2 bad input or usage.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kanalysis/dataset.hpp"
#include "kanalysis/error.hpp"
#include "kanalysis/extrapolation.hpp"
#include "kanalysis/kernel.hpp"
#include "kanalysis/neural.hpp"
#include "kanalysis/protocol.hpp"
#include "kanalysis/report.hpp"
#include "kanalysis/search.hpp"
#include "kanalysis/synth.hpp"
#include "kanalysis/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace kanalysis;

namespace {

struct Common {
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
    unsigned workers = 0;
    std::vector<double> quantiles = default_quantiles();
    std::string encoding = "standardized";
    bool center = false;

    AnalysisConfig analysis() const {
        AnalysisConfig cfg;
        cfg.quantiles = quantiles;
        cfg.encoding = parse_encoding(encoding);
        cfg.center = center;
        cfg.workers = effective_workers();
        return cfg;
    }

    unsigned effective_workers() const {
        return workers != 0 ? workers : std::max(1u, std::thread::hardware_concurrency());
    }

    bool seed_given() const { return seed_opt && seed_opt->count() > 0; }

    // worker count is left out on purpose: outputs do not depend on it
    json config(const std::string& command, std::uint64_t effective_seed) const {
        return {{"version", kVersion},        {"command", command},   {"seed", effective_seed},
                {"quantiles", analysis().quantiles}, {"encoding", encoding}, {"center", center}};
    }
    json config(const std::string& command) const { return config(command, seed); }
};

void add_seed(CLI::App* app, Common& c) {
    c.seed_opt = app->add_option("--seed", c.seed, "Random seed (default: $KA_SEED, else 0)")->envname("KA_SEED");
}

void add_workers(CLI::App* app, Common& c) {
    app->add_option("--workers", c.workers, "Worker threads (0 = all cores); results do not depend on it")
        ->check(CLI::NonNegativeNumber);
}

void add_analysis(CLI::App* app, Common& c) {
    app->add_option("--quantiles", c.quantiles, "Bandwidth candidates as quantiles of pairwise distances")
        ->delimiter(',');
    app->add_option("--encoding", c.encoding, "Label encoding: standardized, signed or binary")
        ->check(CLI::IsMember({"standardized", "signed", "binary"}));
    app->add_flag("--center", c.center, "Use the centered kernel");
}

FeatureFormat format_for(const std::string& flag, const fs::path& path) {
    return flag == "auto" ? infer_format(path) : parse_format(flag);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory: " + dir.string());
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) ensure_dir(file.parent_path());
}

void write_json(const fs::path& path, const json& j) {
    ensure_parent(path);
    detail::write_file(path.string(), j.dump(2) + "\n");
}

std::vector<std::size_t> parse_grid(const std::vector<std::string>& raw) {
    std::vector<std::size_t> out;
    for (const auto& s : raw) {
        auto v = detail::parse_int(s);
        if (!v || *v < 1) throw InputError("site-count grid entries must be positive integers, got '" + s + "'");
        out.push_back(static_cast<std::size_t>(*v));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string features, labels, format = "auto";
    fs::path out;
};

int cmd_eval(const EvalArgs& a, const Common& c) {
    auto fs = load_feature_matrix(a.features, format_for(a.format, a.features));
    auto ad = align(fs, load_labels(a.labels));
    auto cfg = c.config("eval");
    cfg["features"] = a.features;
    cfg["labels"] = a.labels;
    const auto result = evaluate(ad, c.analysis());
    ensure_dir(a.out);
    detail::write_file((a.out / "curve.csv").string(), curve_csv(result.curve, cfg));
    write_json(a.out / "summary.json", summary_json(result, ad, cfg));
    std::cout << "auc " << detail::format_double(result.auc) << "\n";
    return 0;
}

struct ProtocolArgs {
    std::string manifest;
    std::size_t subsets = 10;
    double fraction = 0.8;
    fs::path out;
    std::string envelopes;
    bool no_curves = false;
};

int cmd_protocol(const ProtocolArgs& a, const Common& c) {
    const auto m = load_manifest(a.manifest);
    const std::uint64_t seed = c.seed_given() ? c.seed : m.seed.value_or(c.seed);
    const auto report = run_manifest(m, a.subsets, a.fraction, seed, c.analysis());
    auto j = to_json(report, !a.no_curves);
    auto cfg = c.config("protocol", seed);
    cfg["manifest"] = a.manifest;
    cfg["subsets"] = a.subsets;
    cfg["fraction"] = a.fraction;
    j["run"] = cfg;
    write_json(a.out, j);
    if (!a.envelopes.empty()) {
        ensure_dir(a.envelopes);
        for (const auto& l : report.levels)
            detail::write_file((fs::path(a.envelopes) / ("envelope_" + to_string(l.level) + ".csv")).string(),
                               envelope_csv(l, cfg));
    }
    for (const auto& l : report.levels)
        std::cout << to_string(l.level) << " auc " << detail::format_double(l.auc_mean) << " +- "
                  << detail::format_double(l.auc_std) << "\n";
    return 0;
}

struct CompareArgs {
    std::string a, b, level = "medium", out;
    std::size_t permutations = 10000;
};

int cmd_compare(const CompareArgs& a, const Common& c) {
    auto read = [](const std::string& path) {
        try {
            return protocol_report_from_json(nlohmann::json::parse(detail::read_file(path)));
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(path + ": " + e.what());
        }
    };
    const auto ra = read(a.a), rb = read(a.b);
    const auto res = compare(ra, rb, parse_variation(a.level), c.seed, a.permutations);
    auto j = to_json(res);
    auto cfg = c.config("compare");
    cfg["a"] = a.a;
    cfg["b"] = a.b;
    cfg["max_permutations"] = a.permutations;
    j["config"] = cfg;
    if (a.out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json(a.out, j);
    return 0;
}

struct NeuralArgs {
    std::string spikes, level = "medium", zero_variance = "error", format = "csv";
    double epsilon = 1e-12;
    std::size_t low_splits = 3;
    fs::path out;
};

int cmd_neural(const NeuralArgs& a, const Common& c) {
    PreprocConfig pc;
    pc.level = parse_variation(a.level);
    pc.low_splits = a.low_splits;
    pc.zero_variance = parse_zero_variance_policy(a.zero_variance);
    pc.epsilon = a.epsilon;
    const auto nf = build_neural_features(load_repetition_table(a.spikes), pc);
    auto cfg = c.config("neural");
    cfg["spikes"] = a.spikes;
    cfg["level"] = to_string(pc.level);
    cfg["low_splits"] = pc.low_splits;
    cfg["zero_variance"] = to_string(pc.zero_variance);
    cfg["epsilon"] = pc.epsilon;
    ensure_dir(a.out);
    const auto fmt = parse_format(a.format);
    const auto path = a.out / (fmt == FeatureFormat::Csv ? "features.csv" : "features.json");
    save_feature_matrix(nf.features, path, fmt, cfg);
    json info;
    info["config"] = cfg;
    info["n_images"] = nf.features.rows();
    info["sites"] = nf.sites;
    info["warnings"] = nf.warnings;
    write_json(a.out / "neural.json", info);
    for (const auto& w : nf.warnings) std::cerr << "warning: " << w << "\n";
    return 0;
}

struct ExtrapolateArgs {
    std::string features, labels, format = "auto";
    std::vector<std::string> grid;
    std::size_t repeats = 10;
    bool weighted = false;
    std::vector<double> predict;
    fs::path out;
};

int cmd_extrapolate(const ExtrapolateArgs& a, const Common& c) {
    auto fs = load_feature_matrix(a.features, format_for(a.format, a.features));
    auto ad = align(fs, load_labels(a.labels));
    auto grid = parse_grid(a.grid);
    const auto sc = subsample_sites_auc(ad, grid, a.repeats, c.seed, c.analysis());
    auto cfg = c.config("extrapolate");
    cfg["features"] = a.features;
    cfg["labels"] = a.labels;
    cfg["repeats"] = a.repeats;
    cfg["weighted"] = a.weighted;
    json j;
    j["config"] = cfg;
    j["sampling"] = to_json(sc);
    SaturationOptions opt;
    opt.weighted = a.weighted;
    try {
        const auto fit = fit_saturation(sc, opt);
        j["fit"] = to_json(fit);
        json pred = json::array();
        for (double t : a.predict) pred.push_back({{"t", t}, {"auc", predict_auc(fit, t)}});
        j["predictions"] = pred;
        std::cout << "asymptote " << detail::format_double(fit.a) << "\n";
    } catch (const InputError& e) {
        if (!a.predict.empty()) throw;
        j["fit"] = nullptr;
        j["fit_error"] = e.what();
        std::cerr << "warning: no saturation fit: " << e.what() << "\n";
    }
    ensure_dir(a.out);
    detail::write_file((a.out / "sampling.csv").string(), detail::comment_block(cfg) + sampling_csv(sc));
    write_json(a.out / "extrapolation.json", j);
    return 0;
}

struct SynthArgs {
    std::string kind = "clusters", format = "csv", variation = "unspecified";
    std::size_t k = 7, n_per_class = 70, p = 0;
    double noise = 0.1, separation = 1.0;
    std::vector<std::string> levels; // level:noise
    fs::path out;
};

int cmd_synth(const SynthArgs& a, const Common& c) {
    SynthSpec base;
    base.kind = parse_synth_kind(a.kind);
    base.k = a.k;
    base.n_per_class = a.n_per_class;
    base.p = a.p;
    base.noise = a.noise;
    base.separation = a.separation;
    base.seed = c.seed;

    std::vector<std::pair<Variation, double>> levels;
    if (a.levels.empty()) {
        levels.emplace_back(parse_variation(a.variation), a.noise);
    } else {
        for (const auto& spec : a.levels) {
            const auto colon = spec.find(':');
            if (colon == std::string::npos) throw InputError("--levels entries look like low:0.1, got '" + spec + "'");
            auto noise = detail::parse_double(spec.substr(colon + 1));
            if (!noise) throw InputError("bad noise in --levels entry '" + spec + "'");
            levels.emplace_back(parse_variation(spec.substr(0, colon)), *noise);
        }
    }

    auto cfg = c.config("synth");
    cfg["kind"] = to_string(base.kind);
    cfg["k"] = base.k;
    cfg["n_per_class"] = base.n_per_class;
    cfg["p"] = base.dimension();
    cfg["separation"] = base.separation;
    json lv = json::array();
    for (auto [v, n] : levels) lv.push_back({{"variation", to_string(v)}, {"noise", n}});
    cfg["levels"] = lv;

    ensure_dir(a.out);
    const auto fmt = parse_format(a.format);
    DatasetManifest m;
    m.name = "synthetic-" + to_string(base.kind);
    m.seed = c.seed;
    m.labels = "labels.csv";
    std::vector<std::string> ids, classes;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        auto spec = base;
        spec.variation = levels[i].first;
        spec.noise = levels[i].second;
        spec.id_prefix = levels.size() == 1 ? "img" : to_string(spec.variation) + "_";
        auto [fset, lf] = generate(spec);
        const std::string stem = levels.size() == 1 ? "features" : "features_" + to_string(spec.variation);
        const std::string file = stem + (fmt == FeatureFormat::Csv ? ".csv" : ".json");
        save_feature_matrix(fset, a.out / file, fmt, cfg);
        m.entries.push_back({spec.variation, file, fmt});
        ids.insert(ids.end(), lf.image_ids().begin(), lf.image_ids().end());
        classes.insert(classes.end(), lf.classes().begin(), lf.classes().end());
    }
    save_labels(LabelFrame(std::move(ids), std::move(classes)), a.out / "labels.csv", cfg);
    save_manifest(m, a.out / "manifest.json", cfg);
    return 0;
}

struct SearchArgs {
    std::string space;
    std::size_t n = 30;
    fs::path out;
    std::string summary;
    bool resume = false;
};

int cmd_search(const SearchArgs& a, const Common& c) {
    const auto space = a.space.empty() ? SyntheticFamily::default_space() : load_param_space(a.space);
    SyntheticFamily family;
    family.world_seed = c.seed;
    SearchOptions opt;
    opt.analysis = c.analysis();
    opt.workers = c.effective_workers();
    opt.log = a.out;
    opt.resume = a.resume;
    ensure_parent(a.out);
    const auto records = random_search(space, family.evaluator(), a.n, c.seed, opt);
    auto summary = search_summary(records);
    auto cfg = c.config("search");
    cfg["space"] = space.to_json();
    cfg["n_draws"] = a.n;
    cfg["family"] = "synthetic";
    summary["config"] = cfg;
    if (!a.summary.empty()) write_json(a.summary, summary);
    std::size_t ok = 0;
    for (const auto& r : records) ok += r.ok ? 1 : 0;
    std::cout << ok << "/" << records.size() << " draws ok\n";
    return 0;
}

struct PlotArgs {
    std::vector<std::string> curves, labels;
    fs::path out;
    std::string title = "Kernel analysis";
    bool no_bands = false;
};

int cmd_plot(const PlotArgs& a, const Common& c) {
    if (a.curves.empty()) throw InputError("plot needs at least one curve file");
    if (!a.labels.empty() && a.labels.size() != a.curves.size())
        throw InputError("--labels needs one label per curve file");
    std::vector<PlotCurve> curves;
    json sources = json::array();
    for (std::size_t i = 0; i < a.curves.size(); ++i) {
        auto pc = load_curve_csv(a.curves[i]);
        if (!a.labels.empty()) pc.label = a.labels[i];
        sources.push_back({{"file", a.curves[i]}, {"label", pc.label}, {"config", pc.config}});
        curves.push_back(std::move(pc));
    }
    auto cfg = c.config("plot");
    cfg["curves"] = sources;
    PlotOptions opt;
    opt.bands = !a.no_bands;
    opt.title = a.title;
    ensure_parent(a.out);
    detail::write_file(a.out.string(), render_svg(curves, cfg, opt));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ka: kernel analysis of image representations"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    Common common;
    std::function<int()> run;

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Loss curve and AUC for one feature set");
    eval->add_option("--features", ev.features, "Feature file (.csv, or .json sidecar / .f64 for binary)")->required();
    eval->add_option("--labels", ev.labels, "Label CSV image_id,class")->required();
    eval->add_option("--format", ev.format, "auto, csv or binary")->check(CLI::IsMember({"auto", "csv", "binary"}));
    eval->add_option("--out", ev.out, "Output directory for curve.csv and summary.json")->required();
    add_seed(eval, common);
    add_workers(eval, common);
    add_analysis(eval, common);
    eval->callback([&] { run = [&] { return cmd_eval(ev, common); }; });

    ProtocolArgs pr;
    auto* protocol = app.add_subcommand("protocol", "Subset protocol over every level in a manifest");
    protocol->add_option("--manifest", pr.manifest, "Dataset manifest JSON")->required();
    protocol->add_option("--subsets", pr.subsets, "Number of subsets")->check(CLI::PositiveNumber);
    protocol->add_option("--fraction", pr.fraction, "Fraction of each class per subset")->check(CLI::Range(0.0, 1.0));
    protocol->add_option("--out", pr.out, "Report JSON path")->required();
    protocol->add_option("--envelopes", pr.envelopes, "Also write envelope_<level>.csv files here");
    protocol->add_flag("--no-curves", pr.no_curves, "Omit per-subset curves from the report");
    add_seed(protocol, common);
    add_workers(protocol, common);
    add_analysis(protocol, common);
    protocol->callback([&] {
        common.seed_opt = protocol->get_option("--seed");
        run = [&] { return cmd_protocol(pr, common); };
    });

    CompareArgs cp;
    auto* cmp = app.add_subcommand("compare", "Paired permutation test between two protocol reports");
    cmp->add_option("--a", cp.a, "First protocol report")->required();
    cmp->add_option("--b", cp.b, "Second protocol report")->required();
    cmp->add_option("--level", cp.level, "Variation level to compare");
    cmp->add_option("--permutations", cp.permutations, "Sign patterns to sample when exact enumeration is too large")
        ->check(CLI::PositiveNumber);
    cmp->add_option("--out", cp.out, "Write JSON here instead of stdout");
    add_seed(cmp, common);
    cmp->callback([&] { run = [&] { return cmd_compare(cp, common); }; });

    NeuralArgs nr;
    auto* neural = app.add_subcommand("neural", "Features from repetition-level spike counts");
    neural->add_option("--spikes", nr.spikes, "Repetition CSV")->required();
    neural->add_option("--level", nr.level, "Variation level (low normalizes per repetition set)");
    neural->add_option("--low-splits", nr.low_splits, "Repetition sets for the low level")->check(CLI::PositiveNumber);
    neural->add_option("--zero-variance", nr.zero_variance, "error, epsilon or drop_site")
        ->check(CLI::IsMember({"error", "epsilon", "drop_site"}));
    neural->add_option("--epsilon", nr.epsilon, "Floor on the standard deviation for --zero-variance epsilon");
    neural->add_option("--format", nr.format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));
    neural->add_option("--out", nr.out, "Output directory")->required();
    add_seed(neural, common);
    neural->callback([&] { run = [&] { return cmd_neural(nr, common); }; });

    ExtrapolateArgs ex;
    auto* extra = app.add_subcommand("extrapolate", "AUC versus number of sites, with a saturating fit");
    extra->add_option("--features", ex.features, "Feature file")->required();
    extra->add_option("--labels", ex.labels, "Label CSV")->required();
    extra->add_option("--format", ex.format, "auto, csv or binary")->check(CLI::IsMember({"auto", "csv", "binary"}));
    extra->add_option("--grid", ex.grid, "Site counts, e.g. 4,8,16,32")->delimiter(',')->required();
    extra->add_option("--repeats", ex.repeats, "Random site subsets per count")->check(CLI::PositiveNumber);
    extra->add_flag("--weighted", ex.weighted, "Weight the fit by 1/std");
    extra->add_option("--predict", ex.predict, "Site counts to predict from the fit")->delimiter(',');
    extra->add_option("--out", ex.out, "Output directory")->required();
    add_seed(extra, common);
    add_workers(extra, common);
    add_analysis(extra, common);
    extra->callback([&] { run = [&] { return cmd_extrapolate(ex, common); }; });

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with a manifest");
    synth->add_option("--kind", sy.kind, "onehot, clusters or noise")
        ->check(CLI::IsMember({"onehot", "clusters", "noise"}));
    synth->add_option("--k", sy.k, "Classes");
    synth->add_option("--n-per-class", sy.n_per_class, "Images per class");
    synth->add_option("--p", sy.p, "Feature dimension (0: k for onehot, 32 otherwise)");
    synth->add_option("--noise", sy.noise, "Within-class noise scale");
    synth->add_option("--separation", sy.separation, "Distance of class centers from the origin");
    synth->add_option("--variation", sy.variation, "Variation label for a single-level dataset");
    synth->add_option("--levels", sy.levels, "Several levels as level:noise, e.g. low:0.1,medium:0.5")->delimiter(',');
    synth->add_option("--format", sy.format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));
    synth->add_option("--out", sy.out, "Output directory")->required();
    add_seed(synth, common);
    synth->callback([&] { run = [&] { return cmd_synth(sy, common); }; });

    SearchArgs se;
    auto* search = app.add_subcommand("search", "Random search over the built-in synthetic model family");
    search->add_option("--space", se.space, "Parameter space JSON (default: noise, dim, rotation)");
    search->add_option("--n", se.n, "Number of draws")->check(CLI::PositiveNumber);
    search->add_option("--out", se.out, "JSON-lines record file")->required();
    search->add_option("--summary", se.summary, "Summary JSON with transfer correlations and the top draw");
    search->add_flag("--resume", se.resume, "Skip draws already present in --out");
    add_seed(search, common);
    add_workers(search, common);
    add_analysis(search, common);
    search->callback([&] { run = [&] { return cmd_search(se, common); }; });

    PlotArgs pl;
    auto* plot = app.add_subcommand("plot", "SVG of accuracy against d/D for curve or envelope CSVs");
    plot->add_option("curves", pl.curves, "Curve CSV files");
    plot->add_option("--labels", pl.labels, "Legend labels, one per file")->delimiter(',');
    plot->add_option("--title", pl.title, "Plot title");
    plot->add_flag("--no-bands", pl.no_bands, "Do not draw min/max bands");
    plot->add_option("--out", pl.out, "SVG path")->required();
    plot->callback([&] { run = [&] { return cmd_plot(pl, common); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        return run ? run() : 2;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
