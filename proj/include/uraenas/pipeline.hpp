#pragma once

// End-to-end commands shared by the command-line tool and the acceptance
// harness: data generation, search, ensemble evaluation, corruption, report
// and ensemble-size sweep. Each command writes a manifest next to its outputs.

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uraenas/config.hpp"
#include "uraenas/data.hpp"
#include "uraenas/metrics.hpp"
#include "uraenas/persist.hpp"
#include "uraenas/trainer.hpp"

namespace uraenas {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Data

inline ImageDataset with_split(ImageDataset ds, Split s) {
    ds.split = s;
    return ds;
}

inline ExperimentData load_experiment_data(const DataSpec& spec) {
    ExperimentData d;
    if (spec.source == "synth") {
        SynthSpec s;
        s.classes = spec.classes;
        s.height = spec.height;
        s.width = spec.width;
        s.noise = spec.noise;
        s.phase_jitter = spec.phase_jitter;
        s.signal_min = spec.signal_min;
        s.signal_max = spec.signal_max;
        s.clutter = spec.clutter;
        s.n = spec.n_train;
        s.split = Split::Train;
        d.train = synth_dataset(s, spec.seed);
        s.n = spec.n_val;
        s.split = Split::Val;
        d.val = synth_dataset(s, spec.seed);
        s.n = spec.n_test;
        s.split = Split::Test;
        d.test = synth_dataset(s, spec.seed);
    } else if (spec.source == "dir") {
        const fs::path root(spec.path);
        d.train = load_dataset(root / "train" / "data.bin");
        d.val = load_dataset(root / "val" / "data.bin");
        d.test = load_dataset(root / "test" / "data.bin");
        if (d.train.split != Split::Train || d.val.split != Split::Val || d.test.split != Split::Test)
            throw FormatError("dataset directory '" + spec.path + "': split tags do not match their folders");
    } else {
        // CIFAR-10 binary batches; the validation split is carved from the
        // tail of the training pool so the two never overlap.
        const fs::path root(spec.path);
        ImageDataset pool;
        for (int i = 1; i <= 5; ++i) {
            ImageDataset part = load_cifar_binary(root / ("data_batch_" + std::to_string(i) + ".bin"), Split::Train);
            if (i == 1) pool = std::move(part);
            else {
                pool.pixels.insert(pool.pixels.end(), part.pixels.begin(), part.pixels.end());
                pool.labels.insert(pool.labels.end(), part.labels.begin(), part.labels.end());
            }
        }
        ImageDataset test = load_cifar_binary(root / "test_batch.bin", Split::Test);
        if (spec.n_train + spec.n_val > pool.size()) throw ConfigError("n_train + n_val exceeds the CIFAR training pool", "/data/n_train");
        d.train = pool.slice(0, spec.n_train);
        d.val = with_split(pool.slice(pool.size() - spec.n_val, pool.size()), Split::Val);
        d.test = test.slice(0, spec.n_test);
        if (spec.downscale) {
            d.train = downscale2x(d.train);
            d.val = downscale2x(d.val);
            d.test = downscale2x(d.test);
        }
    }
    d.stats = compute_normalization(d.train);
    d.validate();
    return d;
}

inline std::string data_hash(const ExperimentData& d) {
    return sha256_hex(content_hash(d.train) + content_hash(d.val) + content_hash(d.test));
}

/// Corrupted copies of the (optionally truncated) test split.
inline CorruptedSuite evaluation_suite(const ExperimentData& d, const DataSpec& spec) {
    const ImageDataset base =
        spec.corrupted_limit > 0 ? d.test.slice(0, std::min(spec.corrupted_limit, d.test.size())) : d.test;
    return build_corrupted_suite(base, spec.corrupt_seed);
}

// ---------------------------------------------------------------------------
// Metrics of a finished run

struct CorruptionMetrics {
    CorruptionKind kind{};
    int severity = 0;
    CalibrationReport report;
};

struct RunMetrics {
    std::size_t members = 0;
    CalibrationReport clean;
    std::vector<CorruptionMetrics> corrupted;
    double c_accuracy = 0.0;
    double c_ece = 0.0;
    double c_nll = 0.0;
};

inline RunMetrics compute_metrics(const PredictionSet& clean, const std::vector<std::pair<std::pair<CorruptionKind, int>, PredictionSet>>& corrupted) {
    RunMetrics m;
    m.members = clean.size();
    std::vector<std::size_t> all(clean.size());
    std::iota(all.begin(), all.end(), 0);
    m.clean = evaluate_subset(clean, all);
    for (const auto& [key, preds] : corrupted) {
        CorruptionMetrics cm{key.first, key.second, evaluate_subset(preds, all)};
        m.c_accuracy += cm.report.accuracy;
        m.c_ece += cm.report.ece;
        m.c_nll += cm.report.nll;
        m.corrupted.push_back(std::move(cm));
    }
    if (!corrupted.empty()) {
        m.c_accuracy /= double(corrupted.size());
        m.c_ece /= double(corrupted.size());
        m.c_nll /= double(corrupted.size());
    }
    return m;
}

inline nlohmann::json to_json(const RunMetrics& m) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& c : m.corrupted)
        per.push_back({{"kind", corruption_name(c.kind)},
                       {"severity", c.severity},
                       {"accuracy", c.report.accuracy},
                       {"ece", c.report.ece},
                       {"nll", c.report.nll}});
    return {{"members", m.members},
            {"clean", to_json(m.clean)},
            {"corrupted", {{"accuracy", m.c_accuracy}, {"ece", m.c_ece}, {"nll", m.c_nll}, {"per_copy", per}}}};
}

/// Predictions on the clean test split and every corrupted copy.
struct RunPredictions {
    PredictionSet clean;
    std::vector<std::pair<std::pair<CorruptionKind, int>, PredictionSet>> corrupted;
};

inline RunPredictions predict_run(const RunConfig& cfg, std::span<const EnsembleMember> members, const ExperimentData& d,
                                  const CorruptedSuite& suite) {
    RunPredictions p;
    p.clean = predict_members(cfg, members, d.test, d.stats);
    for (const auto& [key, ds] : suite) p.corrupted.emplace_back(key, predict_members(cfg, members, ds, d.stats));
    return p;
}

// ---------------------------------------------------------------------------
// Commands

struct SynthDataOptions {
    SynthSpec spec{};
    std::size_t n_val = 0;
    std::size_t n_test = 0;
    std::uint64_t seed = 0;
};

/// Writes <out>/{train,val,test}/data.bin and a manifest.
inline nlohmann::json cmd_synth_data(const SynthDataOptions& opt, const fs::path& out) {
    const auto t0 = std::chrono::steady_clock::now();
    nlohmann::json hashes = nlohmann::json::object();
    for (auto [split, n] : {std::pair{Split::Train, opt.spec.n}, {Split::Val, opt.n_val}, {Split::Test, opt.n_test}}) {
        SynthSpec s = opt.spec;
        s.n = n;
        s.split = split;
        const ImageDataset ds = synth_dataset(s, opt.seed);
        save_dataset(out / std::string(split_name(split)) / "data.bin", ds);
        hashes[std::string(split_name(split))] = content_hash(ds);
    }
    const nlohmann::json cfg = {{"classes", opt.spec.classes}, {"n", opt.spec.n},          {"n_val", opt.n_val},
                                {"n_test", opt.n_test},        {"height", opt.spec.height}, {"width", opt.spec.width},
                                {"channels", opt.spec.channels}, {"noise", opt.spec.noise}, {"phase_jitter", opt.spec.phase_jitter},
                                {"signal_min", opt.spec.signal_min}, {"signal_max", opt.spec.signal_max},
                                {"clutter", opt.spec.clutter}};
    const auto m = make_manifest("synth-data", cfg, opt.seed, nlohmann::json::object(),
                                 {{"datasets", hashes}, {"train", "train/data.bin"}, {"val", "val/data.bin"}, {"test", "test/data.bin"}},
                                 1, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    write_json(out / "manifest.json", m);
    return m;
}

inline void save_search(const fs::path& out, const ExperimentConfig& cfg, const SearchResult& r, const std::string& dhash) {
    write_json(out / "config.json", to_json(cfg));
    write_json(out / "beta.json", beta_to_json(r.params, r.seed));
    write_text(out / "search_curve.csv", curve_csv(r.curve));
    write_double_blob(out / "supernet.bin", {{"weights", r.supernet_weights.size()}}, r.supernet_weights);
    write_json(out / "manifest.json",
               make_manifest("search", to_json(cfg), cfg.run.seed, {{"data_hash", dhash}},
                             {{"beta", "beta.json"}, {"curve", "search_curve.csv"}, {"supernet", "supernet.bin"},
                              {"config", "config.json"}},
                             cfg.run.threads, r.seconds));
}

inline SearchResult load_search(const fs::path& dir, std::string* dhash = nullptr) {
    SearchResult r;
    const auto beta = read_json(dir / "beta.json");
    r.params = beta_from_json(beta);
    r.seed = beta.value("seed", std::uint64_t(0));
    nlohmann::json h;
    r.supernet_weights = read_double_blob(dir / "supernet.bin", h);
    if (dhash) *dhash = read_json(dir / "manifest.json").at("inputs").at("data_hash").get<std::string>();
    return r;
}

inline SearchResult cmd_search(const ExperimentConfig& cfg, const fs::path& out) {
    const ExperimentData d = load_experiment_data(cfg.data);
    SearchResult r = search_phase(cfg.run, d);
    save_search(out, cfg, r, data_hash(d));
    return r;
}

/// Retrains the ensemble from a finished search, writes members, predictions,
/// per-branch curves and metrics.json.
inline RunMetrics cmd_eval_ensemble(const ExperimentConfig& cfg, const fs::path& search_dir, const fs::path& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentData d = load_experiment_data(cfg.data);
    const std::string dh = data_hash(d);
    std::string search_hash;
    const SearchResult search = load_search(search_dir, &search_hash);
    if (search_hash != dh) throw ConfigError("data differs from the data the search ran on", "/data");
    const EvalResult ev = eval_phase(cfg.run, search, d);
    const CorruptedSuite suite = evaluation_suite(d, cfg.data);
    const RunPredictions preds = predict_run(cfg.run, ev.members, d, suite);
    const RunMetrics metrics = compute_metrics(preds.clean, preds.corrupted);

    write_json(out / "config.json", to_json(cfg));
    save_members(out, ev.members);
    save_predictions(out / "predictions" / "clean.bin", preds.clean);
    for (const auto& [key, p] : preds.corrupted)
        save_predictions(out / "predictions" / (std::string(corruption_name(key.first)) + "-" + std::to_string(key.second) + ".bin"), p);
    for (std::size_t m2 = 0; m2 < ev.curves.size(); ++m2)
        write_text(out / ("eval_curve_" + std::to_string(m2) + ".csv"), curve_csv(ev.curves[m2]));
    nlohmann::json mj = to_json(metrics);
    mj["variant"] = variant_name(cfg.run.variant);
    mj["seed"] = cfg.run.seed;
    mj["factorization"] = {{"architectures", cfg.run.architecture_count()},
                           {"M_theta", cfg.run.M_theta},
                           {"M_w", cfg.run.M_w},
                           {"cycles", cfg.run.csgld.cycles},
                           {"snapshots_per_cycle", cfg.run.M_w / cfg.run.csgld.cycles},
                           {"ensemble_cap", cfg.run.ensemble_cap}};
    write_json(out / "metrics.json", mj);
    write_text(out / "reliability_clean.csv", reliability_csv(metrics.clean));
    write_json(out / "manifest.json",
               make_manifest("eval-ensemble", to_json(cfg), cfg.run.seed,
                             {{"data_hash", dh}, {"search", fs::absolute(search_dir).string()},
                              {"beta_hash", sha256_hex(read_text(search_dir / "beta.json"))}},
                             {{"members", "members.json"}, {"snapshots", "snapshots.bin"}, {"metrics", "metrics.json"},
                              {"predictions", "predictions/"}},
                             cfg.run.threads, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
    return metrics;
}

/// Reads <data>/test/data.bin (or <data>/data.bin) and writes the corrupted
/// suite as <out>/<kind>/<severity>/data.bin.
inline nlohmann::json cmd_corrupt(const fs::path& data, const fs::path& out, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path src = fs::exists(data / "test" / "data.bin") ? data / "test" / "data.bin" : data / "data.bin";
    const ImageDataset test = load_dataset(src);
    const CorruptedSuite suite = build_corrupted_suite(test, seed);
    save_corrupted_suite(out, suite);
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [key, ds] : suite)
        hashes[std::string(corruption_name(key.first)) + "/" + std::to_string(key.second)] = content_hash(ds);
    const auto m = make_manifest("corrupt", {{"table_version", 1}}, seed,
                                 {{"source", fs::absolute(data).string()}, {"test", content_hash(test)}}, {{"copies", hashes}}, 1,
                                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    write_json(out / "manifest.json", m);
    return m;
}

/// Manifest path for commands whose output is a single file.
inline fs::path sidecar_manifest(const fs::path& out) {
    fs::path m = out;
    m += ".manifest.json";
    return m;
}

/// One row per variant, averaged over the given runs, in the column layout
/// Method, Ensembles, Acc, ECE, NLL, cAcc, cECE, cNLL. A `.json` output
/// gets JSON; anything else gets CSV.
inline std::string cmd_report(const std::vector<fs::path>& runs, const fs::path& out) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Acc {
        std::size_t runs = 0;
        double members = 0, acc = 0, ece = 0, nll = 0, cacc = 0, cece = 0, cnll = 0;
    };
    const std::vector<std::string> order = {"DrNAS", "UraeNAS-w", "UraeNAS-a", "UraeNAS"};
    std::map<std::string, Acc> rows;
    std::string long_csv = "variant,seed,dataset,corruption,severity,ensemble_size,accuracy,ece,nll\n";
    std::vector<fs::path> sorted = runs;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& dir : sorted) {
        const auto m = read_json(dir / "metrics.json");
        const std::string v = m.at("variant");
        const std::string seed = std::to_string(m.at("seed").get<std::uint64_t>());
        const std::string size = std::to_string(m.at("members").get<std::size_t>());
        Acc& a = rows[v];
        a.runs++;
        a.members += m.at("members").get<double>();
        a.acc += m.at("clean").at("accuracy").get<double>();
        a.ece += m.at("clean").at("ece").get<double>();
        a.nll += m.at("clean").at("nll").get<double>();
        a.cacc += m.at("corrupted").at("accuracy").get<double>();
        a.cece += m.at("corrupted").at("ece").get<double>();
        a.cnll += m.at("corrupted").at("nll").get<double>();
        long_csv += v + "," + seed + ",clean,none,0," + size + "," + fmt_double(m["clean"]["accuracy"]) + "," +
                    fmt_double(m["clean"]["ece"]) + "," + fmt_double(m["clean"]["nll"]) + "\n";
        for (const auto& c : m.at("corrupted").at("per_copy"))
            long_csv += v + "," + seed + ",corrupted," + c.at("kind").get<std::string>() + "," +
                        std::to_string(c.at("severity").get<int>()) + "," + size + "," + fmt_double(c["accuracy"]) + "," +
                        fmt_double(c["ece"]) + "," + fmt_double(c["nll"]) + "\n";
    }
    nlohmann::json table = nlohmann::json::array();
    std::string csv = "method,runs,ensembles,acc,ece,nll,cacc,cece,cnll\n";
    auto emit = [&](const std::string& v, const Acc& a) {
        const double n = double(a.runs);
        table.push_back({{"method", v}, {"runs", a.runs}, {"ensembles", a.members / n}, {"acc", a.acc / n},
                         {"ece", a.ece / n}, {"nll", a.nll / n}, {"cacc", a.cacc / n}, {"cece", a.cece / n},
                         {"cnll", a.cnll / n}});
        csv += v + "," + std::to_string(a.runs) + "," + fmt_double(a.members / n) + "," + fmt_double(a.acc / n) + "," +
               fmt_double(a.ece / n) + "," + fmt_double(a.nll / n) + "," + fmt_double(a.cacc / n) + "," +
               fmt_double(a.cece / n) + "," + fmt_double(a.cnll / n) + "\n";
    };
    for (const auto& v : order)
        if (rows.count(v)) emit(v, rows[v]);
    const bool as_json = out.extension() == ".json";
    const std::string text = as_json ? nlohmann::json{{"rows", table}}.dump(2) + "\n" : csv;
    write_text(out, text);
    fs::path long_path = out;
    long_path.replace_extension(".long.csv");
    write_text(long_path, long_csv);
    nlohmann::json inputs = nlohmann::json::array(), run_list = nlohmann::json::array();
    for (const auto& dir : sorted) {
        run_list.push_back(fs::absolute(dir).string());
        inputs.push_back({{"run", fs::absolute(dir).string()}, {"metrics_hash", sha256_hex(read_text(dir / "metrics.json"))}});
    }
    write_json(sidecar_manifest(out),
               make_manifest("report", {{"runs", run_list}}, 0, inputs,
                             {{"report", out.filename().string()}, {"long", long_path.filename().string()}}, 1,
                             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
    return text;
}

/// Ensemble-size sweep on the clean predictions of one run (or, with
/// `corrupted`, metrics averaged over every corrupted copy). Writes CSV.
inline std::vector<SweepPoint> cmd_sweep(const fs::path& run, std::span<const std::size_t> sizes, const fs::path& out,
                                         bool corrupted = false, std::uint64_t seed = 0) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<SweepPoint> pts;
    if (!corrupted) {
        pts = ensemble_size_sweep(load_predictions(run / "predictions" / "clean.bin"), sizes, seed);
    } else {
        std::size_t copies = 0;
        for (auto kind : kAllCorruptions)
            for (int s = 1; s <= 5; ++s) {
                const fs::path p = run / "predictions" / (std::string(corruption_name(kind)) + "-" + std::to_string(s) + ".bin");
                if (!fs::exists(p)) continue;
                const auto one = ensemble_size_sweep(load_predictions(p), sizes, seed);
                if (pts.empty()) pts.assign(one.size(), SweepPoint{});
                for (std::size_t i = 0; i < one.size(); ++i) {
                    pts[i].size = one[i].size;
                    pts[i].subsets = one[i].subsets;
                    pts[i].accuracy += one[i].accuracy;
                    pts[i].ece += one[i].ece;
                    pts[i].nll += one[i].nll;
                }
                ++copies;
            }
        if (copies == 0) throw IoError("no corrupted predictions under '" + run.string() + "'");
        for (auto& p : pts) {
            p.accuracy /= double(copies);
            p.ece /= double(copies);
            p.nll /= double(copies);
        }
    }
    write_text(out, sweep_csv(pts, corrupted ? "corrupted" : "clean"));
    const nlohmann::json size_list(std::vector<std::size_t>(sizes.begin(), sizes.end()));
    write_json(sidecar_manifest(out),
               make_manifest("sweep", {{"run", fs::absolute(run).string()}, {"sizes", size_list}, {"corrupted", corrupted}},
                             seed, {{"clean_hash", sha256_hex(read_text(run / "predictions" / "clean.bin"))}},
                             {{"sweep", out.filename().string()}}, 1,
                             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
    return pts;
}

/// Re-executes the command recorded in a manifest, writing to `out` (a
/// directory, or a file for `report` and `sweep`).
inline void rerun_manifest(const fs::path& manifest, const fs::path& out, int threads_override = 0) {
    try {
        const auto m = read_json(manifest);
        const std::string cmd = m.at("command");
        if (cmd == "search" || cmd == "eval-ensemble") {
            ExperimentConfig cfg = config_from_json(m.at("config"));
            if (threads_override > 0) cfg.run.threads = threads_override;
            if (cmd == "search") {
                cmd_search(cfg, out);
            } else {
                cmd_eval_ensemble(cfg, m.at("inputs").at("search").get<std::string>(), out);
            }
        } else if (cmd == "synth-data") {
            const auto& c = m.at("config");
            SynthDataOptions o;
            o.spec.classes = c.at("classes");
            o.spec.n = c.at("n");
            o.spec.height = c.at("height");
            o.spec.width = c.at("width");
            o.spec.channels = c.at("channels");
            o.spec.noise = c.at("noise");
            o.spec.phase_jitter = c.at("phase_jitter");
            o.spec.signal_min = c.at("signal_min");
            o.spec.signal_max = c.at("signal_max");
            o.spec.clutter = c.at("clutter");
            o.n_val = c.at("n_val");
            o.n_test = c.at("n_test");
            o.seed = m.at("seed");
            cmd_synth_data(o, out);
        } else if (cmd == "corrupt") {
            const auto& src = m.at("inputs").at("source");
            cmd_corrupt(src.get<std::string>(), out, m.at("seed"));
        } else if (cmd == "report") {
            std::vector<fs::path> runs;
            for (const auto& r : m.at("config").at("runs")) runs.emplace_back(r.get<std::string>());
            cmd_report(runs, out);
        } else if (cmd == "sweep") {
            const auto& c = m.at("config");
            const auto sizes = c.at("sizes").get<std::vector<std::size_t>>();
            cmd_sweep(c.at("run").get<std::string>(), sizes, out, c.at("corrupted").get<bool>(), m.at("seed"));
        } else {
            throw UsageError("manifest command '" + cmd + "' cannot be re-run");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest '" + manifest.string() + "': " + e.what());
    }
}

} // namespace uraenas
