// uraenas command-line driver.
//
// Exit codes: 0 success, 1 verify failure, 2 usage or config error,
// 3 I/O or format error, 4 training failure.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uraenas/allocator.hpp"
#include "uraenas/uraenas.hpp"
#include "uraenas/verify.hpp"

namespace fs = std::filesystem;
using namespace uraenas;

namespace {

int resolve_threads(int flag, int from_config) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("URAENAS_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
        throw ConfigError("URAENAS_THREADS must be a positive integer", "/threads");
    }
    return from_config;
}

ExperimentConfig load_config(const std::string& path, int threads_flag) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what(), "");
    }
    ExperimentConfig cfg = config_from_json(j);
    cfg.run.threads = resolve_threads(threads_flag, cfg.run.threads);
    return cfg;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const std::size_t next = s.find(',', pos);
        const std::string tok = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        try {
            std::size_t used = 0;
            const long v = std::stol(tok, &used);
            if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
            out.push_back(std::size_t(v));
        } catch (const std::exception&) {
            throw UsageError("--sizes: '" + tok + "' is not a positive integer");
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    if (out.empty()) throw UsageError("--sizes must list at least one size");
    return out;
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Uncertainty-aware differentiable architecture search with joint architecture/weight ensembles"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "Generate the synthetic image dataset");
    SynthDataOptions so;
    std::string synth_out;
    synth->add_option("--classes", so.spec.classes, "Number of classes")->check(CLI::Range(1, 10));
    synth->add_option("--n", so.spec.n, "Training images")->required();
    synth->add_option("--n-val", so.n_val, "Validation images");
    synth->add_option("--n-test", so.n_test, "Test images");
    synth->add_option("--height", so.spec.height)->check(CLI::PositiveNumber);
    synth->add_option("--width", so.spec.width)->check(CLI::PositiveNumber);
    synth->add_option("--noise", so.spec.noise, "Pixel noise standard deviation");
    synth->add_option("--signal-min", so.spec.signal_min);
    synth->add_option("--signal-max", so.spec.signal_max);
    synth->add_option("--clutter", so.spec.clutter);
    synth->add_option("--seed", so.seed);
    synth->add_option("--out", synth_out)->required();

    // search
    auto* search = app.add_subcommand("search", "Learn Dirichlet concentrations and supernet weights");
    std::string search_config, search_out;
    int threads = 0;
    search->add_option("--config", search_config)->required();
    search->add_option("--out", search_out)->required();
    search->add_option("--threads", threads)->check(CLI::PositiveNumber);

    // eval-ensemble
    auto* eval = app.add_subcommand("eval-ensemble", "Retrain sampled architectures and collect the ensemble");
    std::string eval_config, eval_search, eval_out;
    eval->add_option("--config", eval_config)->required();
    eval->add_option("--search", eval_search, "Directory written by `search`")->required();
    eval->add_option("--out", eval_out)->required();
    eval->add_option("--threads", threads)->check(CLI::PositiveNumber);

    // corrupt
    auto* corrupt_cmd = app.add_subcommand("corrupt", "Write the 30 corrupted copies of a test split");
    std::string corrupt_data, corrupt_out;
    std::uint64_t corrupt_seed = 0;
    corrupt_cmd->add_option("--data", corrupt_data, "Dataset directory (uses test/data.bin) or data.bin file")->required();
    corrupt_cmd->add_option("--out", corrupt_out)->required();
    corrupt_cmd->add_option("--seed", corrupt_seed);

    // report
    auto* report = app.add_subcommand("report", "Aggregate eval runs into a method table");
    std::vector<std::string> report_runs;
    std::string report_out;
    report->add_option("--runs", report_runs, "Eval output directories")->required()->expected(1, -1);
    report->add_option("--out", report_out, "Output .csv or .json")->required();

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Metrics as a function of ensemble size");
    std::string sweep_run, sweep_sizes = "1,2,3,4,5,6,7,8,9,10", sweep_out;
    bool sweep_corrupted = false;
    std::uint64_t sweep_seed = 0;
    sweep->add_option("--run", sweep_run, "Eval output directory")->required();
    sweep->add_option("--sizes", sweep_sizes, "Comma-separated ensemble sizes");
    sweep->add_option("--out", sweep_out)->required();
    sweep->add_option("--seed", sweep_seed, "Seed for subset sampling");
    sweep->add_flag("--corrupted", sweep_corrupted, "Average over the corrupted copies instead of the clean test set");

    // verify
    auto* verify_cmd = app.add_subcommand("verify", "Run the built-in self-check suites");
    std::vector<std::string> inject;
    std::string only;
    verify_cmd->add_option("--inject-fault", inject, "Deliberately break a check: gradient, schedule")
        ->check(CLI::IsMember({"gradient", "schedule"}));
    verify_cmd->add_option("--suite", only, "Run a single suite by name");

    // rerun
    auto* rerun = app.add_subcommand("rerun", "Re-execute the command recorded in a manifest");
    std::string rerun_manifest_path, rerun_out;
    rerun->add_option("--manifest", rerun_manifest_path)->required();
    rerun->add_option("--out", rerun_out)->required();
    rerun->add_option("--threads", threads)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) {
            cmd_synth_data(so, synth_out);
            std::cout << "wrote " << synth_out << "\n";
        } else if (*search) {
            const auto cfg = load_config(search_config, threads);
            const auto r = cmd_search(cfg, search_out);
            std::printf("search: %zu epochs in %.1f s, final train loss %.4f\n", r.curve.size(), r.seconds,
                        r.curve.empty() ? 0.0 : r.curve.back().train_loss);
        } else if (*eval) {
            const auto cfg = load_config(eval_config, threads);
            const auto m = cmd_eval_ensemble(cfg, eval_search, eval_out);
            std::printf("%s: %zu members  acc %.4f  ece %.4f  nll %.4f  |  corrupted acc %.4f  ece %.4f  nll %.4f\n",
                        std::string(variant_name(cfg.run.variant)).c_str(), m.members, m.clean.accuracy, m.clean.ece,
                        m.clean.nll, m.c_accuracy, m.c_ece, m.c_nll);
        } else if (*corrupt_cmd) {
            cmd_corrupt(corrupt_data, corrupt_out, corrupt_seed);
            std::cout << "wrote " << corrupt_out << "\n";
        } else if (*report) {
            std::vector<fs::path> runs(report_runs.begin(), report_runs.end());
            std::cout << cmd_report(runs, report_out);
        } else if (*sweep) {
            const auto sizes = parse_sizes(sweep_sizes);
            const auto pts = cmd_sweep(sweep_run, sizes, sweep_out, sweep_corrupted, sweep_seed);
            for (const auto& p : pts)
                std::printf("size %zu (%zu subsets)  acc %.4f  ece %.4f  nll %.4f\n", p.size, p.subsets, p.accuracy,
                            p.ece, p.nll);
        } else if (*verify_cmd) {
            verify::Faults faults;
            for (const auto& f : inject) {
                faults.gradient |= f == "gradient";
                faults.schedule |= f == "schedule";
            }
            bool ok = true, ran = false;
            for (const auto& [name, fn] : verify::suites()) {
                if (!only.empty() && name != only) continue;
                ran = true;
                const auto t0 = std::chrono::steady_clock::now();
                verify::SuiteResult r;
                try {
                    r = fn(faults);
                } catch (const std::exception& e) {
                    r = {name, false, std::string("exception: ") + e.what(), 0.0};
                }
                r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                std::printf("[%s] %-24s %6.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                            r.detail.c_str());
                ok = ok && r.passed;
            }
            if (!ran) throw UsageError("unknown suite '" + only + "'");
            return ok ? 0 : 1;
        } else if (*rerun) {
            rerun_manifest(rerun_manifest_path, rerun_out, resolve_threads(threads, 0));
            std::cout << "wrote " << rerun_out << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "training failed: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    }
    return 0;
}
