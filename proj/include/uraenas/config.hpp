#pragma once

// JSON <-> RunConfig with a strict schema: unknown keys and type mismatches
// raise ConfigError carrying the JSON pointer of the offending value.

#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "uraenas/errors.hpp"
#include "uraenas/trainer.hpp"

namespace uraenas {

using json = nlohmann::json;

/// Where the train / val / test splits come from.
struct DataSpec {
    std::string source = "synth"; ///< "synth", "dir" (internal format) or "cifar"
    std::string path;             ///< dataset directory for "dir" / "cifar"
    std::size_t classes = 10;
    std::size_t n_train = 5000;
    std::size_t n_val = 1000;
    std::size_t n_test = 1000;
    std::size_t height = 16;
    std::size_t width = 16;
    double noise = 20.0;
    double phase_jitter = std::numbers::pi;
    double signal_min = 8.0;
    double signal_max = 24.0;
    double clutter = 0.0;
    std::uint64_t seed = 0;          ///< data seed, independent of the run seed
    std::uint64_t corrupt_seed = 0;  ///< seed of the corrupted suite
    std::size_t corrupted_limit = 0; ///< evaluate only the first n images of every corrupted copy; 0 = all
    bool downscale = true;           ///< 2x2 mean pooling of CIFAR images to 16x16
};

struct ExperimentConfig {
    RunConfig run;
    DataSpec data;
};

namespace detail {

class StrictObject {
public:
    StrictObject(const json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
        if (!j_.is_object()) throw ConfigError("expected an object", ptr_.empty() ? "/" : ptr_);
    }

    void allow(std::initializer_list<const char*> keys) {
        std::set<std::string> ok(keys.begin(), keys.end());
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!ok.count(it.key())) throw ConfigError("unknown key", ptr_ + "/" + it.key());
    }

    bool has(const char* key) const { return j_.contains(key); }
    const json& at(const char* key) const { return j_.at(key); }
    std::string path(const char* key) const { return ptr_ + "/" + key; }

    template <class T>
    void get(const char* key, T& out) const {
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        const std::string p = path(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("expected a boolean", p);
            out = v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("expected an integer", p);
            if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                throw ConfigError("expected a non-negative integer", p);
            out = v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("expected a number", p);
            out = v.get<T>();
        } else {
            if (!v.is_string()) throw ConfigError("expected a string", p);
            out = v.get<std::string>();
        }
    }

private:
    const json& j_;
    std::string ptr_;
};

template <class E, class F>
void get_enum(const StrictObject& o, const char* key, E& out, F&& from_name) {
    std::string s;
    o.get(key, s);
    if (s.empty()) return;
    try {
        out = from_name(s);
    } catch (const Error& e) {
        throw ConfigError(std::string("invalid value '") + s + "'", o.path(key));
    }
}

} // namespace detail

inline std::string_view eval_mode_name(EvalMode m) { return m == EvalMode::Discretized ? "discretized" : "continuous"; }
inline EvalMode eval_mode_from_name(std::string_view s) {
    if (s == "continuous") return EvalMode::ContinuousTheta;
    if (s == "discretized") return EvalMode::Discretized;
    throw InputError("unknown eval mode");
}
inline std::string_view theta_source_name(ThetaSource t) {
    return t == ThetaSource::Sample ? "sample" : t == ThetaSource::Mean ? "mean" : "auto";
}
inline ThetaSource theta_source_from_name(std::string_view s) {
    if (s == "auto") return ThetaSource::Auto;
    if (s == "sample") return ThetaSource::Sample;
    if (s == "mean") return ThetaSource::Mean;
    throw InputError("unknown theta source");
}

inline json to_json(const DataSpec& d) {
    return {{"source", d.source},   {"path", d.path},         {"classes", d.classes},
            {"n_train", d.n_train}, {"n_val", d.n_val},       {"n_test", d.n_test},
            {"height", d.height},   {"width", d.width},       {"noise", d.noise},
            {"phase_jitter", d.phase_jitter},                 {"signal_min", d.signal_min},
            {"signal_max", d.signal_max},                     {"clutter", d.clutter},
            {"seed", d.seed},
            {"corrupt_seed", d.corrupt_seed},                 {"corrupted_limit", d.corrupted_limit},
            {"downscale", d.downscale}};
}

inline json to_json(const RunConfig& c) {
    return {{"variant", variant_name(c.variant)},
            {"seed", c.seed},
            {"eta", c.eta},
            {"reg_weight", c.reg_weight},
            {"csgld",
             {{"alpha0", c.csgld.alpha0},
              {"epochs", c.csgld.epochs},
              {"cycles", c.csgld.cycles},
              {"exploration", c.csgld.exploration},
              {"batch_size", c.csgld.batch_size},
              {"phase_cycles", c.csgld.phase_cycles},
              {"grad_clip", c.csgld.grad_clip}}},
            {"eval_epochs", c.eval_epochs},
            {"M_theta", c.M_theta},
            {"M_w", c.M_w},
            {"ensemble_cap", c.ensemble_cap},
            {"net",
             {{"profile", profile_name(c.net.profile)},
              {"c0", c.net.c0},
              {"cells_per_stage", c.net.cells_per_stage},
              {"darts_intermediate", c.net.darts_intermediate}}},
            {"eval_mode", eval_mode_name(c.eval_mode)},
            {"theta_source", theta_source_name(c.theta_source)},
            {"inherit_weights", c.inherit_weights},
            {"paper_literal_update", c.paper_literal_update},
            {"threads", c.threads}};
}

inline json to_json(const ExperimentConfig& c) {
    json j = to_json(c.run);
    j["data"] = to_json(c.data);
    return j;
}

inline DataSpec data_spec_from_json(const json& j, const std::string& ptr) {
    detail::StrictObject o(j, ptr);
    o.allow({"source", "path", "classes", "n_train", "n_val", "n_test", "height", "width", "noise", "phase_jitter",
             "signal_min", "signal_max", "clutter", "seed", "corrupt_seed", "corrupted_limit", "downscale"});
    DataSpec d;
    o.get("source", d.source);
    o.get("path", d.path);
    o.get("classes", d.classes);
    o.get("n_train", d.n_train);
    o.get("n_val", d.n_val);
    o.get("n_test", d.n_test);
    o.get("height", d.height);
    o.get("width", d.width);
    o.get("noise", d.noise);
    o.get("phase_jitter", d.phase_jitter);
    o.get("signal_min", d.signal_min);
    o.get("signal_max", d.signal_max);
    o.get("clutter", d.clutter);
    o.get("seed", d.seed);
    o.get("corrupt_seed", d.corrupt_seed);
    o.get("corrupted_limit", d.corrupted_limit);
    o.get("downscale", d.downscale);
    if (d.source != "synth" && d.source != "dir" && d.source != "cifar")
        throw ConfigError("source must be one of synth, dir, cifar", ptr + "/source");
    if (d.source != "synth" && d.path.empty()) throw ConfigError("path is required for this source", ptr + "/path");
    if (d.classes < 1 || d.classes > 10) throw ConfigError("classes must be in [1, 10]", ptr + "/classes");
    return d;
}

/// Parses an experiment config. Missing keys keep their defaults.
inline ExperimentConfig config_from_json(const json& j) {
    detail::StrictObject o(j, "");
    o.allow({"variant", "seed", "eta", "reg_weight", "csgld", "eval_epochs", "M_theta", "M_w", "ensemble_cap", "net",
             "eval_mode", "theta_source", "inherit_weights", "paper_literal_update", "threads", "data"});
    ExperimentConfig ec;
    RunConfig& c = ec.run;
    detail::get_enum(o, "variant", c.variant, [](const std::string& s) { return variant_from_name(s); });
    o.get("seed", c.seed);
    o.get("eta", c.eta);
    o.get("reg_weight", c.reg_weight);
    if (o.has("csgld")) {
        detail::StrictObject s(o.at("csgld"), "/csgld");
        s.allow({"alpha0", "epochs", "cycles", "exploration", "batch_size", "phase_cycles", "grad_clip"});
        s.get("alpha0", c.csgld.alpha0);
        s.get("epochs", c.csgld.epochs);
        s.get("cycles", c.csgld.cycles);
        s.get("exploration", c.csgld.exploration);
        s.get("batch_size", c.csgld.batch_size);
        s.get("phase_cycles", c.csgld.phase_cycles);
        s.get("grad_clip", c.csgld.grad_clip);
    }
    o.get("eval_epochs", c.eval_epochs);
    o.get("M_theta", c.M_theta);
    o.get("M_w", c.M_w);
    o.get("ensemble_cap", c.ensemble_cap);
    if (o.has("net")) {
        detail::StrictObject n(o.at("net"), "/net");
        n.allow({"profile", "c0", "cells_per_stage", "darts_intermediate"});
        detail::get_enum(n, "profile", c.net.profile, [](const std::string& s) { return profile_from_name(s); });
        n.get("c0", c.net.c0);
        n.get("cells_per_stage", c.net.cells_per_stage);
        n.get("darts_intermediate", c.net.darts_intermediate);
    }
    detail::get_enum(o, "eval_mode", c.eval_mode, [](const std::string& s) { return eval_mode_from_name(s); });
    detail::get_enum(o, "theta_source", c.theta_source, [](const std::string& s) { return theta_source_from_name(s); });
    o.get("inherit_weights", c.inherit_weights);
    o.get("paper_literal_update", c.paper_literal_update);
    o.get("threads", c.threads);
    if (o.has("data")) ec.data = data_spec_from_json(o.at("data"), "/data");
    c.validate();
    return ec;
}

} // namespace uraenas
