#pragma once

// On-disk artifacts: concentration checkpoints, weight snapshot stores,
// prediction blobs, CSV curves and run manifests.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uraenas/arch_dist.hpp"
#include "uraenas/data.hpp"
#include "uraenas/errors.hpp"
#include "uraenas/metrics.hpp"
#include "uraenas/trainer.hpp"

namespace uraenas {

inline constexpr const char* kToolVersion = "1.0.0";

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    detail::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
    const auto b = detail::read_file(path);
    return std::string(b.begin(), b.end());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Concentration checkpoint: edge id -> b vector, plus lambda and seed.
inline nlohmann::json beta_to_json(const ConcentrationParams& p, std::uint64_t seed) {
    nlohmann::json edges = nlohmann::json::object();
    for (std::size_t e = 0; e < p.edges(); ++e) edges[std::to_string(e)] = p.b()[e];
    return {{"b", edges}, {"reg_weight", p.reg_weight()}, {"seed", seed}, {"ops", [] {
                 nlohmann::json ops = nlohmann::json::array();
                 for (auto op : kAllOps) ops.push_back(op_name(op));
                 return ops;
             }()}};
}

inline ConcentrationParams beta_from_json(const nlohmann::json& j) {
    try {
        const auto& edges = j.at("b");
        ConcentrationParams p(edges.size(), j.at("reg_weight").get<double>());
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const auto v = edges.at(std::to_string(e)).get<std::vector<double>>();
            if (v.size() != kNumOps) throw FormatError("beta checkpoint: edge " + std::to_string(e) + " has wrong length");
            std::copy(v.begin(), v.end(), p.b()[e].begin());
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("beta checkpoint: ") + e.what());
    }
}

/// Binary blob: compact JSON header line, '\n', then little-endian doubles.
inline void write_double_blob(const std::filesystem::path& path, const nlohmann::json& header,
                              std::span<const double> values) {
    const std::string h = header.dump() + "\n";
    std::vector<std::uint8_t> bytes(h.begin(), h.end());
    const std::size_t off = bytes.size();
    bytes.resize(off + values.size() * sizeof(double));
    std::memcpy(bytes.data() + off, values.data(), values.size() * sizeof(double));
    detail::write_file(path, bytes);
}

inline std::vector<double> read_double_blob(const std::filesystem::path& path, nlohmann::json& header) {
    const auto bytes = detail::read_file(path);
    const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t('\n'));
    if (nl == bytes.end()) throw FormatError("blob '" + path.string() + "' has no header");
    try {
        header = nlohmann::json::parse(bytes.begin(), nl);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("blob '" + path.string() + "': " + e.what());
    }
    const std::size_t payload = std::size_t(bytes.end() - nl - 1);
    if (payload % sizeof(double)) throw FormatError("blob '" + path.string() + "': truncated payload");
    std::vector<double> v(payload / sizeof(double));
    std::memcpy(v.data(), &*(nl + 1), payload);
    return v;
}

inline void save_predictions(const std::filesystem::path& path, const PredictionSet& preds) {
    std::vector<double> flat;
    for (const auto& m : preds.members) flat.insert(flat.end(), m.p.begin(), m.p.end());
    const std::size_t rows = preds.labels.size();
    const std::size_t classes = preds.members.empty() ? 0 : preds.members[0].classes;
    write_double_blob(path, {{"members", preds.members.size()}, {"rows", rows}, {"classes", classes}, {"labels", preds.labels}},
                      flat);
}

inline PredictionSet load_predictions(const std::filesystem::path& path) {
    nlohmann::json h;
    const auto flat = read_double_blob(path, h);
    PredictionSet p;
    try {
        const std::size_t M = h.at("members"), N = h.at("rows"), K = h.at("classes");
        p.labels = h.at("labels").get<std::vector<int>>();
        if (flat.size() != M * N * K || p.labels.size() != N) throw FormatError("predictions '" + path.string() + "': size mismatch");
        for (std::size_t m = 0; m < M; ++m) {
            ProbMatrix pm(N, K);
            std::copy_n(flat.begin() + long(m * N * K), N * K, pm.p.begin());
            p.members.push_back(std::move(pm));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("predictions '" + path.string() + "': " + e.what());
    }
    return p;
}

inline std::string curve_csv(std::span<const EpochRecord> curve) {
    std::string out = "epoch,lr,phase,train_loss,train_accuracy,val_loss\n";
    for (const auto& r : curve)
        out += std::to_string(r.epoch) + "," + fmt_double(r.lr) + "," +
               (r.phase == Phase::Exploration ? "exploration" : "sampling") + "," + fmt_double(r.train_loss) + "," +
               fmt_double(r.train_accuracy) + "," + fmt_double(r.val_loss) + "\n";
    return out;
}

inline nlohmann::json theta_to_json(const Theta& th) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : th) j.push_back(e);
    return j;
}

inline Theta theta_from_json(const nlohmann::json& j) {
    Theta th;
    for (const auto& e : j) {
        const auto v = e.get<std::vector<double>>();
        if (v.size() != kNumOps) throw FormatError("theta: edge vector must have 5 entries");
        EdgeTheta t{};
        std::copy(v.begin(), v.end(), t.begin());
        th.push_back(t);
    }
    return th;
}

/// Members index (ids, epochs, theta) plus one snapshot blob holding every
/// member's flattened weights in member order.
inline void save_members(const std::filesystem::path& dir, std::span<const EnsembleMember> members) {
    nlohmann::json index = nlohmann::json::array();
    std::vector<double> flat;
    std::size_t per = members.empty() ? 0 : members[0].weights->size();
    for (const auto& m : members) {
        if (m.weights->size() != per) throw InvariantError("members have different weight counts");
        index.push_back({{"m1", m.m1}, {"m2", m.m2}, {"epoch", m.epoch}, {"theta", theta_to_json(m.theta)}});
        flat.insert(flat.end(), m.weights->begin(), m.weights->end());
    }
    write_json(dir / "members.json", {{"members", index}, {"weights_per_member", per}, {"snapshots", "snapshots.bin"}});
    write_double_blob(dir / "snapshots.bin", {{"members", members.size()}, {"weights_per_member", per}}, flat);
}

inline std::vector<EnsembleMember> load_members(const std::filesystem::path& dir) {
    const auto idx = read_json(dir / "members.json");
    nlohmann::json h;
    const auto flat = read_double_blob(dir / "snapshots.bin", h);
    std::vector<EnsembleMember> out;
    try {
        const std::size_t per = idx.at("weights_per_member");
        const auto& list = idx.at("members");
        if (flat.size() != per * list.size()) throw FormatError("snapshot store size mismatch");
        for (std::size_t i = 0; i < list.size(); ++i) {
            EnsembleMember m;
            m.m1 = list[i].at("m1");
            m.m2 = list[i].at("m2");
            m.epoch = list[i].at("epoch");
            m.theta = theta_from_json(list[i].at("theta"));
            m.weights = std::make_shared<const std::vector<double>>(flat.begin() + long(i * per), flat.begin() + long((i + 1) * per));
            out.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("members.json: ") + e.what());
    }
    return out;
}

/// Manifest common to every command.
inline nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                                    const nlohmann::json& inputs, const nlohmann::json& artifacts, int threads,
                                    double seconds) {
    return {{"tool", "uraenas"},       {"version", kToolVersion}, {"command", command},
            {"config", config},        {"seed", seed},            {"inputs", inputs},
            {"artifacts", artifacts},  {"threads", threads},      {"timing", {{"seconds", seconds}}}};
}

} // namespace uraenas
