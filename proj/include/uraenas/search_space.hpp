#pragma once

// Cell DAG, continuous relaxation of the per-edge operation choice, and the
// stem / stages / reduction / head macro skeleton evaluated as a supernet.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uraenas/errors.hpp"
#include "uraenas/rng.hpp"
#include "uraenas/tensor.hpp"

namespace uraenas {

/// Candidate operations in canonical order; the index is the position in
/// every per-edge mixing-weight vector.
enum class OpKind { Zeroize = 0, SkipConnect = 1, Conv1x1 = 2, Conv3x3 = 3, AvgPool3x3 = 4 };

inline constexpr std::size_t kNumOps = 5;
inline constexpr std::array<OpKind, kNumOps> kAllOps = {OpKind::Zeroize, OpKind::SkipConnect, OpKind::Conv1x1,
                                                        OpKind::Conv3x3, OpKind::AvgPool3x3};

inline constexpr std::string_view op_name(OpKind op) {
    switch (op) {
        case OpKind::Zeroize: return "none";
        case OpKind::SkipConnect: return "skip_connect";
        case OpKind::Conv1x1: return "nor_conv_1x1";
        case OpKind::Conv3x3: return "nor_conv_3x3";
        case OpKind::AvgPool3x3: return "avg_pool_3x3";
    }
    return "?";
}

inline OpKind op_from_name(std::string_view name) {
    for (auto op : kAllOps)
        if (op_name(op) == name) return op;
    throw InputError("unknown operation name '" + std::string(name) + "'");
}

/// Per-edge mixing weights; one simplex vector per edge position.
using EdgeTheta = std::array<double, kNumOps>;
using Theta = std::vector<EdgeTheta>;

/// One operation per edge.
using DiscreteArch = std::vector<OpKind>;

enum class TopologyProfile { NB201, Darts };
enum class OutputMode { LastNode, ConcatIntermediate };

inline constexpr std::string_view profile_name(TopologyProfile p) {
    return p == TopologyProfile::NB201 ? "nb201" : "darts";
}

inline TopologyProfile profile_from_name(std::string_view s) {
    if (s == "nb201") return TopologyProfile::NB201;
    if (s == "darts") return TopologyProfile::Darts;
    throw InputError("unknown topology profile '" + std::string(s) + "'");
}

struct CellEdge {
    std::size_t from = 0;
    std::size_t to = 0;
    friend bool operator==(const CellEdge&, const CellEdge&) = default;
};

struct CellTopology {
    std::size_t num_nodes = 4;
    std::size_t input_nodes = 1;
    std::vector<CellEdge> edges;
    OutputMode output_mode = OutputMode::LastNode;

    /// Four nodes, one input, all six edges, last node is the output. Edge
    /// order is (0,1) (0,2) (1,2) (0,3) (1,3) (2,3).
    static CellTopology nb201() {
        CellTopology t;
        t.num_nodes = 4;
        t.input_nodes = 1;
        t.output_mode = OutputMode::LastNode;
        for (std::size_t j = 1; j < 4; ++j)
            for (std::size_t i = 0; i < j; ++i) t.edges.push_back({i, j});
        return t;
    }

    /// Two input nodes (outputs of the previous two cells), `intermediate`
    /// computed nodes each fed by every earlier node, output is the channel
    /// concatenation of the intermediate nodes.
    static CellTopology darts(std::size_t intermediate = 4) {
        CellTopology t;
        t.input_nodes = 2;
        t.num_nodes = 2 + intermediate;
        t.output_mode = OutputMode::ConcatIntermediate;
        for (std::size_t j = 2; j < t.num_nodes; ++j)
            for (std::size_t i = 0; i < j; ++i) t.edges.push_back({i, j});
        return t;
    }

    static CellTopology for_profile(TopologyProfile p) { return p == TopologyProfile::NB201 ? nb201() : darts(); }

    std::size_t num_edges() const noexcept { return edges.size(); }

    /// Output channels relative to the node width.
    std::size_t output_multiplier() const noexcept {
        return output_mode == OutputMode::LastNode ? 1 : num_nodes - input_nodes;
    }

    void validate() const {
        if (input_nodes < 1 || input_nodes > 2) throw ConfigError("cell: input_nodes must be 1 or 2");
        if (num_nodes <= input_nodes) throw ConfigError("cell: needs at least one computed node");
        for (const auto& e : edges) {
            if (e.from >= e.to) throw ConfigError("cell: edge (" + std::to_string(e.from) + "," + std::to_string(e.to) +
                                                  ") violates i < j");
            if (e.to >= num_nodes) throw ConfigError("cell: edge target out of range");
            if (e.to < input_nodes) throw ConfigError("cell: edge into an input node");
        }
        for (std::size_t j = input_nodes; j < num_nodes; ++j) {
            bool fed = false;
            for (const auto& e : edges) fed = fed || e.to == j;
            if (!fed) throw ConfigError("cell: node " + std::to_string(j) + " has no incoming edge");
        }
    }
};

inline void check_simplex(const EdgeTheta& theta, double tol, const char* where) {
    double total = 0.0;
    for (double v : theta) {
        if (!(v >= -tol)) throw InvariantError(std::string(where) + ": negative mixing weight");
        total += v;
    }
    if (!(std::fabs(total - 1.0) <= tol))
        throw InvariantError(std::string(where) + ": mixing weights sum to " + std::to_string(total));
}

/// Learnable parameters of one edge, recorded on a tape. Zeroize, skip and
/// pooling carry no weights.
struct EdgeVars {
    Var conv1x1; ///< [C,C,1,1]
    Var conv3x3; ///< [C,C,3,3]
};

/// Applies a single candidate operation (ReLU -> Conv for the convolutions).
/// Returns an empty Var for Zeroize.
inline Var apply_op(OpKind op, const Var& x, const EdgeVars& w) {
    switch (op) {
        case OpKind::Zeroize: return {};
        case OpKind::SkipConnect: return x;
        case OpKind::Conv1x1: return conv2d(relu(x), w.conv1x1, 1, 0);
        case OpKind::Conv3x3: return conv2d(relu(x), w.conv3x3, 1, 1);
        case OpKind::AvgPool3x3: return avg_pool3x3(x, 1);
    }
    return {};
}

/// sum_o theta_o * o(x). `theta` is a length-5 Var on the same tape. When theta
/// carries no gradient, operations with exactly zero weight are not evaluated.
inline Var mixed_op_forward(const Var& x, const Var& theta, const EdgeVars& w) {
    const Tensor& tv = theta.value();
    if (tv.rank() != 1 || tv.size() != kNumOps)
        throw DimensionError("mixed_op_forward: theta must have shape [5], got " + shape_str(tv.shape()));
    EdgeTheta th{};
    for (std::size_t k = 0; k < kNumOps; ++k) th[k] = tv[k];
    check_simplex(th, 1e-6, "mixed_op_forward");
    const bool need_all = theta.tape()->requires_grad(theta);
    std::array<Var, kNumOps> terms{};
    Var activated;
    for (std::size_t k = 0; k < kNumOps; ++k) {
        if (!need_all && th[k] == 0.0) continue;
        const OpKind op = kAllOps[k];
        if (op == OpKind::Conv1x1 || op == OpKind::Conv3x3) {
            if (!activated.valid()) activated = relu(x);
            terms[k] = op == OpKind::Conv1x1 ? conv2d(activated, w.conv1x1, 1, 0) : conv2d(activated, w.conv3x3, 1, 1);
        } else {
            terms[k] = apply_op(op, x, w);
        }
    }
    return weighted_sum(theta, terms, x.shape());
}

/// Node j = sum over incoming edges of the mixed op applied to node i. The
/// result is the last node or the channel concat of the computed nodes.
inline Var cell_forward(const CellTopology& cell, std::span<const Var> inputs, std::span<const Var> theta,
                        std::span<const EdgeVars> weights) {
    cell.validate();
    if (inputs.size() != cell.input_nodes)
        throw ConfigError("cell_forward: expected " + std::to_string(cell.input_nodes) + " inputs, got " +
                          std::to_string(inputs.size()));
    if (theta.size() != cell.num_edges() || weights.size() != cell.num_edges())
        throw ConfigError("cell_forward: missing edge parameters (" + std::to_string(theta.size()) + " theta, " +
                          std::to_string(weights.size()) + " weight sets for " + std::to_string(cell.num_edges()) +
                          " edges)");
    std::vector<Var> nodes(cell.num_nodes);
    for (std::size_t i = 0; i < cell.input_nodes; ++i) nodes[i] = inputs[i];
    for (std::size_t j = cell.input_nodes; j < cell.num_nodes; ++j) {
        Var acc;
        for (std::size_t e = 0; e < cell.num_edges(); ++e) {
            if (cell.edges[e].to != j) continue;
            Var y = mixed_op_forward(nodes[cell.edges[e].from], theta[e], weights[e]);
            acc = acc.valid() ? add(acc, y) : y;
        }
        nodes[j] = acc;
    }
    if (cell.output_mode == OutputMode::LastNode) return nodes.back();
    std::vector<Var> mids(nodes.begin() + long(cell.input_nodes), nodes.end());
    return concat_channels(std::span<const Var>(mids));
}

/// Flat, indexable store of named parameter tensors and their gradients.
/// Tensors are never reallocated after construction so tapes may reference them.
class ParameterSet {
public:
    std::size_t add(std::string name, Tensor init) {
        names_.push_back(std::move(name));
        grads_.emplace_back(init.shape());
        values_.push_back(std::move(init));
        return values_.size() - 1;
    }

    std::size_t tensors() const noexcept { return values_.size(); }
    std::size_t scalars() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

    Tensor& value(std::size_t i) { return values_.at(i); }
    const Tensor& value(std::size_t i) const { return values_.at(i); }
    Tensor& grad(std::size_t i) { return grads_.at(i); }
    const Tensor& grad(std::size_t i) const { return grads_.at(i); }
    const std::string& name(std::size_t i) const { return names_.at(i); }

    void zero_grad() {
        for (auto& g : grads_) g.fill(0.0);
    }

    std::vector<double> flatten() const {
        std::vector<double> flat;
        flat.reserve(scalars());
        for (const auto& v : values_) flat.insert(flat.end(), v.values().begin(), v.values().end());
        return flat;
    }

    void assign(std::span<const double> flat) {
        if (flat.size() != scalars())
            throw DimensionError("parameter assign: " + std::to_string(flat.size()) + " values for " +
                                 std::to_string(scalars()) + " parameters");
        std::size_t off = 0;
        for (auto& v : values_) {
            std::copy_n(flat.begin() + long(off), v.size(), v.data());
            off += v.size();
        }
    }

    std::vector<Shape> shapes() const {
        std::vector<Shape> s;
        for (const auto& v : values_) s.push_back(v.shape());
        return s;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
};

struct SupernetConfig {
    TopologyProfile profile = TopologyProfile::NB201;
    std::size_t in_channels = 3;
    std::size_t c0 = 8;
    std::size_t cells_per_stage = 1;
    std::size_t num_classes = 10;
    std::size_t darts_intermediate = 4;

    CellTopology topology() const {
        return profile == TopologyProfile::NB201 ? CellTopology::nb201() : CellTopology::darts(darts_intermediate);
    }
};

/// Stem conv, three stages of normal cells at C0, 2C0, 4C0 channels separated
/// by fixed residual reduction blocks, global average pool and a linear head.
/// Mixing weights are shared by every normal cell at the same edge position.
class Supernet {
public:
    static constexpr std::size_t kStages = 3;

    explicit Supernet(SupernetConfig cfg) : cfg_(cfg), cell_(cfg.topology()) {
        cell_.validate();
        if (cfg_.c0 == 0 || cfg_.num_classes == 0 || cfg_.in_channels == 0)
            throw ConfigError("supernet: channel counts must be positive");
        const std::size_t C0 = cfg_.c0;
        stem_ = params_.add("stem", Tensor({C0, cfg_.in_channels, 3, 3}));
        for (std::size_t s = 0; s < kStages; ++s) {
            const std::size_t C = C0 << s;
            for (std::size_t c = 0; c < cfg_.cells_per_stage; ++c) {
                CellSlots slots;
                for (std::size_t e = 0; e < cell_.num_edges(); ++e) {
                    const std::string base = "s" + std::to_string(s) + ".c" + std::to_string(c) + ".e" + std::to_string(e);
                    slots.conv1x1.push_back(params_.add(base + ".conv1x1", Tensor({C, C, 1, 1})));
                    slots.conv3x3.push_back(params_.add(base + ".conv3x3", Tensor({C, C, 3, 3})));
                }
                if (cell_.output_mode == OutputMode::ConcatIntermediate)
                    slots.project = params_.add("s" + std::to_string(s) + ".c" + std::to_string(c) + ".project",
                                                Tensor({C, C * cell_.output_multiplier(), 1, 1}));
                cells_.push_back(std::move(slots));
            }
            if (s + 1 < kStages) {
                ReductionSlots r;
                r.main = params_.add("r" + std::to_string(s) + ".conv3x3", Tensor({2 * C, C, 3, 3}));
                r.shortcut = params_.add("r" + std::to_string(s) + ".shortcut", Tensor({2 * C, C, 1, 1}));
                reductions_.push_back(r);
            }
        }
        head_w_ = params_.add("head.weight", Tensor({4 * C0, cfg_.num_classes}));
        head_b_ = params_.add("head.bias", Tensor({cfg_.num_classes}));
    }

    const SupernetConfig& config() const noexcept { return cfg_; }
    const CellTopology& topology() const noexcept { return cell_; }
    std::size_t num_edges() const noexcept { return cell_.num_edges(); }
    ParameterSet& params() noexcept { return params_; }
    const ParameterSet& params() const noexcept { return params_; }

    /// He-normal convolutions and head, zero bias.
    void init_weights(Rng& rng) {
        for (std::size_t i = 0; i < params_.tensors(); ++i) {
            Tensor& t = params_.value(i);
            if (i == head_b_) {
                t.fill(0.0);
                continue;
            }
            const double fan_in = i == head_w_ ? double(t.dim(0)) : double(t.dim(1) * t.dim(2) * t.dim(3));
            const double std = i == head_w_ ? std::sqrt(1.0 / fan_in) : std::sqrt(2.0 / fan_in);
            for (auto& v : t.values()) v = std * rng.normal();
        }
    }

    /// Logits [N, num_classes]. `theta` holds one length-5 Var per edge
    /// position. With `weight_grads` the weights accumulate gradients into the
    /// parameter set on backward().
    Var forward(Tape& tape, const Var& images, std::span<const Var> theta, bool weight_grads) {
        const Tensor& xv = images.value();
        if (xv.rank() != 4 || xv.dim(1) != cfg_.in_channels)
            throw DimensionError("macro_forward: expected input [N," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                                 shape_str(xv.shape()));
        if (xv.dim(2) % 4 != 0 || xv.dim(3) % 4 != 0)
            throw InputError("macro_forward: spatial dims " + std::to_string(xv.dim(2)) + "x" + std::to_string(xv.dim(3)) +
                             " must be divisible by 4");
        if (theta.size() != num_edges())
            throw ConfigError("macro_forward: " + std::to_string(theta.size()) + " theta vectors for " +
                              std::to_string(num_edges()) + " edges");
        auto P = [&](std::size_t i) { return tape.parameter(params_.value(i), weight_grads ? &params_.grad(i) : nullptr); };

        Var x = conv2d(images, P(stem_), 1, 1);
        std::size_t cell_idx = 0;
        for (std::size_t s = 0; s < kStages; ++s) {
            Var prev_prev = x;
            for (std::size_t c = 0; c < cfg_.cells_per_stage; ++c, ++cell_idx) {
                const CellSlots& slots = cells_[cell_idx];
                std::vector<EdgeVars> ev;
                for (std::size_t e = 0; e < num_edges(); ++e) ev.push_back({P(slots.conv1x1[e]), P(slots.conv3x3[e])});
                Var out;
                if (cell_.input_nodes == 1) {
                    const Var in[1] = {x};
                    out = cell_forward(cell_, in, theta, ev);
                } else {
                    const Var in[2] = {prev_prev, x};
                    out = cell_forward(cell_, in, theta, ev);
                }
                if (cell_.output_mode == OutputMode::ConcatIntermediate) out = conv2d(out, P(slots.project), 1, 0);
                prev_prev = x;
                x = out;
            }
            if (s + 1 < kStages) {
                const ReductionSlots& r = reductions_[s];
                Var main = conv2d(relu(x), P(r.main), 2, 1);
                Var shortcut = conv2d(avg_pool3x3(x, 2), P(r.shortcut), 1, 0);
                x = add(main, shortcut);
            }
        }
        return linear(global_avg_pool(x), P(head_w_), P(head_b_));
    }

    /// Convenience: records `theta` as constants.
    Var forward(Tape& tape, const Var& images, const Theta& theta, bool weight_grads) {
        const auto vars = theta_constants(tape, theta);
        return forward(tape, images, vars, weight_grads);
    }

    std::vector<Var> theta_constants(Tape& tape, const Theta& theta) const {
        if (theta.size() != num_edges())
            throw ConfigError("theta has " + std::to_string(theta.size()) + " edges, supernet has " +
                              std::to_string(num_edges()));
        std::vector<Var> out;
        for (const auto& t : theta) out.push_back(tape.constant(Tensor({kNumOps}, std::vector<double>(t.begin(), t.end()))));
        return out;
    }

    /// Softmax probabilities, evaluated in chunks of `batch` rows without gradients.
    Tensor predict_probs(const Tensor& images, const Theta& theta, std::size_t batch = 256) {
        const std::size_t N = images.dim(0), K = cfg_.num_classes;
        const std::size_t per = images.size() / std::max<std::size_t>(N, 1);
        Tensor probs({N, K});
        for (std::size_t start = 0; start < N; start += batch) {
            const std::size_t n = std::min(batch, N - start);
            Shape sh = images.shape();
            sh[0] = n;
            Tensor chunk(sh, std::vector<double>(images.data() + start * per, images.data() + (start + n) * per));
            Tape tape;
            Var logits = forward(tape, tape.constant(std::move(chunk)), theta, false);
            Tensor p = softmax_rows(logits.value());
            std::copy_n(p.data(), n * K, probs.data() + start * K);
        }
        return probs;
    }

private:
    struct CellSlots {
        std::vector<std::size_t> conv1x1;
        std::vector<std::size_t> conv3x3;
        std::size_t project = 0;
    };
    struct ReductionSlots {
        std::size_t main = 0;
        std::size_t shortcut = 0;
    };

    SupernetConfig cfg_;
    CellTopology cell_;
    ParameterSet params_;
    std::size_t stem_ = 0, head_w_ = 0, head_b_ = 0;
    std::vector<CellSlots> cells_;
    std::vector<ReductionSlots> reductions_;
};

/// Per-edge argmax; ties go to the lowest operation index.
inline DiscreteArch discretize(const Theta& mean_theta) {
    DiscreteArch arch;
    for (const auto& t : mean_theta) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < kNumOps; ++k)
            if (t[k] > t[best]) best = k;
        arch.push_back(kAllOps[best]);
    }
    return arch;
}

inline Theta one_hot(const DiscreteArch& arch) {
    Theta th(arch.size());
    for (std::size_t e = 0; e < arch.size(); ++e) {
        th[e].fill(0.0);
        th[e][std::size_t(arch[e])] = 1.0;
    }
    return th;
}

inline Theta uniform_theta(std::size_t edges) {
    Theta th(edges);
    for (auto& t : th) t.fill(1.0 / double(kNumOps));
    return th;
}

} // namespace uraenas
