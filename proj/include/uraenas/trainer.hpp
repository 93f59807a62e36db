#pragma once

// Search phase (alternating Dirichlet-concentration and cSGLD weight updates)
// and evaluation phase (re-training sampled architectures and collecting
// weight snapshots), for the baseline and the three ensemble variants.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "uraenas/arch_dist.hpp"
#include "uraenas/data.hpp"
#include "uraenas/errors.hpp"
#include "uraenas/metrics.hpp"
#include "uraenas/rng.hpp"
#include "uraenas/samplers.hpp"
#include "uraenas/search_space.hpp"
#include "uraenas/tensor.hpp"

namespace uraenas {

enum class Variant { DrNAS, UraeNAS_W, UraeNAS_A, UraeNAS };
enum class EvalMode { ContinuousTheta, Discretized };
/// Where evaluation-phase architectures come from. Auto follows the variant.
enum class ThetaSource { Auto, Sample, Mean };

inline std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::DrNAS: return "DrNAS";
        case Variant::UraeNAS_W: return "UraeNAS-w";
        case Variant::UraeNAS_A: return "UraeNAS-a";
        case Variant::UraeNAS: return "UraeNAS";
    }
    return "?";
}

inline Variant variant_from_name(std::string_view s) {
    for (auto v : {Variant::DrNAS, Variant::UraeNAS_W, Variant::UraeNAS_A, Variant::UraeNAS})
        if (variant_name(v) == s) return v;
    throw ConfigError("unknown variant '" + std::string(s) + "'", "/variant");
}

struct RunConfig {
    Variant variant = Variant::UraeNAS;
    std::uint64_t seed = 0;
    double eta = 0.1;          ///< step size on b
    double reg_weight = 1e-3;  ///< lambda
    CsgldConfig csgld{};       ///< epochs = K, the search length
    int eval_epochs = 0;       ///< 0 means 2K
    int M_theta = 5;
    int M_w = 8;
    int ensemble_cap = 10;     ///< 0 means no cap
    SupernetConfig net{};
    EvalMode eval_mode = EvalMode::ContinuousTheta;
    ThetaSource theta_source = ThetaSource::Auto;
    bool inherit_weights = false;
    bool paper_literal_update = false;
    int threads = 1;

    int search_epochs() const { return csgld.epochs; }
    int evaluation_epochs() const { return eval_epochs > 0 ? eval_epochs : 2 * csgld.epochs; }

    bool deterministic_weights() const { return variant == Variant::DrNAS || variant == Variant::UraeNAS_A; }

    bool sample_architectures() const {
        if (theta_source == ThetaSource::Sample) return true;
        if (theta_source == ThetaSource::Mean) return false;
        return variant == Variant::UraeNAS_A || variant == Variant::UraeNAS;
    }

    int architecture_count() const {
        return variant == Variant::DrNAS || variant == Variant::UraeNAS_W ? 1 : M_theta;
    }

    /// Schedule used by the evaluation phase: 2K epochs, C cycles for the
    /// snapshot variants, one cosine cycle for the deterministic ones.
    CsgldConfig eval_csgld(std::size_t n_data) const {
        CsgldConfig c = csgld;
        c.epochs = evaluation_epochs();
        c.n_data = n_data;
        if (deterministic_weights()) {
            c.cycles = 1;
            c.phase_cycles = 0;
        }
        return c;
    }

    void validate() const {
        csgld.validate();
        if (csgld.epochs < 0) throw ConfigError("epochs must be >= 0", "/csgld/epochs");
        if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0", "/eta");
        if (!(reg_weight >= 0.0)) throw ConfigError("reg_weight must be >= 0", "/reg_weight");
        if (M_theta < 1) throw ConfigError("M_theta must be >= 1", "/M_theta");
        if (M_w < csgld.cycles) throw ConfigError("M_w must be >= C so that floor(M_w / C) >= 1", "/M_w");
        if (ensemble_cap < 0) throw ConfigError("ensemble_cap must be >= 0", "/ensemble_cap");
        if (ensemble_cap > M_w * M_theta) throw ConfigError("ensemble_cap must not exceed M_w * M_theta", "/ensemble_cap");
        if (eval_epochs < 0) throw ConfigError("eval_epochs must be >= 0", "/eval_epochs");
        if (threads < 1) throw ConfigError("threads must be >= 1", "/threads");
        if (net.c0 < 1) throw ConfigError("c0 must be >= 1", "/net/c0");
        if (net.cells_per_stage < 1) throw ConfigError("cells_per_stage must be >= 1", "/net/cells_per_stage");
        if (!deterministic_weights() && evaluation_epochs() > 0) {
            CsgldConfig c = csgld;
            c.epochs = evaluation_epochs();
            if (c.epochs < c.cycles) throw ConfigError("evaluation epochs must be >= cycles", "/eval_epochs");
            snapshot_epochs(c, M_w);
        }
    }
};

/// Train / val / test splits with train-only normalisation.
struct ExperimentData {
    ImageDataset train;
    ImageDataset val;
    ImageDataset test;
    NormalizationStats stats;

    void validate() const {
        if (train.split != Split::Train || val.split != Split::Val || test.split != Split::Test)
            throw InvariantError("experiment data: split tags must be train / val / test");
        if (stats.source != Split::Train) throw InvariantError("experiment data: normalisation not from train split");
    }
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    Phase phase = Phase::Exploration;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0; ///< loss on the architecture-step minibatch (search only)
};

struct SearchResult {
    ConcentrationParams params;
    std::vector<double> supernet_weights;
    std::vector<EpochRecord> curve;
    double seconds = 0.0;
    std::uint64_t seed = 0;
};

struct EnsembleMember {
    int m1 = 0;    ///< snapshot index within its architecture, oldest first
    int m2 = 0;    ///< architecture index
    int epoch = 0; ///< evaluation epoch the weights were stored at
    Theta theta;
    std::shared_ptr<const std::vector<double>> weights;
};

struct EvalResult {
    std::vector<EnsembleMember> members;
    std::vector<std::vector<EpochRecord>> curves; ///< one per architecture
    double seconds = 0.0;
};

namespace detail {

inline std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    return idx;
}

/// Theta as a forward input: the raw weights, or the one-hot argmax in
/// discretized mode.
inline Theta effective_theta(const Theta& theta, EvalMode mode) {
    return mode == EvalMode::Discretized ? one_hot(discretize(theta)) : theta;
}

/// One epoch of weight updates. `theta_for_step` yields the mixing weights for
/// each minibatch. Returns mean loss and accuracy over the epoch.
template <class ThetaFn>
EpochRecord weight_epoch(Supernet& net, const ImageDataset& train, const NormalizationStats& stats,
                         const CsgldConfig& cfg, int k, const LangevinUpdater& updater, Rng& shuffle_rng,
                         ThetaFn&& theta_for_step, std::uint64_t& step_counter, double* first_loss) {
    EpochRecord rec;
    rec.epoch = k;
    rec.lr = lr_schedule(k, cfg);
    rec.phase = phase_of(k, cfg);
    const auto order = shuffled(train.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - start);
        const Batch batch = make_batch(train, std::span(order).subspan(start, n), stats);
        if (batch.split != Split::Train) throw InvariantError("weight update drawn from the " + std::string(split_name(batch.split)) + " split");
        const Theta theta = theta_for_step();
        net.params().zero_grad();
        Tape tape;
        Var logits = net.forward(tape, tape.reference(batch.images), theta, true);
        auto ce = softmax_cross_entropy(logits, batch.labels);
        const double loss = ce.loss.value().item();
        if (!std::isfinite(loss))
            throw TrainingError("non-finite training loss at epoch " + std::to_string(k) + ", step " + std::to_string(step_counter));
        if (first_loss && std::isnan(*first_loss)) *first_loss = loss;
        tape.backward(ce.loss);
        updater.step(net.params(), rec.lr, rec.phase, step_counter++);
        loss_sum += loss * double(n);
        for (std::size_t i = 0; i < n; ++i)
            correct += argmax_row(std::span<const double>(ce.probs.data() + i * ce.probs.dim(1), ce.probs.dim(1))) ==
                       std::size_t(batch.labels[i]);
    }
    if (!order.empty()) {
        rec.train_loss = loss_sum / double(order.size());
        rec.train_accuracy = double(correct) / double(order.size());
    }
    return rec;
}

} // namespace detail

/// Alternating updates: per epoch one first-order step on b from a validation
/// minibatch at a sampled theta, then one epoch of cSGLD on the supernet
/// weights with a fresh theta sample per minibatch.
inline SearchResult search_phase(const RunConfig& cfg, const ExperimentData& data) {
    cfg.validate();
    data.validate();
    const auto t0 = std::chrono::steady_clock::now();
    SupernetConfig netcfg = cfg.net;
    netcfg.in_channels = data.train.channels;
    netcfg.num_classes = data.train.num_classes;
    Supernet net(netcfg);
    Rng init_rng(cfg.seed, {std::uint64_t(Stream::WeightInit), 0});
    net.init_weights(init_rng);

    SearchResult res;
    res.seed = cfg.seed;
    res.params = ConcentrationParams(net.num_edges(), cfg.reg_weight);
    CsgldConfig sc = cfg.csgld;
    sc.n_data = std::max<std::size_t>(data.train.size(), 1);
    UpdateRule rule;
    rule.paper_literal = cfg.paper_literal_update;
    rule.grad_clip = sc.grad_clip;
    const LangevinUpdater updater(sc, derive_seed(cfg.seed, {std::uint64_t(Stream::LangevinNoise), 0}), rule);

    std::uint64_t step = 0;
    double first_loss = std::nan("");
    int diverged = 0;
    for (int k = 1; k <= sc.epochs; ++k) {
        EpochRecord rec;
        // (1) architecture step on one validation minibatch.
        if (data.val.size() > 0) {
            Rng arch_rng(cfg.seed, {std::uint64_t(Stream::ArchSample), 0, std::uint64_t(k)});
            const ArchSample sample = res.params.sample(arch_rng);
            Rng val_rng(cfg.seed, {std::uint64_t(Stream::ValBatch), std::uint64_t(k)});
            const auto order = detail::shuffled(data.val.size(), val_rng);
            const std::size_t n = std::min(sc.batch_size, order.size());
            const Batch batch = make_batch(data.val, std::span(order).first(n), data.stats);
            if (batch.split != Split::Val) throw InvariantError("architecture step must use the validation split");
            Tape tape;
            std::vector<Var> theta_vars;
            for (const auto& t : sample.theta)
                theta_vars.push_back(tape.variable(Tensor({kNumOps}, std::vector<double>(t.begin(), t.end()))));
            Var logits = net.forward(tape, tape.reference(batch.images), theta_vars, false);
            auto ce = softmax_cross_entropy(logits, batch.labels);
            rec.val_loss = ce.loss.value().item();
            tape.backward(ce.loss);
            Theta g(net.num_edges());
            for (std::size_t e = 0; e < g.size(); ++e) {
                const Tensor ge = tape.grad(theta_vars[e]);
                for (std::size_t o = 0; o < kNumOps; ++o) g[e][o] = ge[o];
            }
            const auto grad_b = arch_objective_grad(res.params, g, sample);
            arch_step(res.params.b(), grad_b, cfg.eta);
        }
        // (2) one epoch of weight updates.
        Rng shuffle_rng(cfg.seed, {std::uint64_t(Stream::Shuffle), 0, std::uint64_t(k)});
        Rng theta_rng(cfg.seed, {std::uint64_t(Stream::ArchSample), 1, std::uint64_t(k)});
        const ConcentrationParams& params = res.params;
        const EpochRecord w = detail::weight_epoch(
            net, data.train, data.stats, sc, k, updater, shuffle_rng,
            [&] { return params.sample(theta_rng).theta; }, step, &first_loss);
        rec.epoch = w.epoch;
        rec.lr = w.lr;
        rec.phase = w.phase;
        rec.train_loss = w.train_loss;
        rec.train_accuracy = w.train_accuracy;
        res.curve.push_back(rec);
        diverged = rec.train_loss > 10.0 * first_loss ? diverged + 1 : 0;
        if (diverged >= 3)
            throw TrainingError("search diverged: epoch " + std::to_string(k) + " train loss " +
                                std::to_string(rec.train_loss) + " exceeds 10x the initial loss " +
                                std::to_string(first_loss) + " for 3 consecutive epochs (lr " + std::to_string(rec.lr) + ")");
    }
    for (std::size_t e = 0; e < res.params.edges(); ++e)
        for (double v : res.params.beta(e))
            if (!(std::isfinite(v) && v > 0.0)) throw InvariantError("search produced a non-positive concentration");
    res.supernet_weights = net.params().flatten();
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

/// Architecture used by evaluation branch m2.
inline Theta evaluation_theta(const RunConfig& cfg, const ConcentrationParams& params, int m2) {
    if (!cfg.sample_architectures()) return params.mean();
    Rng rng(cfg.seed, {std::uint64_t(Stream::EvalArch), std::uint64_t(m2)});
    return params.sample(rng).theta;
}

namespace detail {

struct BranchResult {
    Theta theta;
    std::vector<std::pair<int, std::shared_ptr<const std::vector<double>>>> snapshots; ///< (epoch, weights)
    std::vector<EpochRecord> curve;
};

inline BranchResult run_branch(const RunConfig& cfg, const SearchResult& search, const ExperimentData& data, int m2) {
    BranchResult out;
    const Theta theta = evaluation_theta(cfg, search.params, m2);
    out.theta = effective_theta(theta, cfg.eval_mode);
    SupernetConfig netcfg = cfg.net;
    netcfg.in_channels = data.train.channels;
    netcfg.num_classes = data.train.num_classes;
    Supernet net(netcfg);
    if (cfg.inherit_weights && !search.supernet_weights.empty()) {
        net.params().assign(search.supernet_weights);
    } else {
        Rng init_rng(cfg.seed, {std::uint64_t(Stream::WeightInit), std::uint64_t(m2) + 1});
        net.init_weights(init_rng);
    }
    const CsgldConfig ec = cfg.eval_csgld(std::max<std::size_t>(data.train.size(), 1));
    UpdateRule rule;
    rule.noise = !cfg.deterministic_weights();
    rule.paper_literal = cfg.paper_literal_update;
    rule.grad_clip = ec.grad_clip;
    const LangevinUpdater updater(ec, derive_seed(cfg.seed, {std::uint64_t(Stream::LangevinNoise), std::uint64_t(m2) + 1}),
                                  rule);
    std::vector<int> keep;
    if (cfg.deterministic_weights()) {
        keep = {ec.epochs};
    } else {
        keep = snapshot_epochs(ec, cfg.M_w);
    }
    std::uint64_t step = 0;
    for (int k = 1; k <= ec.epochs; ++k) {
        Rng shuffle_rng(cfg.seed, {std::uint64_t(Stream::Shuffle), std::uint64_t(m2) + 1, std::uint64_t(k)});
        out.curve.push_back(weight_epoch(net, data.train, data.stats, ec, k, updater, shuffle_rng,
                                         [&] { return out.theta; }, step, nullptr));
        if (std::find(keep.begin(), keep.end(), k) != keep.end())
            out.snapshots.emplace_back(k, std::make_shared<const std::vector<double>>(net.params().flatten()));
    }
    if (ec.epochs == 0) out.snapshots.emplace_back(0, std::make_shared<const std::vector<double>>(net.params().flatten()));
    return out;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
/// only its own slot, so output does not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace detail

/// Retrains every architecture branch for 2K epochs and returns the ensemble
/// members, ordered round-robin across architectures with the latest
/// snapshot of each first, truncated to the ensemble cap.
inline EvalResult eval_phase(const RunConfig& cfg, const SearchResult& search, const ExperimentData& data) {
    cfg.validate();
    data.validate();
    if (search.params.edges() == 0) throw UsageError("eval_phase: search has not been run");
    const auto t0 = std::chrono::steady_clock::now();
    const int n_arch = cfg.architecture_count();
    std::vector<detail::BranchResult> branches(static_cast<std::size_t>(n_arch));
    detail::parallel_for(branches.size(), cfg.threads,
                         [&](std::size_t m2) { branches[m2] = detail::run_branch(cfg, search, data, int(m2)); });

    EvalResult res;
    std::size_t rounds = 0;
    for (const auto& b : branches) rounds = std::max(rounds, b.snapshots.size());
    const std::size_t cap = cfg.ensemble_cap > 0 ? std::size_t(cfg.ensemble_cap) : SIZE_MAX;
    for (std::size_t r = 0; r < rounds && res.members.size() < cap; ++r)
        for (std::size_t m2 = 0; m2 < branches.size() && res.members.size() < cap; ++m2) {
            const auto& snaps = branches[m2].snapshots;
            if (r >= snaps.size()) continue;
            const std::size_t m1 = snaps.size() - 1 - r;
            res.members.push_back({int(m1), int(m2), snaps[m1].first, branches[m2].theta, snaps[m1].second});
        }
    for (auto& b : branches) res.curves.push_back(std::move(b.curve));
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

/// Expected member count: min(cap, architectures * snapshots per architecture).
inline std::size_t expected_member_count(const RunConfig& cfg) {
    std::size_t per_arch = 1;
    if (!cfg.deterministic_weights())
        per_arch = std::size_t(cfg.csgld.cycles) * std::size_t(cfg.M_w / cfg.csgld.cycles);
    const std::size_t total = std::size_t(cfg.architecture_count()) * per_arch;
    return cfg.ensemble_cap > 0 ? std::min<std::size_t>(total, std::size_t(cfg.ensemble_cap)) : total;
}

/// Per-member softmax predictions on `ds`, normalised with the train stats.
inline PredictionSet predict_members(const RunConfig& cfg, std::span<const EnsembleMember> members,
                                     const ImageDataset& ds, const NormalizationStats& stats, std::size_t chunk = 250) {
    PredictionSet preds;
    preds.labels = ds.labels;
    preds.members.resize(members.size());
    const Batch batch = make_batch(ds, stats);
    SupernetConfig netcfg = cfg.net;
    netcfg.in_channels = ds.channels;
    netcfg.num_classes = ds.num_classes;
    detail::parallel_for(members.size(), cfg.threads, [&](std::size_t i) {
        Supernet net(netcfg);
        net.params().assign(*members[i].weights);
        preds.members[i] = ProbMatrix::from_tensor(net.predict_probs(batch.images, members[i].theta, chunk));
    });
    return preds;
}

/// Search once, then evaluate the configured variant.
struct VariantRun {
    SearchResult search;
    EvalResult eval;
};

inline VariantRun run_variant(const RunConfig& cfg, const ExperimentData& data) {
    VariantRun r;
    r.search = search_phase(cfg, data);
    r.eval = eval_phase(cfg, r.search, data);
    return r;
}

} // namespace uraenas
