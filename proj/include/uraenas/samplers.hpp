#pragma once

// Cyclical SGLD over network weights and plain gradient descent over the
// architecture log-concentrations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "uraenas/errors.hpp"
#include "uraenas/rng.hpp"
#include "uraenas/search_space.hpp"

namespace uraenas {

struct CsgldConfig {
    double alpha0 = 0.1;        ///< initial step size, loss scale
    int epochs = 30;            ///< K; the schedule is defined over [1, 2K]
    int cycles = 4;             ///< C
    double exploration = 0.7;   ///< r
    std::size_t n_data = 1;     ///< training-set size used for posterior scaling
    std::size_t batch_size = 64;
    int phase_cycles = 0;       ///< M in the exploration test; 0 means "same as C"
    double grad_clip = 0.0;     ///< global L2 clip on minibatch weight gradients; 0 disables

    void validate() const {
        if (!(alpha0 > 0.0)) throw ConfigError("alpha0 must be > 0", "/csgld/alpha0");
        if (cycles < 1) throw ConfigError("cycles must be >= 1", "/csgld/cycles");
        if (epochs < cycles && epochs != 0) throw ConfigError("epochs must be >= cycles", "/csgld/epochs");
        if (!(exploration >= 0.0 && exploration < 1.0))
            throw ConfigError("exploration must lie in [0, 1)", "/csgld/exploration");
        if (n_data < 1) throw ConfigError("n_data must be >= 1", "/csgld/n_data");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1", "/csgld/batch_size");
        if (phase_cycles < 0) throw ConfigError("phase_cycles must be >= 0", "/csgld/phase_cycles");
        if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0", "/csgld/grad_clip");
    }

    /// ceil(K / C)
    int cycle_length() const { return std::max(1, (epochs + cycles - 1) / cycles); }
    /// ceil(K / M), the divisor used by the exploration test.
    int phase_cycle_length() const {
        const int m = phase_cycles > 0 ? phase_cycles : cycles;
        return std::max(1, (epochs + m - 1) / m);
    }
};

enum class Phase { Exploration, Sampling };

/// alpha_k = alpha0/2 * [cos(pi * mod(k-1, ceil(K/C)) / ceil(K/C)) + 1]
inline double lr_schedule(int k, const CsgldConfig& cfg) {
    const int L = cfg.cycle_length();
    const double frac = double((k - 1) % L) / double(L);
    return cfg.alpha0 / 2.0 * (std::cos(std::numbers::pi * frac) + 1.0);
}

/// Exploration iff mod(k-1, L) / L < r.
inline Phase phase_of(int k, const CsgldConfig& cfg) {
    const int L = cfg.phase_cycle_length();
    return double((k - 1) % L) / double(L) < cfg.exploration ? Phase::Exploration : Phase::Sampling;
}

/// Zero-based cycle containing epoch k.
inline int cycle_of(int k, const CsgldConfig& cfg) { return (k - 1) / cfg.cycle_length(); }

/// Epochs (1-based, ascending) whose weights are stored: the last
/// floor(M_w / C) sampling epochs of every cycle over cfg.epochs epochs.
inline std::vector<int> snapshot_epochs(const CsgldConfig& cfg, int weight_ensembles) {
    const int per_cycle = weight_ensembles / cfg.cycles;
    if (per_cycle < 1) throw ConfigError("M_w must be >= C so that floor(M_w / C) >= 1", "/M_w");
    std::vector<int> out;
    const int L = cfg.cycle_length();
    for (int start = 1; start <= cfg.epochs; start += L) {
        std::vector<int> sampling;
        for (int k = start; k < start + L && k <= cfg.epochs; ++k)
            if (phase_of(k, cfg) == Phase::Sampling) sampling.push_back(k);
        if (int(sampling.size()) < per_cycle)
            throw ConfigError("cycle starting at epoch " + std::to_string(start) + " has " +
                                  std::to_string(sampling.size()) + " sampling epochs, need " +
                                  std::to_string(per_cycle) + " (exploration fraction too large)",
                              "/csgld/exploration");
        out.insert(out.end(), sampling.end() - per_cycle, sampling.end());
    }
    return out;
}

/// Gradient of the negative log posterior with a N(0, I) prior:
/// N_data * (mean minibatch loss gradient) + w.
inline std::vector<double> posterior_grad(std::span<const double> w, std::span<const double> minibatch_grad,
                                          std::size_t n_data) {
    if (w.size() != minibatch_grad.size()) throw DimensionError("posterior_grad: size mismatch");
    std::vector<double> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        out[i] = double(n_data) * minibatch_grad[i] + w[i];
        if (!std::isfinite(out[i])) throw TrainingError("posterior_grad: non-finite gradient at index " + std::to_string(i));
    }
    return out;
}

/// w - (alpha / N) grad_U; alpha is in loss scale.
inline std::vector<double> step_explore(std::span<const double> w, std::span<const double> grad_U, double alpha,
                                        std::size_t n_data) {
    std::vector<double> out(w.size());
    const double eps = alpha / double(n_data);
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] - eps * grad_U[i];
    return out;
}

/// Langevin step in posterior scale eps = alpha / N:
/// w - eps grad_U + sqrt(2 eps) xi, xi ~ N(0, I) from `rng`.
inline std::vector<double> step_sample(std::span<const double> w, std::span<const double> grad_U, double alpha,
                                       std::size_t n_data, Rng& rng) {
    std::vector<double> out(w.size());
    const double eps = alpha / double(n_data);
    const double sd = std::sqrt(2.0 * eps);
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] - eps * grad_U[i] + sd * rng.normal();
    return out;
}

/// b' = clamp(b - eta * grad, -10, 10)
inline void arch_step(std::vector<EdgeTheta>& b, const std::vector<EdgeTheta>& grad, double eta) {
    if (b.size() != grad.size()) throw DimensionError("arch_step: edge count mismatch");
    for (std::size_t e = 0; e < b.size(); ++e)
        for (std::size_t o = 0; o < kNumOps; ++o) b[e][o] = std::clamp(b[e][o] - eta * grad[e][o], -10.0, 10.0);
}

struct UpdateRule {
    bool prior = true;          ///< include the N(0, I) prior term w / N
    bool noise = true;          ///< inject Gaussian noise during sampling epochs
    bool paper_literal = false; ///< w - alpha g + sqrt(2 alpha) eps, no N scaling, no prior
    double grad_clip = 0.0;     ///< rescale the minibatch gradient to this global L2 norm; 0 disables
};

/// Applies cSGLD updates to a ParameterSet in place, working in loss scale:
/// w -= alpha (g + w / N) and, in sampling epochs, w += sqrt(2 alpha / N) xi.
/// Noise for tensor t at global step s comes from its own stream keyed by
/// (seed, t, s), so results do not depend on evaluation order.
class LangevinUpdater {
public:
    LangevinUpdater(CsgldConfig cfg, std::uint64_t seed, UpdateRule rule = {})
        : cfg_(cfg), seed_(seed), rule_(rule) {}

    const UpdateRule& rule() const noexcept { return rule_; }

    void step(ParameterSet& params, double alpha, Phase phase, std::uint64_t step_index) const {
        const double inv_n = 1.0 / double(cfg_.n_data);
        const bool sampling = phase == Phase::Sampling && rule_.noise;
        const double sd = rule_.paper_literal ? std::sqrt(2.0 * alpha) : std::sqrt(2.0 * alpha * inv_n);
        double norm2 = 0.0;
        for (std::size_t t = 0; t < params.tensors(); ++t) {
            const Tensor& g = params.grad(t);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (!std::isfinite(g[i]))
                    throw TrainingError("non-finite gradient in parameter '" + params.name(t) + "'");
                norm2 += g[i] * g[i];
            }
        }
        const double gs = rule_.grad_clip > 0.0 && norm2 > rule_.grad_clip * rule_.grad_clip
                              ? rule_.grad_clip / std::sqrt(norm2)
                              : 1.0;
        for (std::size_t t = 0; t < params.tensors(); ++t) {
            Tensor& w = params.value(t);
            const Tensor& g = params.grad(t);
            if (gs != 1.0) {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= alpha * (gs * g[i]);
                if (rule_.prior && !rule_.paper_literal)
                    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= alpha * w[i] * inv_n;
            } else if (rule_.prior && !rule_.paper_literal) {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= alpha * (g[i] + w[i] * inv_n);
            } else {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= alpha * g[i];
            }
            if (sampling) {
                Rng rng(seed_, {std::uint64_t(Stream::LangevinNoise), t, step_index});
                for (std::size_t i = 0; i < w.size(); ++i) w[i] += sd * rng.normal();
            }
        }
    }

private:
    CsgldConfig cfg_;
    std::uint64_t seed_;
    UpdateRule rule_;
};

} // namespace uraenas
