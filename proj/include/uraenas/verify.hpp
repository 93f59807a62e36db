#pragma once

// Self-check suites run by `uraenas verify`: small, fast versions of the
// property tests that can be executed against an installed build.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "uraenas/arch_dist.hpp"
#include "uraenas/data.hpp"
#include "uraenas/metrics.hpp"
#include "uraenas/samplers.hpp"
#include "uraenas/search_space.hpp"
#include "uraenas/tensor.hpp"

namespace uraenas::verify {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// Faults that can be injected to confirm that a suite actually fails.
struct Faults {
    bool gradient = false; ///< perturb analytic gradients before comparison
    bool schedule = false; ///< shift the enumerated learning rate by one epoch
};

inline double rel_err(double a, double b, double floor) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

inline SuiteResult tensor_gradients(const Faults& f) {
    SuiteResult r{"tensor-gradients", true, "", 0.0};
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        auto rand = [&](Shape s) {
            Tensor t(std::move(s));
            for (auto& v : t.values()) v = rng.normal();
            return t;
        };
        const Tensor x = rand({2, 3, 4, 4}), k3 = rand({3, 3, 3, 3}), k1 = rand({6, 6, 1, 1}), w = rand({6, 4}),
                     b = rand({4});
        const std::vector<int> labels = {1, 3};
        auto build = [&](Tape& tape, const Var& xin) {
            Var h = conv2d(relu(xin), tape.constant(k3), 1, 1);
            Var c = concat_channels({avg_pool3x3(h, 2), avg_pool3x3(xin, 2)});
            Var y = conv2d(c, tape.constant(k1), 1, 0);
            Var logits = linear(global_avg_pool(y), tape.constant(w), tape.constant(b));
            return softmax_cross_entropy(logits, labels).loss;
        };
        auto eval = [&](const Tensor& xv) {
            Tape tape;
            return build(tape, tape.constant(xv)).value().item();
        };
        Tape tape;
        Var xin = tape.variable(x);
        tape.backward(build(tape, xin));
        Tensor g = tape.grad(xin);
        if (f.gradient) g[0] += 1e-2;
        const Tensor fd = finite_diff_grad(eval, x, 1e-5);
        for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, rel_err(g[i], fd[i], 1e-6));
    }
    r.passed = worst <= 1e-4;
    r.detail = "max rel err " + std::to_string(worst) + " (tol 1e-4, h 1e-5, 10 seeds)";
    return r;
}

inline SuiteResult supernet_gradient(const Faults& f) {
    SuiteResult r{"supernet-gradient", true, "", 0.0};
    SupernetConfig cfg;
    cfg.c0 = 2;
    cfg.num_classes = 3;
    Supernet net(cfg);
    Rng rng(11);
    net.init_weights(rng);
    Tensor x({2, 3, 8, 8});
    for (auto& v : x.values()) v = rng.normal();
    const std::vector<int> labels = {0, 2};
    Rng arch(3);
    ConcentrationParams cp(net.num_edges());
    const Theta theta = cp.sample(arch).theta;
    auto loss_of = [&](const Tensor& flat) {
        Supernet probe(cfg);
        probe.params().assign(flat.values());
        Tape tape;
        Var logits = probe.forward(tape, tape.constant(x), theta, false);
        return softmax_cross_entropy(logits, labels).loss.value().item();
    };
    net.params().zero_grad();
    Tape tape;
    Var logits = net.forward(tape, tape.constant(x), theta, true);
    tape.backward(softmax_cross_entropy(logits, labels).loss);
    const auto flat = net.params().flatten();
    std::vector<double> g;
    for (std::size_t t = 0; t < net.params().tensors(); ++t)
        g.insert(g.end(), net.params().grad(t).values().begin(), net.params().grad(t).values().end());
    if (f.gradient) g[g.size() / 2] *= 1.01;
    const Tensor fd = finite_diff_grad(loss_of, Tensor({flat.size()}, flat), 1e-5);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, rel_err(g[i], fd[i], 1e-7));
    r.passed = worst <= 1e-4;
    r.detail = std::to_string(g.size()) + " weights, max rel err " + std::to_string(worst) + " (tol 1e-4)";
    return r;
}

inline SuiteResult dirichlet_moments(const Faults&) {
    SuiteResult r{"dirichlet-moments", true, "", 0.0};
    const EdgeTheta beta = {2.0, 5.0, 1.0, 0.5, 3.0};
    double a0 = 0.0;
    for (double b : beta) a0 += b;
    const int n = 20000;
    EdgeTheta mean{}, sq{};
    double worst_sum = 0.0;
    bool positive = true;
    Rng rng(7);
    for (int i = 0; i < n; ++i) {
        const auto d = sample_dirichlet(beta, rng);
        double s = 0.0;
        for (std::size_t o = 0; o < kNumOps; ++o) {
            mean[o] += d.theta[o];
            sq[o] += d.theta[o] * d.theta[o];
            s += d.theta[o];
            positive = positive && d.theta[o] > 0.0;
        }
        worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
    }
    double worst_z = 0.0;
    for (std::size_t o = 0; o < kNumOps; ++o) {
        const double m = beta[o] / a0;
        const double var = m * (1.0 - m) / (a0 + 1.0);
        worst_z = std::max(worst_z, std::fabs(mean[o] / n - m) / std::sqrt(var / n));
        const double v_hat = sq[o] / n - (mean[o] / n) * (mean[o] / n);
        worst_z = std::max(worst_z, std::fabs(v_hat - var) / (var * std::sqrt(2.0 / n) * 3.0));
    }
    r.passed = positive && worst_sum <= 1e-9 && worst_z <= 5.0;
    r.detail = "max |sum-1| " + std::to_string(worst_sum) + ", max z-score " + std::to_string(worst_z) + " (tol 5)";
    return r;
}

inline SuiteResult gamma_pathwise(const Faults& f) {
    SuiteResult r{"gamma-pathwise", true, "", 0.0};
    // E[z] = alpha, so the pathwise derivative must average to 1.
    double worst = 0.0;
    for (double alpha : {0.3, 1.0, 4.0, 20.0}) {
        Rng rng(17);
        const int n = 20000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = sample_gamma(alpha, rng).dz_dalpha();
            if (f.gradient) d *= 1.2;
            s += d;
            s2 += d * d;
        }
        const double m = s / n, se = std::sqrt((s2 / n - m * m) / n);
        worst = std::max(worst, std::fabs(m - 1.0) / se);
    }
    r.passed = worst <= 5.0;
    r.detail = "max z-score of mean dz/dalpha vs 1: " + std::to_string(worst) + " (tol 5)";
    return r;
}

inline SuiteResult csgld_gaussian(const Faults&) {
    SuiteResult r{"csgld-gaussian", true, "", 0.0};
    // U(w) = 0.5 (w - mu)^T P (w - mu), sampled with a constant step in posterior
    // scale. Euler discretisation inflates the variance along precision
    // eigenvalue l by 1 / (1 - eps l / 2); eps l <= 0.1 keeps that near 5%
    // while the chain mixes in ~2 / (eps l) steps.
    const double mu[2] = {1.0, -0.5};
    const double S[2][2] = {{1.0, 0.2}, {0.2, 1.0}};
    const double det = S[0][0] * S[1][1] - S[0][1] * S[1][0];
    const double P[2][2] = {{S[1][1] / det, -S[0][1] / det}, {-S[1][0] / det, S[0][0] / det}};
    Rng rng(5);
    std::vector<double> w = {0.0, 0.0};
    const double eps = 0.08;
    const int burn = 1000, n = 49000; // 50k steps in total
    double m[2] = {0, 0}, c[2][2] = {{0, 0}, {0, 0}};
    for (int k = 0; k < burn + n; ++k) {
        const double d0 = w[0] - mu[0], d1 = w[1] - mu[1];
        const std::vector<double> g = {P[0][0] * d0 + P[0][1] * d1, P[1][0] * d0 + P[1][1] * d1};
        w = step_sample(w, g, eps, 1, rng);
        if (k < burn) continue;
        for (int i = 0; i < 2; ++i) {
            m[i] += w[i];
            for (int j = 0; j < 2; ++j) c[i][j] += w[i] * w[j];
        }
    }
    double mean_err = 0.0, fro = 0.0, fro_ref = 0.0;
    for (int i = 0; i < 2; ++i) m[i] /= n;
    for (int i = 0; i < 2; ++i) mean_err = std::max(mean_err, std::fabs(m[i] - mu[i]) / std::sqrt(S[i][i]));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double cij = c[i][j] / n - m[i] * m[j];
            fro += (cij - S[i][j]) * (cij - S[i][j]);
            fro_ref += S[i][j] * S[i][j];
        }
    const double cov_err = std::sqrt(fro / fro_ref);
    r.passed = mean_err <= 0.05 && cov_err <= 0.10;
    r.detail = "mean err " + std::to_string(mean_err) + " (tol 0.05), cov Frobenius rel err " + std::to_string(cov_err) +
               " (tol 0.10)";
    return r;
}

inline SuiteResult schedule_enumeration(const Faults& f) {
    SuiteResult r{"schedule-enumeration", true, "", 0.0};
    int mismatches = 0, combos = 0;
    for (int K : {5, 10, 12, 30, 40})
        for (int C : {1, 2, 3, 4}) {
            CsgldConfig cfg;
            cfg.epochs = K;
            cfg.cycles = C;
            cfg.alpha0 = 0.1;
            ++combos;
            const int L = (K + C - 1) / C;
            for (int k = 1; k <= 2 * K; ++k) {
                const int kk = f.schedule ? k + 1 : k;
                const double frac = double((kk - 1) % L) / double(L);
                const double want = 0.05 * (std::cos(std::numbers::pi * frac) + 1.0);
                mismatches += lr_schedule(k, cfg) != want;
            }
        }
    CsgldConfig cfg;
    cfg.epochs = 40;
    cfg.cycles = 2;
    cfg.exploration = 0.7;
    const bool snap_ok = snapshot_epochs(cfg, 4) == std::vector<int>{19, 20, 39, 40};
    r.passed = mismatches == 0 && snap_ok;
    r.detail = std::to_string(combos) + " (K, C) combinations, " + std::to_string(mismatches) +
               " mismatches (exact), snapshots (2K=40, C=2, r=0.7, M_w=4) " + (snap_ok ? "{19,20,39,40}" : "wrong");
    return r;
}

inline SuiteResult metric_oracles(const Faults&) {
    SuiteResult r{"metric-oracles", true, "", 0.0};
    Rng rng(9);
    double worst = 0.0;
    bool jensen = true;
    for (int fx = 0; fx < 100; ++fx) {
        const std::size_t n = 50, k = 4, members = 3;
        PredictionSet ps;
        for (std::size_t i = 0; i < n; ++i) ps.labels.push_back(int(rng.index(k)));
        for (std::size_t m = 0; m < members; ++m) {
            ProbMatrix pm(n, k);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < k; ++c) s += pm.at(i, c) = std::exp(2.0 * rng.normal());
                for (std::size_t c = 0; c < k; ++c) pm.at(i, c) /= s;
            }
            ps.members.push_back(std::move(pm));
        }
        const ProbMatrix avg = ensemble_average(ps);
        double nll_loop = 0.0, acc_loop = 0.0;
        std::vector<double> bc(15, 0.0), ba(15, 0.0), bn(15, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            nll_loop -= std::log(std::max(avg.at(i, std::size_t(ps.labels[i])), 1e-12));
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (avg.at(i, c) > avg.at(i, best)) best = c;
            acc_loop += best == std::size_t(ps.labels[i]);
            for (std::size_t b = 0; b < 15; ++b)
                if (avg.at(i, best) > double(b) / 15.0 && avg.at(i, best) <= double(b + 1) / 15.0) {
                    bn[b] += 1;
                    bc[b] += avg.at(i, best);
                    ba[b] += best == std::size_t(ps.labels[i]);
                }
        }
        double ece_loop = 0.0;
        for (std::size_t b = 0; b < 15; ++b)
            if (bn[b] > 0) ece_loop += bn[b] / double(n) * std::fabs(ba[b] / bn[b] - bc[b] / bn[b]);
        worst = std::max({worst, std::fabs(nll(avg, ps.labels) - nll_loop / double(n)),
                          std::fabs(accuracy(avg, ps.labels) - acc_loop / double(n)),
                          std::fabs(ece(avg, ps.labels).ece - ece_loop)});
        double mean_member = 0.0;
        for (const auto& m : ps.members) mean_member += nll(m, ps.labels) / double(members);
        jensen = jensen && nll(avg, ps.labels) <= mean_member + 1e-12;
    }
    r.passed = worst <= 1e-12 && jensen;
    r.detail = "100 fixtures, max abs diff " + std::to_string(worst) + " (tol 1e-12), Jensen bound " + (jensen ? "holds" : "violated");
    return r;
}

inline SuiteResult corruption_determinism(const Faults&) {
    SuiteResult r{"corruption-determinism", true, "", 0.0};
    SynthSpec s;
    s.n = 20;
    s.split = Split::Test;
    const ImageDataset test = synth_dataset(s, 3);
    const auto a = build_corrupted_suite(test, 4), b = build_corrupted_suite(test, 4);
    bool same = a.size() == 30;
    for (const auto& [key, ds] : a) same = same && content_hash(ds) == content_hash(b.at(key)) && ds.labels == test.labels;
    std::vector<std::uint8_t> grey(3 * 4 * 4, 128);
    const auto bright = corrupt(grey, 3, 4, 4, corruption_spec(CorruptionKind::Brightness, 1), 0);
    const bool arithmetic = std::all_of(bright.begin(), bright.end(), [](auto v) { return v == 154; });
    r.passed = same && arithmetic;
    r.detail = std::string("30 copies reproducible: ") + (same ? "yes" : "no") + ", brightness(128, sev 1) = 154: " +
               (arithmetic ? "yes" : "no");
    return r;
}

inline std::vector<std::pair<std::string, std::function<SuiteResult(const Faults&)>>> suites() {
    return {{"tensor-gradients", tensor_gradients},         {"supernet-gradient", supernet_gradient},
            {"dirichlet-moments", dirichlet_moments},       {"gamma-pathwise", gamma_pathwise},
            {"csgld-gaussian", csgld_gaussian},             {"schedule-enumeration", schedule_enumeration},
            {"metric-oracles", metric_oracles},             {"corruption-determinism", corruption_determinism}};
}

inline std::vector<SuiteResult> run_all(const Faults& f) {
    std::vector<SuiteResult> out;
    for (const auto& [name, fn] : suites()) {
        const auto t0 = std::chrono::steady_clock::now();
        SuiteResult r;
        try {
            r = fn(f);
        } catch (const std::exception& e) {
            r = {name, false, std::string("exception: ") + e.what(), 0.0};
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace uraenas::verify
