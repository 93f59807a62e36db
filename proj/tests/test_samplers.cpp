#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "uraenas/samplers.hpp"

using namespace uraenas;

namespace {

CsgldConfig schedule(int K, int C, double r = 0.7) {
    CsgldConfig c;
    c.epochs = K;
    c.cycles = C;
    c.exploration = r;
    c.alpha0 = 0.1;
    return c;
}

} // namespace

TEST(Schedule, ClosedFormAcrossCycles) {
    const CsgldConfig c = schedule(10, 3); // L = ceil(10/3) = 4
    EXPECT_EQ(c.cycle_length(), 4);
    const double pi = std::numbers::pi;
    for (int k = 1; k <= 20; ++k) {
        const int m = (k - 1) % 4;
        EXPECT_EQ(lr_schedule(k, c), 0.05 * (std::cos(pi * m / 4.0) + 1.0)) << k;
    }
    EXPECT_EQ(lr_schedule(1, c), 0.1);
    EXPECT_EQ(lr_schedule(5, c), 0.1);
}

TEST(Schedule, PhaseBoundary) {
    const CsgldConfig c = schedule(20, 2, 0.7); // L = 10: epochs 1..7 explore, 8..10 sample
    for (int k = 1; k <= 7; ++k) EXPECT_EQ(phase_of(k, c), Phase::Exploration) << k;
    for (int k = 8; k <= 10; ++k) EXPECT_EQ(phase_of(k, c), Phase::Sampling) << k;
    EXPECT_EQ(phase_of(11, c), Phase::Exploration);
    EXPECT_EQ(cycle_of(10, c), 0);
    EXPECT_EQ(cycle_of(11, c), 1);
}

TEST(Schedule, SnapshotEpochs) {
    EXPECT_EQ(snapshot_epochs(schedule(40, 2), 4), (std::vector<int>{19, 20, 39, 40}));
    EXPECT_EQ(snapshot_epochs(schedule(40, 2), 5), (std::vector<int>{19, 20, 39, 40}));
    EXPECT_EQ(snapshot_epochs(schedule(8, 2), 2), (std::vector<int>{4, 8}));
}

TEST(Schedule, TooFewSamplingEpochsIsAConfigError) {
    try {
        snapshot_epochs(schedule(10, 2, 0.7), 8);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.pointer(), "/csgld/exploration");
    }
    EXPECT_THROW(snapshot_epochs(schedule(10, 4), 3), ConfigError);
}

TEST(Schedule, ValidateNamesTheField) {
    CsgldConfig c = schedule(10, 2);
    c.exploration = 1.0;
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.pointer(), "/csgld/exploration");
    }
    c = schedule(3, 4);
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Langevin, PosteriorGradScalesAndAddsPrior) {
    const std::vector<double> w = {1.0, -2.0}, g = {0.5, 0.25};
    EXPECT_EQ(posterior_grad(w, g, 4), (std::vector<double>{3.0, -1.0}));
    const std::vector<double> bad = {std::nan(""), 0.0};
    EXPECT_THROW(posterior_grad(w, bad, 4), TrainingError);
}

TEST(Langevin, ExploreStepIsPlainDescent) {
    const std::vector<double> w = {1.0, 2.0}, g = {4.0, -8.0};
    EXPECT_EQ(step_explore(w, g, 0.5, 2), (std::vector<double>{0.0, 4.0}));
}

TEST(Langevin, SampleStepNoiseVariance) {
    Rng rng(1);
    const std::vector<double> w(20000, 0.0), g(20000, 0.0);
    const auto out = step_sample(w, g, 0.3, 3, rng);
    double s2 = 0.0;
    for (double v : out) s2 += v * v;
    EXPECT_NEAR(s2 / double(out.size()), 0.2, 0.01); // 2 * 0.3 / 3
}

TEST(Langevin, GaussianTargetMoments) {
    // U = 0.5 (w - mu)' P (w - mu); constant posterior-scale step.
    const double mu[2] = {2.0, -1.0};
    const double S[2][2] = {{2.0, -0.6}, {-0.6, 0.5}};
    const double det = S[0][0] * S[1][1] - S[0][1] * S[1][0];
    const double P[2][2] = {{S[1][1] / det, -S[0][1] / det}, {-S[1][0] / det, S[0][0] / det}};
    Rng rng(2);
    std::vector<double> w = {0.0, 0.0};
    double m[2] = {0, 0}, c[2][2] = {{0, 0}, {0, 0}};
    // The slow mode has precision 0.45, so mixing takes ~1/(0.01 * 0.45) steps.
    const int burn = 5000, n = 200000;
    for (int k = 0; k < burn + n; ++k) {
        const double d0 = w[0] - mu[0], d1 = w[1] - mu[1];
        const std::vector<double> g = {P[0][0] * d0 + P[0][1] * d1, P[1][0] * d0 + P[1][1] * d1};
        w = step_sample(w, g, 0.01, 1, rng);
        if (k < burn) continue;
        for (int i = 0; i < 2; ++i) {
            m[i] += w[i] / n;
            for (int j = 0; j < 2; ++j) c[i][j] += w[i] * w[j] / n;
        }
    }
    double fro = 0.0, ref = 0.0;
    for (int i = 0; i < 2; ++i) {
        EXPECT_NEAR(m[i], mu[i], 0.05 * std::sqrt(S[i][i]));
        for (int j = 0; j < 2; ++j) {
            const double e = c[i][j] - m[i] * m[j] - S[i][j];
            fro += e * e;
            ref += S[i][j] * S[i][j];
        }
    }
    EXPECT_LT(std::sqrt(fro / ref), 0.1);
}

TEST(Langevin, NoiseFreeUpdaterIsCosineSgd) {
    ParameterSet ps;
    ps.add("w", Tensor({3}, {0.5, -1.0, 2.0}));
    const CsgldConfig cfg = schedule(6, 2, 0.5);
    UpdateRule rule;
    rule.noise = false;
    rule.prior = false;
    const LangevinUpdater up(cfg, 7, rule);
    std::vector<double> ref = {0.5, -1.0, 2.0};
    for (int k = 1; k <= 12; ++k) {
        for (std::size_t i = 0; i < 3; ++i) ps.grad(0)[i] = std::sin(double(k + int(i)));
        const double lr = lr_schedule(k, cfg);
        up.step(ps, lr, phase_of(k, cfg), std::uint64_t(k));
        for (std::size_t i = 0; i < 3; ++i) ref[i] -= lr * std::sin(double(k + int(i)));
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ps.value(0)[i], ref[i]);
}

TEST(Langevin, SamplingPhaseNoiseIsKeyedByStep) {
    auto run = [](std::uint64_t step) {
        ParameterSet ps;
        ps.add("w", Tensor({4}));
        CsgldConfig cfg = schedule(4, 1);
        cfg.n_data = 10;
        LangevinUpdater(cfg, 3).step(ps, 0.1, Phase::Sampling, step);
        return ps.flatten();
    };
    EXPECT_EQ(run(5), run(5));
    EXPECT_NE(run(5), run(6));
}

TEST(Langevin, NonFiniteGradientIsReported) {
    ParameterSet ps;
    ps.add("layer", Tensor({2}));
    ps.grad(0)[1] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(LangevinUpdater(schedule(4, 1), 1).step(ps, 0.1, Phase::Exploration, 0), TrainingError);
}

TEST(Langevin, GradientClipBoundsTheStep) {
    ParameterSet ps;
    ps.add("w", Tensor({2}));
    ps.grad(0)[0] = 30.0;
    ps.grad(0)[1] = 40.0;
    UpdateRule rule;
    rule.grad_clip = 5.0;
    rule.prior = false;
    LangevinUpdater(schedule(4, 1), 1, rule).step(ps, 0.1, Phase::Exploration, 0);
    EXPECT_NEAR(ps.value(0)[0], -0.3, 1e-15);
    EXPECT_NEAR(ps.value(0)[1], -0.4, 1e-15);
}
