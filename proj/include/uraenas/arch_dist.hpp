#pragma once

// Dirichlet distribution over per-edge mixing weights with pathwise
// (implicit reparameterisation) gradients, and the regularised architecture
// objective gradient in the unconstrained log-concentration b.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "uraenas/errors.hpp"
#include "uraenas/rng.hpp"
#include "uraenas/search_space.hpp"

namespace uraenas {

namespace special {

/// Series sum S with P(a, x) = x^a e^-x / Gamma(a+1) * S. Accurate for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double term = 1.0, sum = 1.0;
    for (int n = 1; n < 10000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (term < sum * 1e-17) break;
    }
    return sum;
}

/// Continued fraction h with Q(a, x) = x^a e^-x / Gamma(a) * h (modified Lentz).
/// Accurate for x >= a + 1.
inline double gamma_q_cf(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) break;
    }
    return h;
}

/// log P(a, x) given log x, for the lower regime.
inline double log_gamma_p(double a, double log_x) {
    const double x = std::exp(log_x);
    return a * log_x - x - std::lgamma(a + 1.0) + std::log(gamma_p_series(a, x));
}

/// log Q(a, x) given log x, for the upper regime.
inline double log_gamma_q(double a, double log_x) {
    const double x = std::exp(log_x);
    return a * log_x - x - std::lgamma(a) + std::log(gamma_q_cf(a, x));
}

/// Regularised lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
    if (x <= 0.0) return 0.0;
    if (x < a + 1.0) return std::exp(log_gamma_p(a, std::log(x)));
    return 1.0 - std::exp(log_gamma_q(a, std::log(x)));
}

} // namespace special

inline const double kMinConcentration = std::exp(-10.0);
inline const double kMaxConcentration = std::exp(10.0);

/// A Gamma(alpha, 1) draw kept in log space, with the pathwise derivative of
/// log z with respect to alpha.
struct GammaDraw {
    double log_z = 0.0;
    double dlogz_dalpha = 0.0;
    double z() const { return std::exp(log_z); }
    double dz_dalpha() const { return std::exp(log_z) * dlogz_dalpha; }
};

/// d log z / d alpha holding the CDF value F(z; alpha) fixed:
/// dz/dalpha = -(dF/dalpha) / pdf(z). dF/dalpha comes from a central
/// difference of log P (or log Q in the upper tail) with step 1e-5 * max(1, alpha).
inline double gamma_dlogz_dalpha(double alpha, double log_z) {
    const double z = std::exp(log_z);
    const double h = 1e-5 * std::max(1.0, alpha);
    const double lo = std::max(alpha - h, alpha * 0.5);
    const double hi = alpha + h;
    if (z < alpha + 1.0) {
        // log P - log(z pdf(z)) = log S - log alpha
        const double dlogp = (special::log_gamma_p(hi, log_z) - special::log_gamma_p(lo, log_z)) / (hi - lo);
        return -special::gamma_p_series(alpha, z) / alpha * dlogp;
    }
    // log Q - log(z pdf(z)) = log h
    const double dlogq = (special::log_gamma_q(hi, log_z) - special::log_gamma_q(lo, log_z)) / (hi - lo);
    return special::gamma_q_cf(alpha, z) * dlogq;
}

/// Marsaglia-Tsang Gamma(alpha, 1) sampler, boosted by u^(1/alpha) when alpha < 1.
inline GammaDraw sample_gamma(double alpha, Rng& rng) {
    if (!(alpha >= kMinConcentration * (1.0 - 1e-12) && alpha <= kMaxConcentration * (1.0 + 1e-12)))
        throw InputError("sample_gamma: alpha " + std::to_string(alpha) + " outside [e^-10, e^10]");
    const double a = alpha < 1.0 ? alpha + 1.0 : alpha;
    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    double log_z = 0.0;
    for (;;) {
        const double x = rng.normal();
        const double v0 = 1.0 + c * x;
        if (v0 <= 0.0) continue;
        const double v = v0 * v0 * v0;
        const double u = rng.uniform_open();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
            log_z = std::log(d) + std::log(v);
            break;
        }
    }
    if (alpha < 1.0) log_z += std::log(rng.uniform_open()) / alpha;
    return {log_z, gamma_dlogz_dalpha(alpha, log_z)};
}

/// One Dirichlet draw for one edge: theta = z / sum z computed as a softmax of
/// log z, plus d log z_o / d beta_o for the pathwise gradient.
struct DirichletDraw {
    EdgeTheta theta{};
    EdgeTheta log_z{};
    EdgeTheta dlogz_dbeta{};
};

inline DirichletDraw sample_dirichlet(const EdgeTheta& beta, Rng& rng) {
    DirichletDraw out;
    for (std::size_t o = 0; o < kNumOps; ++o) {
        if (!(beta[o] > 0.0)) throw InputError("sample_dirichlet: concentration must be positive");
        const GammaDraw g = sample_gamma(beta[o], rng);
        out.log_z[o] = g.log_z;
        out.dlogz_dbeta[o] = g.dlogz_dalpha;
    }
    double m = out.log_z[0];
    for (double v : out.log_z) m = std::max(m, v);
    double total = 0.0;
    for (std::size_t o = 0; o < kNumOps; ++o) total += (out.theta[o] = std::exp(out.log_z[o] - m));
    // Extreme concentrations can underflow a coordinate; keep it strictly positive.
    for (auto& t : out.theta) t = std::max(t / total, std::numeric_limits<double>::min());
    return out;
}

/// Pathwise Jacobian of one draw: d theta_i / d beta_j = theta_i (delta_ij - theta_j) d log z_j / d beta_j.
inline std::array<EdgeTheta, kNumOps> dirichlet_jacobian(const DirichletDraw& d) {
    std::array<EdgeTheta, kNumOps> J{};
    for (std::size_t i = 0; i < kNumOps; ++i)
        for (std::size_t j = 0; j < kNumOps; ++j)
            J[i][j] = d.theta[i] * ((i == j ? 1.0 : 0.0) - d.theta[j]) * d.dlogz_dbeta[j];
    return J;
}

inline EdgeTheta dirichlet_mean(const EdgeTheta& beta) {
    double total = 0.0;
    for (double b : beta) {
        if (!(b > 0.0)) throw InputError("dirichlet_mean: concentration must be positive");
        total += b;
    }
    EdgeTheta m{};
    for (std::size_t o = 0; o < kNumOps; ++o) m[o] = beta[o] / total;
    return m;
}

/// Joint draw over every edge.
struct ArchSample {
    Theta theta;
    std::vector<DirichletDraw> draws;
};

/// Per-edge unconstrained parameters b with beta = exp(b), anchor beta-hat = 1
/// and the weight lambda of the squared-distance regulariser.
class ConcentrationParams {
public:
    static constexpr double kClamp = 10.0;

    ConcentrationParams() = default;
    explicit ConcentrationParams(std::size_t edges, double reg_weight = 1e-3)
        : b_(edges, EdgeTheta{}), lambda_(reg_weight) {
        if (!(reg_weight >= 0.0)) throw ConfigError("reg_weight must be non-negative");
    }

    std::size_t edges() const noexcept { return b_.size(); }
    double reg_weight() const noexcept { return lambda_; }
    std::vector<EdgeTheta>& b() noexcept { return b_; }
    const std::vector<EdgeTheta>& b() const noexcept { return b_; }

    EdgeTheta beta(std::size_t edge) const {
        EdgeTheta out{};
        for (std::size_t o = 0; o < kNumOps; ++o) out[o] = std::exp(b_.at(edge)[o]);
        return out;
    }

    Theta mean() const {
        Theta th;
        for (std::size_t e = 0; e < edges(); ++e) th.push_back(dirichlet_mean(beta(e)));
        return th;
    }

    ArchSample sample(Rng& rng) const {
        ArchSample s;
        for (std::size_t e = 0; e < edges(); ++e) {
            s.draws.push_back(sample_dirichlet(beta(e), rng));
            s.theta.push_back(s.draws.back().theta);
        }
        return s;
    }

    /// lambda * ||exp(b) - 1||^2 summed over edges.
    double regulariser() const {
        double r = 0.0;
        for (std::size_t e = 0; e < edges(); ++e)
            for (double v : beta(e)) r += (v - 1.0) * (v - 1.0);
        return lambda_ * r;
    }

    void clamp() {
        for (auto& row : b_)
            for (auto& v : row) v = std::clamp(v, -kClamp, kClamp);
    }

private:
    std::vector<EdgeTheta> b_;
    double lambda_ = 1e-3;
};

/// Gradient in b of L_val(theta(b)) + lambda ||exp(b) - 1||^2 for one
/// Monte Carlo draw: [d theta / d beta]^T dL/dtheta * beta + 2 lambda (beta - 1) beta.
inline std::vector<EdgeTheta> arch_objective_grad(const ConcentrationParams& params, const Theta& val_grad_theta,
                                                  const ArchSample& sample) {
    if (val_grad_theta.size() != params.edges() || sample.draws.size() != params.edges())
        throw DimensionError("arch_objective_grad: edge count mismatch");
    std::vector<EdgeTheta> grad(params.edges());
    for (std::size_t e = 0; e < params.edges(); ++e) {
        const EdgeTheta beta = params.beta(e);
        const auto J = dirichlet_jacobian(sample.draws[e]);
        for (std::size_t j = 0; j < kNumOps; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < kNumOps; ++i) acc += val_grad_theta[e][i] * J[i][j];
            grad[e][j] = acc * beta[j] + 2.0 * params.reg_weight() * (beta[j] - 1.0) * beta[j];
            if (!std::isfinite(grad[e][j]))
                throw TrainingError("arch_objective_grad: non-finite gradient on edge " + std::to_string(e));
        }
    }
    return grad;
}

} // namespace uraenas
