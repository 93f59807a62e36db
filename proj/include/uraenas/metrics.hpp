#pragma once

// Ensemble averaging in probability space, accuracy / NLL / ECE, and the
// ensemble-size sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uraenas/errors.hpp"
#include "uraenas/rng.hpp"
#include "uraenas/tensor.hpp"

namespace uraenas {

/// Row-major [examples x classes] probabilities.
struct ProbMatrix {
    std::size_t rows = 0;
    std::size_t classes = 0;
    std::vector<double> p;

    ProbMatrix() = default;
    ProbMatrix(std::size_t n, std::size_t k) : rows(n), classes(k), p(n * k, 0.0) {}
    static ProbMatrix from_tensor(const Tensor& t) {
        if (t.rank() != 2) throw DimensionError("ProbMatrix: expected [N,K], got " + shape_str(t.shape()));
        ProbMatrix m(t.dim(0), t.dim(1));
        std::copy(t.values().begin(), t.values().end(), m.p.begin());
        return m;
    }

    std::span<const double> row(std::size_t i) const { return std::span<const double>(p).subspan(i * classes, classes); }
    double& at(std::size_t i, std::size_t k) { return p[i * classes + k]; }
    double at(std::size_t i, std::size_t k) const { return p[i * classes + k]; }

    void validate(double tol = 1e-9) const {
        if (p.size() != rows * classes) throw DimensionError("ProbMatrix: storage size mismatch");
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (double v : row(i)) {
                if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("probability outside [0,1] in row " + std::to_string(i));
                s += v;
            }
            if (std::fabs(s - 1.0) > tol) throw InvariantError("probability row " + std::to_string(i) + " sums to " + std::to_string(s));
        }
    }
};

/// Per-member predictions over one evaluation set.
struct PredictionSet {
    std::vector<ProbMatrix> members;
    std::vector<int> labels;

    std::size_t size() const noexcept { return members.size(); }

    void validate() const {
        for (const auto& m : members) {
            if (m.rows != labels.size()) throw DimensionError("PredictionSet: member rows differ from label count");
            m.validate();
        }
    }
};

/// Arithmetic mean of the selected members' probability rows.
inline ProbMatrix ensemble_average(const PredictionSet& preds, std::span<const std::size_t> subset) {
    if (subset.empty()) throw UsageError("ensemble_average: empty member subset");
    for (auto m : subset)
        if (m >= preds.size()) throw UsageError("ensemble_average: member id " + std::to_string(m) + " out of range");
    const ProbMatrix& first = preds.members[subset[0]];
    ProbMatrix out(first.rows, first.classes);
    // Accumulate in ascending member order so the result is order-independent.
    std::vector<std::size_t> ids(subset.begin(), subset.end());
    std::sort(ids.begin(), ids.end());
    for (auto m : ids) {
        const ProbMatrix& pm = preds.members[m];
        if (pm.rows != out.rows || pm.classes != out.classes) throw DimensionError("ensemble_average: shape mismatch");
        for (std::size_t i = 0; i < out.p.size(); ++i) out.p[i] += pm.p[i];
    }
    const double inv = 1.0 / double(ids.size());
    for (auto& v : out.p) v *= inv;
    return out;
}

inline ProbMatrix ensemble_average(const PredictionSet& preds) {
    std::vector<std::size_t> all(preds.size());
    std::iota(all.begin(), all.end(), 0);
    return ensemble_average(preds, all);
}

inline std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
        if (row[k] > row[best]) best = k;
    return best;
}

namespace detail {
inline void check_labels(const ProbMatrix& probs, std::span<const int> labels) {
    if (probs.rows != labels.size())
        throw DimensionError("metrics: " + std::to_string(probs.rows) + " rows for " + std::to_string(labels.size()) + " labels");
    for (int l : labels)
        if (l < 0 || std::size_t(l) >= probs.classes) throw InputError("metrics: label " + std::to_string(l) + " out of range");
}
} // namespace detail

inline double accuracy(const ProbMatrix& probs, std::span<const int> labels) {
    detail::check_labels(probs, labels);
    if (labels.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.rows; ++i) correct += argmax_row(probs.row(i)) == std::size_t(labels[i]);
    return double(correct) / double(labels.size());
}

inline constexpr double kProbClip = 1e-12;

inline double nll(const ProbMatrix& probs, std::span<const int> labels) {
    detail::check_labels(probs, labels);
    if (labels.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < probs.rows; ++i)
        total -= std::log(std::clamp(probs.at(i, std::size_t(labels[i])), kProbClip, 1.0));
    return total / double(labels.size());
}

struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;
};

struct EceResult {
    double ece = 0.0;
    std::vector<CalibrationBin> bins;
};

/// Equal-width bins on (0, 1] with right-closed edges: bin b holds
/// confidences in (b/B, (b+1)/B].
inline EceResult ece(const ProbMatrix& probs, std::span<const int> labels, std::size_t num_bins = 15) {
    if (num_bins < 1) throw UsageError("ece: num_bins must be >= 1");
    detail::check_labels(probs, labels);
    EceResult r;
    r.bins.resize(num_bins);
    std::vector<double> conf_sum(num_bins, 0.0), acc_sum(num_bins, 0.0);
    for (std::size_t b = 0; b < num_bins; ++b) {
        r.bins[b].lower = double(b) / double(num_bins);
        r.bins[b].upper = double(b + 1) / double(num_bins);
    }
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const auto row = probs.row(i);
        const std::size_t pred = argmax_row(row);
        const double conf = row[pred];
        auto b = std::size_t(std::ceil(conf * double(num_bins)));
        b = std::clamp<std::size_t>(b, 1, num_bins) - 1;
        // Guard against ceil() landing one bin off at exact edges.
        while (b > 0 && conf <= r.bins[b].lower) --b;
        while (b + 1 < num_bins && conf > r.bins[b].upper) ++b;
        r.bins[b].count++;
        conf_sum[b] += conf;
        acc_sum[b] += pred == std::size_t(labels[i]) ? 1.0 : 0.0;
    }
    const double n = double(std::max<std::size_t>(probs.rows, 1));
    for (std::size_t b = 0; b < num_bins; ++b) {
        auto& bin = r.bins[b];
        if (bin.count == 0) continue;
        bin.mean_confidence = conf_sum[b] / double(bin.count);
        bin.mean_accuracy = acc_sum[b] / double(bin.count);
        r.ece += double(bin.count) / n * std::fabs(bin.mean_accuracy - bin.mean_confidence);
    }
    return r;
}

struct CalibrationReport {
    double accuracy = 0.0;
    double ece = 0.0;
    double nll = 0.0;
    std::vector<CalibrationBin> bins;
    std::vector<std::size_t> members;
};

inline CalibrationReport calibration_report(const ProbMatrix& probs, std::span<const int> labels,
                                            std::vector<std::size_t> members = {}, std::size_t num_bins = 15) {
    CalibrationReport r;
    r.accuracy = accuracy(probs, labels);
    r.nll = nll(probs, labels);
    auto e = ece(probs, labels, num_bins);
    r.ece = e.ece;
    r.bins = std::move(e.bins);
    r.members = std::move(members);
    return r;
}

inline CalibrationReport evaluate_subset(const PredictionSet& preds, std::span<const std::size_t> subset) {
    return calibration_report(ensemble_average(preds, subset), preds.labels,
                              std::vector<std::size_t>(subset.begin(), subset.end()));
}

struct SweepPoint {
    std::size_t size = 0;
    std::size_t subsets = 0;
    double accuracy = 0.0;
    double ece = 0.0;
    double nll = 0.0;
};

inline double binomial(std::size_t n, std::size_t k) {
    double r = 1.0;
    for (std::size_t i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
    return r;
}

/// Member subsets of size s used by the sweep: every subset when there are at
/// most `max_subsets` of them, otherwise `max_subsets` distinct random ones.
inline std::vector<std::vector<std::size_t>> sweep_subsets(std::size_t members, std::size_t s, Rng& rng,
                                                           std::size_t max_subsets = 10) {
    std::vector<std::vector<std::size_t>> out;
    if (binomial(members, s) <= double(max_subsets)) {
        std::vector<bool> mask(members, false);
        std::fill(mask.begin(), mask.begin() + long(s), true);
        do {
            std::vector<std::size_t> sub;
            for (std::size_t i = 0; i < members; ++i)
                if (mask[i]) sub.push_back(i);
            out.push_back(std::move(sub));
        } while (std::prev_permutation(mask.begin(), mask.end()));
        return out;
    }
    while (out.size() < max_subsets) {
        std::vector<std::size_t> idx(members);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < s; ++i) std::swap(idx[i], idx[i + rng.index(members - i)]);
        std::vector<std::size_t> sub(idx.begin(), idx.begin() + long(s));
        std::sort(sub.begin(), sub.end());
        if (std::find(out.begin(), out.end(), sub) == out.end()) out.push_back(std::move(sub));
    }
    return out;
}

/// Metrics averaged over member subsets for each requested ensemble size.
inline std::vector<SweepPoint> ensemble_size_sweep(const PredictionSet& preds, std::span<const std::size_t> sizes,
                                                   std::uint64_t seed, std::size_t max_subsets = 10) {
    std::vector<SweepPoint> out;
    for (std::size_t s : sizes) {
        if (s < 1 || s > preds.size())
            throw UsageError("ensemble_size_sweep: size " + std::to_string(s) + " not in [1, " +
                             std::to_string(preds.size()) + "]");
        Rng rng(seed, {std::uint64_t(Stream::Sweep), s});
        const auto subsets = sweep_subsets(preds.size(), s, rng, max_subsets);
        SweepPoint pt;
        pt.size = s;
        pt.subsets = subsets.size();
        for (const auto& sub : subsets) {
            const auto r = evaluate_subset(preds, sub);
            pt.accuracy += r.accuracy;
            pt.ece += r.ece;
            pt.nll += r.nll;
        }
        pt.accuracy /= double(subsets.size());
        pt.ece /= double(subsets.size());
        pt.nll /= double(subsets.size());
        out.push_back(pt);
    }
    return out;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw UsageError("spearman: need two equal-length series of length >= 2");
    auto ranks = [](std::span<const double> v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (double(i) + double(j)) / 2.0 + 1.0;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = double(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

/// Shortest round-trippable decimal rendering, used by every CSV/JSON writer
/// so reports are byte-stable.
inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string sweep_csv(std::span<const SweepPoint> pts, const std::string& label = "") {
    std::string out = "label,size,subsets,accuracy,ece,nll\n";
    for (const auto& p : pts)
        out += label + "," + std::to_string(p.size) + "," + std::to_string(p.subsets) + "," + fmt_double(p.accuracy) +
               "," + fmt_double(p.ece) + "," + fmt_double(p.nll) + "\n";
    return out;
}

inline std::string reliability_csv(const CalibrationReport& r) {
    std::string out = "lower,upper,count,mean_confidence,mean_accuracy\n";
    for (const auto& b : r.bins)
        out += fmt_double(b.lower) + "," + fmt_double(b.upper) + "," + std::to_string(b.count) + "," +
               fmt_double(b.mean_confidence) + "," + fmt_double(b.mean_accuracy) + "\n";
    return out;
}

inline nlohmann::json to_json(const CalibrationReport& r) {
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& b : r.bins)
        bins.push_back({{"lower", b.lower},
                        {"upper", b.upper},
                        {"count", b.count},
                        {"mean_confidence", b.mean_confidence},
                        {"mean_accuracy", b.mean_accuracy}});
    return {{"accuracy", r.accuracy}, {"ece", r.ece}, {"nll", r.nll}, {"members", r.members}, {"bins", bins}};
}

} // namespace uraenas
