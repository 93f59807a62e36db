#pragma once

// Image datasets: CIFAR-10 binary and IDX readers, the internal on-disk
// format, a procedural synthetic generator, and the corruption suite.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "uraenas/errors.hpp"
#include "uraenas/rng.hpp"
#include "uraenas/tensor.hpp"

namespace uraenas {

enum class Split { Train, Val, Test };

inline std::string_view split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

inline Split split_from_name(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw FormatError("unknown split '" + std::string(s) + "'");
}

/// uint8 images in [n, C, H, W] order plus integer labels.
struct ImageDataset {
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t num_classes = 10;
    Split split = Split::Train;
    std::vector<std::uint8_t> pixels;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const noexcept { return channels * height * width; }

    std::span<const std::uint8_t> image(std::size_t i) const {
        return std::span<const std::uint8_t>(pixels).subspan(i * image_size(), image_size());
    }
    std::span<std::uint8_t> image(std::size_t i) {
        return std::span<std::uint8_t>(pixels).subspan(i * image_size(), image_size());
    }

    void validate() const {
        if (pixels.size() != labels.size() * image_size())
            throw FormatError("dataset: " + std::to_string(pixels.size()) + " pixel bytes for " +
                              std::to_string(labels.size()) + " images of " + std::to_string(image_size()));
        for (int l : labels)
            if (l < 0 || std::size_t(l) >= num_classes)
                throw FormatError("dataset: label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
    }

    ImageDataset subset(std::span<const std::size_t> idx) const {
        ImageDataset out = *this;
        out.pixels.clear();
        out.labels.clear();
        for (auto i : idx) {
            auto img = image(i);
            out.pixels.insert(out.pixels.end(), img.begin(), img.end());
            out.labels.push_back(labels.at(i));
        }
        return out;
    }

    ImageDataset slice(std::size_t begin, std::size_t end) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = begin; i < std::min(end, size()); ++i) idx.push_back(i);
        return subset(idx);
    }
};

/// Per-channel mean and standard deviation, in [0, 1] pixel units. Only a
/// training split may produce them.
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    Split source = Split::Train;
};

inline NormalizationStats compute_normalization(const ImageDataset& train) {
    if (train.split != Split::Train)
        throw InvariantError("normalization statistics must come from the train split, got " +
                             std::string(split_name(train.split)));
    NormalizationStats s;
    const std::size_t C = train.channels, HW = train.height * train.width;
    s.mean.assign(C, 0.0);
    s.stddev.assign(C, 0.0);
    if (train.size() == 0) {
        s.stddev.assign(C, 1.0);
        return s;
    }
    for (std::size_t c = 0; c < C; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            const std::uint8_t* p = train.pixels.data() + i * train.image_size() + c * HW;
            for (std::size_t j = 0; j < HW; ++j) {
                const double v = p[j] / 255.0;
                sum += v;
                sq += v * v;
            }
        }
        const double n = double(train.size() * HW);
        s.mean[c] = sum / n;
        s.stddev[c] = std::sqrt(std::max(sq / n - s.mean[c] * s.mean[c], 1e-12));
    }
    return s;
}

/// A normalised minibatch tagged with the split it was drawn from.
struct Batch {
    Tensor images;
    std::vector<int> labels;
    Split split = Split::Train;
};

inline Batch make_batch(const ImageDataset& ds, std::span<const std::size_t> idx, const NormalizationStats& stats) {
    if (stats.source != Split::Train) throw InvariantError("normalization statistics not from the train split");
    const std::size_t C = ds.channels, HW = ds.height * ds.width;
    if (stats.mean.size() != C) throw DimensionError("normalization has wrong channel count");
    Batch b;
    b.split = ds.split;
    b.images = Tensor({idx.size(), C, ds.height, ds.width});
    double* out = b.images.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const std::uint8_t* p = ds.pixels.data() + idx[r] * ds.image_size();
        for (std::size_t c = 0; c < C; ++c) {
            const double m = stats.mean[c], inv = 1.0 / stats.stddev[c];
            for (std::size_t j = 0; j < HW; ++j) *out++ = (p[c * HW + j] / 255.0 - m) * inv;
        }
        b.labels.push_back(ds.labels[idx[r]]);
    }
    return b;
}

inline Batch make_batch(const ImageDataset& ds, const NormalizationStats& stats) {
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return make_batch(ds, idx, stats);
}

/// Hex SHA-256 of a byte range.
inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr))
        throw Error("sha256: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

inline std::string sha256_hex(std::string_view s) {
    return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

/// Content hash over shape, labels and pixels.
inline std::string content_hash(const ImageDataset& ds) {
    std::vector<std::uint8_t> buf;
    auto put = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
    };
    put(ds.channels);
    put(ds.height);
    put(ds.width);
    put(ds.num_classes);
    put(ds.size());
    for (int l : ds.labels) buf.push_back(std::uint8_t(l));
    buf.insert(buf.end(), ds.pixels.begin(), ds.pixels.end());
    return sha256_hex(buf);
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

} // namespace detail

/// CIFAR-10 binary version: records of 1 label byte + 3072 pixel bytes
/// (1024 R, 1024 G, 1024 B, row-major 32x32).
inline ImageDataset parse_cifar_binary(std::span<const std::uint8_t> bytes, Split split = Split::Train) {
    constexpr std::size_t record = 3073;
    if (bytes.size() % record != 0)
        throw FormatError("cifar: file size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    ImageDataset ds;
    ds.channels = 3;
    ds.height = ds.width = 32;
    ds.num_classes = 10;
    ds.split = split;
    const std::size_t n = bytes.size() / record;
    ds.pixels.reserve(n * 3072);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t label = bytes[i * record];
        if (label > 9) throw FormatError("cifar: label " + std::to_string(label) + " in record " + std::to_string(i));
        ds.labels.push_back(label);
        ds.pixels.insert(ds.pixels.end(), bytes.begin() + long(i * record + 1), bytes.begin() + long((i + 1) * record));
    }
    return ds;
}

inline ImageDataset load_cifar_binary(const std::filesystem::path& path, Split split = Split::Train) {
    return parse_cifar_binary(detail::read_file(path), split);
}

inline void write_cifar_binary(const std::filesystem::path& path, const ImageDataset& ds) {
    if (ds.channels != 3 || ds.height != 32 || ds.width != 32)
        throw FormatError("cifar: only 3x32x32 datasets can be written in CIFAR binary format");
    std::vector<std::uint8_t> bytes;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        bytes.push_back(std::uint8_t(ds.labels[i]));
        auto img = ds.image(i);
        bytes.insert(bytes.end(), img.begin(), img.end());
    }
    detail::write_file(path, bytes);
}

/// IDX (MNIST-style) image file (magic 0x803) and label file (magic 0x801).
inline ImageDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                             Split split = Split::Train, std::size_t num_classes = 10) {
    const auto ib = detail::read_file(images);
    const auto lb = detail::read_file(labels);
    auto be32 = [](const std::vector<std::uint8_t>& b, std::size_t off) {
        if (off + 4 > b.size()) throw FormatError("idx: truncated header");
        return std::uint32_t(b[off]) << 24 | std::uint32_t(b[off + 1]) << 16 | std::uint32_t(b[off + 2]) << 8 |
               std::uint32_t(b[off + 3]);
    };
    if (be32(ib, 0) != 0x803) throw FormatError("idx: bad image magic");
    if (be32(lb, 0) != 0x801) throw FormatError("idx: bad label magic");
    const std::size_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
    if (be32(lb, 4) != n) throw FormatError("idx: image and label counts differ");
    if (ib.size() != 16 + n * rows * cols || lb.size() != 8 + n) throw FormatError("idx: payload size mismatch");
    ImageDataset ds;
    ds.channels = 1;
    ds.height = rows;
    ds.width = cols;
    ds.num_classes = num_classes;
    ds.split = split;
    ds.pixels.assign(ib.begin() + 16, ib.end());
    for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(lb[8 + i]);
    ds.validate();
    return ds;
}

/// 2x2 mean pooling of every image, rounding half away from zero.
inline ImageDataset downscale2x(const ImageDataset& ds) {
    if (ds.height % 2 || ds.width % 2) throw DimensionError("downscale2x: odd spatial dims");
    ImageDataset out = ds;
    out.height = ds.height / 2;
    out.width = ds.width / 2;
    out.pixels.assign(ds.size() * out.image_size(), 0);
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t c = 0; c < ds.channels; ++c)
            for (std::size_t y = 0; y < out.height; ++y)
                for (std::size_t x = 0; x < out.width; ++x) {
                    const std::uint8_t* p = ds.pixels.data() + i * ds.image_size() + c * ds.height * ds.width;
                    const double s = p[2 * y * ds.width + 2 * x] + p[2 * y * ds.width + 2 * x + 1] +
                                     p[(2 * y + 1) * ds.width + 2 * x] + p[(2 * y + 1) * ds.width + 2 * x + 1];
                    out.pixels[i * out.image_size() + c * out.height * out.width + y * out.width + x] =
                        std::uint8_t(std::round(s / 4.0));
                }
    return out;
}

/// Internal format: one compact JSON header line, '\n', the pixel bytes, then
/// one label byte per image. `extra` is merged into the header.
inline void save_dataset(const std::filesystem::path& path, const ImageDataset& ds,
                         const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json h = {{"format", "uraenas-dataset"}, {"version", 1},         {"n", ds.size()},
                        {"channels", ds.channels},     {"height", ds.height},  {"width", ds.width},
                        {"num_classes", ds.num_classes}, {"split", split_name(ds.split)}};
    for (auto it = extra.begin(); it != extra.end(); ++it) h[it.key()] = it.value();
    const std::string header = h.dump() + "\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), ds.pixels.begin(), ds.pixels.end());
    for (int l : ds.labels) bytes.push_back(std::uint8_t(l));
    detail::write_file(path, bytes);
}

inline ImageDataset load_dataset(const std::filesystem::path& path, nlohmann::json* header_out = nullptr) {
    const auto bytes = detail::read_file(path);
    const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t('\n'));
    if (nl == bytes.end()) throw FormatError("dataset: missing header line in '" + path.string() + "'");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.begin(), nl);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("dataset: bad header in '" + path.string() + "': " + e.what());
    }
    if (h.value("format", "") != "uraenas-dataset") throw FormatError("dataset: unexpected format tag");
    ImageDataset ds;
    const std::size_t n = h.at("n");
    ds.channels = h.at("channels");
    ds.height = h.at("height");
    ds.width = h.at("width");
    ds.num_classes = h.at("num_classes");
    ds.split = split_from_name(h.at("split").get<std::string>());
    const std::size_t payload = std::size_t(bytes.end() - nl - 1);
    if (payload != n * ds.image_size() + n)
        throw FormatError("dataset: payload is " + std::to_string(payload) + " bytes, expected " +
                          std::to_string(n * ds.image_size() + n));
    ds.pixels.assign(nl + 1, nl + 1 + long(n * ds.image_size()));
    for (auto it = nl + 1 + long(n * ds.image_size()); it != bytes.end(); ++it) ds.labels.push_back(*it);
    ds.validate();
    if (header_out) *header_out = h;
    return ds;
}

/// Procedural image classes: an oriented sinusoidal grating whose orientation
/// and spatial frequency are fixed per class, with per-image random phase,
/// amplitude and colour tint, plus a random distractor grating and additive
/// pixel noise.
struct SynthSpec {
    std::size_t classes = 10;
    std::size_t n = 5000;
    std::size_t channels = 3;
    std::size_t height = 16;
    std::size_t width = 16;
    double noise = 20.0;                      ///< pixel noise standard deviation (0..255 units)
    double phase_jitter = std::numbers::pi;   ///< uniform phase jitter half-width, radians
    double signal_min = 8.0;                  ///< class grating amplitude range
    double signal_max = 24.0;
    double clutter = 0.0;        ///< maximum distractor grating amplitude
    Split split = Split::Train;
};

inline ImageDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.classes < 1 || spec.classes > 10) throw InputError("synth: classes must be in [1, 10]");
    ImageDataset ds;
    ds.channels = spec.channels;
    ds.height = spec.height;
    ds.width = spec.width;
    ds.num_classes = spec.classes;
    ds.split = spec.split;
    ds.pixels.resize(spec.n * ds.image_size());
    const std::size_t HW = spec.height * spec.width;
    for (std::size_t i = 0; i < spec.n; ++i) {
        Rng rng(seed, {std::uint64_t(Stream::Synth), std::uint64_t(spec.split), i});
        const int label = int(rng.index(spec.classes));
        ds.labels.push_back(label);
        const double angle = std::numbers::pi * double(label % 5) / 5.0;
        const double cycles = label < 5 ? 2.0 : 3.5;
        const double freq = 2.0 * std::numbers::pi * cycles / double(spec.width);
        const double phase = (2.0 * rng.uniform() - 1.0) * spec.phase_jitter;
        const double amp = spec.signal_min + (spec.signal_max - spec.signal_min) * rng.uniform();
        const double d_angle = std::numbers::pi * rng.uniform();
        const double d_freq = 2.0 * std::numbers::pi * (1.0 + 3.0 * rng.uniform()) / double(spec.width);
        const double d_phase = 2.0 * std::numbers::pi * rng.uniform();
        const double d_amp = spec.clutter * rng.uniform();
        const double dca = std::cos(d_angle), dsa = std::sin(d_angle);
        std::vector<double> tint(spec.channels);
        for (auto& t : tint) t = 0.5 + 0.5 * rng.uniform();
        const double base = 100.0 + 56.0 * rng.uniform();
        const double ca = std::cos(angle), sa = std::sin(angle);
        std::uint8_t* px = ds.pixels.data() + i * ds.image_size();
        for (std::size_t c = 0; c < spec.channels; ++c)
            for (std::size_t y = 0; y < spec.height; ++y)
                for (std::size_t x = 0; x < spec.width; ++x) {
                    const double u = (double(x) - spec.width / 2.0) * ca + (double(y) - spec.height / 2.0) * sa;
                    const double du = (double(x) - spec.width / 2.0) * dca + (double(y) - spec.height / 2.0) * dsa;
                    const double v = base + amp * tint[c] * std::cos(freq * u + phase) +
                                     d_amp * std::cos(d_freq * du + d_phase) + spec.noise * rng.normal();
                    px[c * HW + y * spec.width + x] = std::uint8_t(std::clamp(std::round(v), 0.0, 255.0));
                }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Corruptions

enum class CorruptionKind { GaussianNoise = 0, ShotNoise, ImpulseNoise, BoxBlur, Brightness, Contrast };

inline constexpr std::array<CorruptionKind, 6> kAllCorruptions = {
    CorruptionKind::GaussianNoise, CorruptionKind::ShotNoise,  CorruptionKind::ImpulseNoise,
    CorruptionKind::BoxBlur,       CorruptionKind::Brightness, CorruptionKind::Contrast};

inline std::string_view corruption_name(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::GaussianNoise: return "gaussian_noise";
        case CorruptionKind::ShotNoise: return "shot_noise";
        case CorruptionKind::ImpulseNoise: return "impulse_noise";
        case CorruptionKind::BoxBlur: return "box_blur";
        case CorruptionKind::Brightness: return "brightness";
        case CorruptionKind::Contrast: return "contrast";
    }
    throw UsageError("unknown corruption kind " + std::to_string(int(k)));
}

inline CorruptionKind corruption_from_name(std::string_view s) {
    for (auto k : kAllCorruptions)
        if (corruption_name(k) == s) return k;
    throw UsageError("unknown corruption kind '" + std::string(s) + "'");
}

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::GaussianNoise;
    int severity = 1;
    double parameter = 0.0; ///< sigma, photon scale, flip fraction, kernel, offset or factor
    int passes = 1;         ///< box blur only
};

/// Versioned severity table (v1), severities 1..5.
inline CorruptionSpec corruption_spec(CorruptionKind kind, int severity) {
    if (severity < 1 || severity > 5) throw InputError("corruption severity must be in 1..5");
    const std::size_t s = std::size_t(severity - 1);
    static constexpr std::array<double, 5> gauss = {0.04, 0.08, 0.12, 0.18, 0.26};
    static constexpr std::array<double, 5> shot = {60, 25, 12, 5, 3};
    static constexpr std::array<double, 5> impulse = {0.01, 0.02, 0.05, 0.08, 0.12};
    static constexpr std::array<double, 5> blur_k = {3, 3, 5, 5, 7};
    static constexpr std::array<int, 5> blur_passes = {1, 2, 1, 2, 2};
    static constexpr std::array<double, 5> bright = {0.1, 0.2, 0.3, 0.4, 0.5};
    static constexpr std::array<double, 5> contrast = {0.75, 0.6, 0.45, 0.3, 0.2};
    CorruptionSpec c{kind, severity, 0.0, 1};
    switch (kind) {
        case CorruptionKind::GaussianNoise: c.parameter = gauss[s] * 255.0; break;
        case CorruptionKind::ShotNoise: c.parameter = shot[s]; break;
        case CorruptionKind::ImpulseNoise: c.parameter = impulse[s]; break;
        case CorruptionKind::BoxBlur:
            c.parameter = blur_k[s];
            c.passes = blur_passes[s];
            break;
        case CorruptionKind::Brightness: c.parameter = bright[s] * 255.0; break;
        case CorruptionKind::Contrast: c.parameter = contrast[s]; break;
        default: throw UsageError("unknown corruption kind " + std::to_string(int(kind)));
    }
    return c;
}

/// Applies one corruption to a single [C, H, W] uint8 image. Values are
/// rounded half away from zero and clamped to [0, 255].
inline std::vector<std::uint8_t> corrupt(std::span<const std::uint8_t> img, std::size_t C, std::size_t H, std::size_t W,
                                         const CorruptionSpec& spec, std::uint64_t seed) {
    if (img.size() != C * H * W) throw DimensionError("corrupt: image size does not match C*H*W");
    std::vector<double> v(img.begin(), img.end());
    Rng rng(seed);
    switch (spec.kind) {
        case CorruptionKind::GaussianNoise:
            for (auto& x : v) x += spec.parameter * rng.normal();
            break;
        case CorruptionKind::ShotNoise:
            for (auto& x : v) {
                std::poisson_distribution<long> pois(x / 255.0 * spec.parameter);
                x = double(pois(rng.engine())) / spec.parameter * 255.0;
            }
            break;
        case CorruptionKind::ImpulseNoise:
            for (auto& x : v)
                if (rng.uniform() < spec.parameter) x = rng.uniform() < 0.5 ? 0.0 : 255.0;
            break;
        case CorruptionKind::BoxBlur: {
            const long k = long(spec.parameter), r = k / 2;
            std::vector<double> tmp(v.size());
            for (int pass = 0; pass < spec.passes; ++pass) {
                for (std::size_t c = 0; c < C; ++c) {
                    double* p = v.data() + c * H * W;
                    double* t = tmp.data() + c * H * W;
                    for (long y = 0; y < long(H); ++y)
                        for (long x = 0; x < long(W); ++x) {
                            double acc = 0.0;
                            long cnt = 0;
                            for (long dx = -r; dx <= r; ++dx)
                                if (x + dx >= 0 && x + dx < long(W)) {
                                    acc += p[y * long(W) + x + dx];
                                    ++cnt;
                                }
                            t[y * long(W) + x] = acc / double(cnt);
                        }
                    for (long y = 0; y < long(H); ++y)
                        for (long x = 0; x < long(W); ++x) {
                            double acc = 0.0;
                            long cnt = 0;
                            for (long dy = -r; dy <= r; ++dy)
                                if (y + dy >= 0 && y + dy < long(H)) {
                                    acc += t[(y + dy) * long(W) + x];
                                    ++cnt;
                                }
                            p[y * long(W) + x] = acc / double(cnt);
                        }
                }
            }
            break;
        }
        case CorruptionKind::Brightness:
            for (auto& x : v) x += spec.parameter;
            break;
        case CorruptionKind::Contrast: {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= double(std::max<std::size_t>(v.size(), 1));
            for (auto& x : v) x = (x - mean) * spec.parameter + mean;
            break;
        }
        default: throw UsageError("unknown corruption kind " + std::to_string(int(spec.kind)));
    }
    std::vector<std::uint8_t> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::uint8_t(std::clamp(std::round(v[i]), 0.0, 255.0));
    return out;
}

inline ImageDataset corrupt_dataset(const ImageDataset& ds, const CorruptionSpec& spec, std::uint64_t seed) {
    ImageDataset out = ds;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto img = corrupt(ds.image(i), ds.channels, ds.height, ds.width, spec,
                                 derive_seed(seed, {std::uint64_t(Stream::Corrupt), std::uint64_t(spec.kind),
                                                    std::uint64_t(spec.severity), i}));
        std::copy(img.begin(), img.end(), out.image(i).begin());
    }
    return out;
}

using CorruptedSuite = std::map<std::pair<CorruptionKind, int>, ImageDataset>;

/// Every kind at every severity 1..5 applied to a test split; labels unchanged.
inline CorruptedSuite build_corrupted_suite(const ImageDataset& test, std::uint64_t seed) {
    if (test.split != Split::Test) throw InputError("corrupted suite must be built from the test split");
    CorruptedSuite suite;
    for (auto kind : kAllCorruptions)
        for (int s = 1; s <= 5; ++s) suite.emplace(std::pair{kind, s}, corrupt_dataset(test, corruption_spec(kind, s), seed));
    return suite;
}

/// Writes `<root>/<kind>/<severity>/data.bin`.
inline void save_corrupted_suite(const std::filesystem::path& root, const CorruptedSuite& suite) {
    for (const auto& [key, ds] : suite) {
        const auto spec = corruption_spec(key.first, key.second);
        save_dataset(root / std::string(corruption_name(key.first)) / std::to_string(key.second) / "data.bin", ds,
                     {{"corruption", {{"kind", corruption_name(key.first)},
                                      {"severity", key.second},
                                      {"parameter", spec.parameter},
                                      {"passes", spec.passes},
                                      {"table_version", 1}}}});
    }
}

inline CorruptedSuite load_corrupted_suite(const std::filesystem::path& root) {
    CorruptedSuite suite;
    for (auto kind : kAllCorruptions)
        for (int s = 1; s <= 5; ++s) {
            const auto p = root / std::string(corruption_name(kind)) / std::to_string(s) / "data.bin";
            if (std::filesystem::exists(p)) suite.emplace(std::pair{kind, s}, load_dataset(p));
        }
    return suite;
}

} // namespace uraenas
