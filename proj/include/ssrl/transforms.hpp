#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

/// Signal-level transformations recognized by the sensor pretext task.
/// Rotation applies only to 3-axis groups (accelerometer, gyroscope).
enum class TransformKind {
    None,
    Noise,
    Scale,
    VFlip,
    HFlip,
    TimeWarp,
    Rotation,
    Permutation,
    ChannelShuffle,
};

inline const char* transform_name(TransformKind k) {
    switch (k) {
        case TransformKind::None: return "none";
        case TransformKind::Noise: return "noise";
        case TransformKind::Scale: return "scale";
        case TransformKind::VFlip: return "vflip";
        case TransformKind::HFlip: return "hflip";
        case TransformKind::TimeWarp: return "timewarp";
        case TransformKind::Rotation: return "rotation";
        case TransformKind::Permutation: return "permutation";
        case TransformKind::ChannelShuffle: return "channelshuffle";
    }
    return "?";
}

struct TransformParams {
    std::size_t m_min = 5;            // permutation: segment count drawn from [m_min, m_max]
    std::size_t m_max = 10;
    std::size_t n = 2;                // time warp: contiguous sections
    double d_deg = 90.0;              // rotation angle
    double noise_sigma_ratio = 0.1;   // noise stddev as a fraction of each channel's stddev
    double scale_lo = 0.7;            // scale factor interval ...
    double scale_hi = 1.1;
    double scale_exclude = 0.01;      // ... minus this band around 1 so scaling is detectable

    void validate() const {
        if (m_min < 5 || m_max > 10 || m_min > m_max)
            throw ShapeError("transform params: permutation segment count must satisfy 5 <= m <= 10");
        if (n < 2) throw ShapeError("transform params: time warp needs n >= 2 sections");
        if (d_deg <= 0.0 || d_deg >= 360.0)
            throw ShapeError("transform params: rotation angle must lie in (0, 360)");
        if (noise_sigma_ratio < 0.0) throw ShapeError("transform params: noise ratio must be >= 0");
        if (scale_lo <= 0.0 || scale_hi <= scale_lo)
            throw ShapeError("transform params: scale interval must be positive and non-empty");
    }
};

/// One channel group of a sensor segment: channels x equal-length samples.
using Channels = std::vector<std::vector<float>>;

/// The transformation set (= pretext label order) for a group. Two-channel
/// groups (EOG) drop rotation for 8 classes; 3-axis groups keep all 9.
inline std::vector<TransformKind> pretext_kinds(std::size_t channel_count) {
    std::vector<TransformKind> kinds{TransformKind::None,     TransformKind::Noise,
                                     TransformKind::Scale,    TransformKind::VFlip,
                                     TransformKind::HFlip,    TransformKind::TimeWarp};
    if (channel_count == 3) kinds.push_back(TransformKind::Rotation);
    kinds.push_back(TransformKind::Permutation);
    kinds.push_back(TransformKind::ChannelShuffle);
    return kinds;
}

namespace detail {

inline double channel_std(const std::vector<float>& x) {
    double sum = 0.0, sq = 0.0;
    for (const float v : x) {
        sum += v;
        sq += static_cast<double>(v) * v;
    }
    const double mean = sum / static_cast<double>(x.size());
    return std::sqrt(std::max(0.0, sq / static_cast<double>(x.size()) - mean * mean));
}

/// Endpoint-preserving linear resampling to `out_len` samples.
inline std::vector<float> resample_linear(const std::vector<float>& x, std::size_t out_len) {
    std::vector<float> out(out_len);
    if (x.size() == 1 || out_len == 1) {
        std::fill(out.begin(), out.end(), x[0]);
        if (out_len > 1) out.back() = x.back();
        return out;
    }
    const double step = static_cast<double>(x.size() - 1) / static_cast<double>(out_len - 1);
    for (std::size_t j = 0; j < out_len; ++j) {
        const double pos = static_cast<double>(j) * step;
        const std::size_t i = std::min(static_cast<std::size_t>(pos), x.size() - 2);
        const double frac = pos - static_cast<double>(i);
        out[j] = static_cast<float>((1.0 - frac) * x[i] + frac * x[i + 1]);
    }
    return out;
}

} // namespace detail

/// Rodrigues rotation of a 3-channel group about `axis` (need not be unit;
/// normalized internally) by `deg` degrees. Each time step's (x,y,z) sample
/// is treated as one vector.
inline Channels rotate3(const Channels& g, const double axis[3], double deg) {
    if (g.size() != 3) throw ShapeError("rotation requires a 3-axis channel group");
    const double norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (norm <= 0.0) throw ShapeError("rotation axis must be nonzero");
    const double ux = axis[0] / norm, uy = axis[1] / norm, uz = axis[2] / norm;
    const double th = deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(th), s = std::sin(th), k = 1.0 - c;
    Channels out(3, std::vector<float>(g[0].size()));
    for (std::size_t t = 0; t < g[0].size(); ++t) {
        const double x = g[0][t], y = g[1][t], z = g[2][t];
        const double dot = ux * x + uy * y + uz * z;
        out[0][t] = static_cast<float>(x * c + (uy * z - uz * y) * s + ux * dot * k);
        out[1][t] = static_cast<float>(y * c + (uz * x - ux * z) * s + uy * dot * k);
        out[2][t] = static_cast<float>(z * c + (ux * y - uy * x) * s + uz * dot * k);
    }
    return out;
}

/// Applies one transformation to a channel group. All randomness comes from
/// `rng`, so a caller-derived per-segment stream makes results reproducible.
/// Output always has the input's channel count and length.
inline Channels apply_transform(const Channels& g, TransformKind kind, const TransformParams& params,
                                Rng& rng) {
    params.validate();
    if (g.empty() || g[0].empty()) throw ShapeError("transform: empty channel group");
    const std::size_t len = g[0].size();
    for (const auto& ch : g)
        if (ch.size() != len) throw ShapeError("transform: unequal channel lengths");

    switch (kind) {
        case TransformKind::None:
            return g;

        case TransformKind::Noise: {
            Channels out = g;
            for (auto& ch : out) {
                const double sigma = params.noise_sigma_ratio * detail::channel_std(ch);
                if (sigma == 0.0) continue;
                for (auto& v : ch) v = static_cast<float>(v + sigma * normal(rng));
            }
            return out;
        }

        case TransformKind::Scale: {
            double f = 1.0;
            do {
                f = uniform_real(rng, params.scale_lo, params.scale_hi);
            } while (std::abs(f - 1.0) < params.scale_exclude);
            Channels out = g;
            for (auto& ch : out)
                for (auto& v : ch) v = static_cast<float>(v * f);
            return out;
        }

        case TransformKind::VFlip: {
            Channels out = g;
            for (auto& ch : out)
                for (auto& v : ch) v = -v;
            return out;
        }

        case TransformKind::HFlip: {
            Channels out = g;
            for (auto& ch : out) std::reverse(ch.begin(), ch.end());
            return out;
        }

        case TransformKind::TimeWarp: {
            // n contiguous sections; the first section's stretch factor is
            // drawn from {0.5, 2.0} and subsequent sections alternate, then
            // the whole signal is resampled back to the original length.
            // Factors are drawn once so channels stay time-aligned.
            const std::size_t n = params.n;
            const std::size_t base = len / n, extra = len % n;
            double factor = uniform_index(rng, 2) == 0 ? 0.5 : 2.0;
            std::vector<double> factors(n);
            for (std::size_t s = 0; s < n; ++s, factor = factor == 0.5 ? 2.0 : 0.5) factors[s] = factor;
            Channels out(g.size());
            for (std::size_t c = 0; c < g.size(); ++c) {
                std::vector<float> warped;
                std::size_t off = 0;
                for (std::size_t s = 0; s < n; ++s) {
                    const std::size_t sec_len = base + (s < extra ? 1 : 0);
                    const std::vector<float> sec(g[c].begin() + static_cast<std::ptrdiff_t>(off),
                                                 g[c].begin() + static_cast<std::ptrdiff_t>(off + sec_len));
                    const auto stretched = detail::resample_linear(
                        sec, std::max<std::size_t>(2, static_cast<std::size_t>(
                                 std::llround(static_cast<double>(sec_len) * factors[s]))));
                    warped.insert(warped.end(), stretched.begin(), stretched.end());
                    off += sec_len;
                }
                out[c] = detail::resample_linear(warped, len);
            }
            return out;
        }

        case TransformKind::Rotation: {
            if (g.size() != 3)
                throw ShapeError("rotation is only applicable to 3-axis groups, got " +
                                 std::to_string(g.size()) + " channels");
            // Axis uniform on the unit sphere via normalized Gaussian triple.
            double axis[3];
            double norm = 0.0;
            do {
                for (double& a : axis) a = normal(rng);
                norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
            } while (norm < 1e-12);
            return rotate3(g, axis, params.d_deg);
        }

        case TransformKind::Permutation: {
            // m equal sections (remainder spread over the first ones), order
            // drawn uniformly over all m! arrangements; same order per channel.
            const std::size_t m =
                params.m_min + static_cast<std::size_t>(uniform_index(rng, params.m_max - params.m_min + 1));
            std::vector<std::size_t> order(m);
            std::iota(order.begin(), order.end(), std::size_t{0});
            shuffle(order, rng);
            const std::size_t base = len / m, extra = len % m;
            std::vector<std::size_t> starts(m + 1, 0);
            for (std::size_t s = 0; s < m; ++s) starts[s + 1] = starts[s] + base + (s < extra ? 1 : 0);
            Channels out(g.size());
            for (std::size_t c = 0; c < g.size(); ++c) {
                out[c].reserve(len);
                for (const std::size_t s : order)
                    out[c].insert(out[c].end(), g[c].begin() + static_cast<std::ptrdiff_t>(starts[s]),
                                  g[c].begin() + static_cast<std::ptrdiff_t>(starts[s + 1]));
            }
            return out;
        }

        case TransformKind::ChannelShuffle: {
            if (g.size() < 2) throw ShapeError("channel shuffle needs >= 2 channels");
            std::vector<std::size_t> order(g.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            do {
                shuffle(order, rng);
            } while (std::is_sorted(order.begin(), order.end()));  // identity defeats the label
            Channels out(g.size());
            for (std::size_t c = 0; c < g.size(); ++c) out[c] = g[order[c]];
            return out;
        }
    }
    throw ShapeError("unknown transform kind");
}

// Channel layout of prepared sensor segments: EOG horizontal, EOG vertical,
// then accelerometer x/y/z, then gyroscope x/y/z.
inline constexpr std::size_t kRdChannels = 8;
inline constexpr std::size_t kEogOffset = 0, kEogChannels = 2;
inline constexpr std::size_t kAccOffset = 2, kAccChannels = 3;
inline constexpr std::size_t kGyroOffset = 5, kGyroChannels = 3;

inline Channels slice_group(const Tensor<float>& segments, std::size_t segment, std::size_t offset,
                            std::size_t count) {
    const std::size_t l = segments.extent(2);
    Channels g(count, std::vector<float>(l));
    for (std::size_t c = 0; c < count; ++c) {
        const float* src = segments.data() + (segment * segments.extent(1) + offset + c) * l;
        std::copy(src, src + l, g[c].begin());
    }
    return g;
}

/// Per-group pretext dataset built from unlabeled sensor segments
/// [N, 8, L]. Each group of each segment receives one independently chosen
/// transformation; labels index the group's canonical transformation list
/// (8 classes for EOG, 9 for ACC and GYRO) with class counts equal up to a
/// remainder of one.
struct RdPretextData {
    Tensor<float> eog;   // [N, 2, L]
    Tensor<float> acc;   // [N, 3, L]
    Tensor<float> gyro;  // [N, 3, L]
    std::vector<int> y_eog, y_acc, y_gyro;
};

inline RdPretextData build_pretext_dataset(const Tensor<float>& segments, const TransformParams& params,
                                           std::uint64_t seed) {
    params.validate();
    if (segments.rank() != 3 || segments.extent(1) != kRdChannels)
        throw ShapeError("pretext dataset: expected segments [N," + std::to_string(kRdChannels) +
                         ",L], got " + shape_str(segments.shape()));
    const std::size_t n = segments.extent(0), l = segments.extent(2);
    if (n == 0) throw ShapeError("pretext dataset: empty segment list");

    RdPretextData out;
    out.eog = Tensor<float>({n, kEogChannels, l});
    out.acc = Tensor<float>({n, kAccChannels, l});
    out.gyro = Tensor<float>({n, kGyroChannels, l});

    struct GroupSpec {
        std::size_t offset, channels;
        Tensor<float>* dst;
        std::vector<int>* labels;
        std::uint64_t tag;
    };
    GroupSpec groups[3] = {
        {kEogOffset, kEogChannels, &out.eog, &out.y_eog, 0x656f67ULL},
        {kAccOffset, kAccChannels, &out.acc, &out.y_acc, 0x616363ULL},
        {kGyroOffset, kGyroChannels, &out.gyro, &out.y_gyro, 0x6779726fULL},
    };

    for (const GroupSpec& gs : groups) {
        const auto kinds = pretext_kinds(gs.channels);
        // Balanced label assignment: k classes spread round-robin, then
        // shuffled so class order is independent of segment order.
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % kinds.size());
        Rng label_rng = make_rng(derive_seed(seed, gs.tag));
        shuffle(labels, label_rng);
        *gs.labels = labels;
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = make_rng(derive_seed(seed, gs.tag, i));
            const Channels src = slice_group(segments, i, gs.offset, gs.channels);
            const Channels dst = apply_transform(src, kinds[static_cast<std::size_t>(labels[i])],
                                                 params, rng);
            for (std::size_t c = 0; c < gs.channels; ++c)
                std::copy(dst[c].begin(), dst[c].end(),
                          gs.dst->data() + (i * gs.channels + c) * l);
        }
    }
    return out;
}

} // namespace ssrl
