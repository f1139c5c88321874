#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssrl/gaze.hpp"
#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"
#include "ssrl/transforms.hpp"

namespace ssrl {

// ---------------------------------------------------------------------------
// Domain types

enum class ActivityLabel : int { NR = 0, EN = 1, JH = 2, JV = 3 };

inline constexpr std::size_t kActivityClasses = 4;

inline const char* activity_label_name(ActivityLabel l) {
    switch (l) {
        case ActivityLabel::NR: return "NR";
        case ActivityLabel::EN: return "EN";
        case ActivityLabel::JH: return "JH";
        case ActivityLabel::JV: return "JV";
    }
    return "?";
}

inline ActivityLabel parse_activity_label(const std::string& s) {
    for (int c = 0; c < static_cast<int>(kActivityClasses); ++c)
        if (s == activity_label_name(static_cast<ActivityLabel>(c)))
            return static_cast<ActivityLabel>(c);
    throw DataError("unknown activity label '" + s + "'");
}

/// One 100 Hz sample of the raw wearable stream: three electrode potentials
/// plus accelerometer and gyroscope triplets.
struct ElectrodeFrame {
    long long t_ms = 0;
    double l = 0.0, r = 0.0, b = 0.0;  // electrode potentials, uV
    std::array<double, 3> acc{};       // g
    std::array<double, 3> gyro{};      // deg/s
};

struct RawStream {
    std::string participant;
    std::vector<ElectrodeFrame> frames;  // strictly increasing t, 10 ms apart
};

inline constexpr long long kSampleStepMs = 10;  // 100 Hz
inline constexpr std::size_t kSegmentSamples = 3000;
inline constexpr std::size_t kSegmentHopSamples = 1500;

/// A 30-second window of derived signals: EOG (horizontal, vertical), ACC and
/// GYRO, each channel kSegmentSamples long.
struct SensorSegment {
    Channels eog;   // [2][n]  H, V
    Channels acc;   // [3][n]
    Channels gyro;  // [3][n]
    std::string participant;
    long long start_ms = 0;
    std::optional<ActivityLabel> label;
};

struct NoiseCriteria {
    double threshold_uv = 1000.0;  // reject when |EOG| stays beyond this...
    double sustain_s = 2.0;        // ...for at least this long

    void validate() const {
        if (!(threshold_uv > 0.0) || !(sustain_s > 0.0))
            throw DataError("noise criteria: threshold and duration must be positive");
    }
};

/// Criteria used for the hand-labeled recordings (long sustained artifacts
/// only) and for the unlabeled pre-training pool (any brief excursion).
inline NoiseCriteria labeled_noise_criteria() { return {1000.0, 2.0}; }
inline NoiseCriteria unlabeled_noise_criteria() { return {1000.0, 0.01}; }

struct AnnotationSpan {
    long long start_ms = 0;
    long long end_ms = 0;  // exclusive
    ActivityLabel label = ActivityLabel::NR;
};

// ---------------------------------------------------------------------------
// Signal derivation and segmentation

/// Horizontal and vertical EOG from the three-electrode montage:
/// H = L - R, V = B - (L + R) / 2.
inline std::pair<double, double> derive_eog(const ElectrodeFrame& f) {
    if (!std::isfinite(f.l) || !std::isfinite(f.r) || !std::isfinite(f.b))
        throw NumericError("derive_eog: non-finite electrode potential");
    return {f.l - f.r, f.b - 0.5 * (f.l + f.r)};
}

/// Cut a uniform 100 Hz stream into 30 s windows slid by 15 s. Streams
/// shorter than one window yield no segments; a non-uniform timestamp step is
/// a hard error (resampling is out of scope).
inline std::vector<SensorSegment> segment_stream(const RawStream& stream) {
    const auto& fr = stream.frames;
    for (std::size_t i = 0; i + 1 < fr.size(); ++i)
        if (fr[i + 1].t_ms - fr[i].t_ms != kSampleStepMs)
            throw DataError("stream '" + stream.participant + "': expected " +
                            std::to_string(kSampleStepMs) + " ms step, got " +
                            std::to_string(fr[i + 1].t_ms - fr[i].t_ms) + " ms at sample " +
                            std::to_string(i + 1));
    std::vector<SensorSegment> out;
    if (fr.size() < kSegmentSamples) return out;
    for (std::size_t s = 0; s + kSegmentSamples <= fr.size(); s += kSegmentHopSamples) {
        SensorSegment seg;
        seg.participant = stream.participant;
        seg.start_ms = fr[s].t_ms;
        seg.eog.assign(2, std::vector<float>(kSegmentSamples));
        seg.acc.assign(3, std::vector<float>(kSegmentSamples));
        seg.gyro.assign(3, std::vector<float>(kSegmentSamples));
        for (std::size_t k = 0; k < kSegmentSamples; ++k) {
            const ElectrodeFrame& f = fr[s + k];
            const auto [h, v] = derive_eog(f);
            seg.eog[0][k] = static_cast<float>(h);
            seg.eog[1][k] = static_cast<float>(v);
            for (std::size_t c = 0; c < 3; ++c) {
                if (!std::isfinite(f.acc[c]) || !std::isfinite(f.gyro[c]))
                    throw NumericError("stream '" + stream.participant +
                                       "': non-finite motion sample");
                seg.acc[c][k] = static_cast<float>(f.acc[c]);
                seg.gyro[c][k] = static_cast<float>(f.gyro[c]);
            }
        }
        out.push_back(std::move(seg));
    }
    return out;
}

/// Assign each segment the activity with the largest temporal overlap. Time
/// not covered by any span counts as NR. Ties go to the label whose
/// contributing span (or uncovered gap) starts earliest.
inline void label_segments(std::vector<SensorSegment>& segments,
                           const std::vector<AnnotationSpan>& spans) {
    std::vector<AnnotationSpan> sorted = spans;
    std::sort(sorted.begin(), sorted.end(),
              [](const AnnotationSpan& a, const AnnotationSpan& b) { return a.start_ms < b.start_ms; });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i].start_ms >= sorted[i].end_ms)
            throw DataError("annotation span with start >= end");
        if (i > 0 && sorted[i - 1].end_ms > sorted[i].start_ms)
            throw DataError("overlapping annotation spans at " +
                            std::to_string(sorted[i].start_ms) + " ms");
    }
    const long long window_ms = static_cast<long long>(kSegmentSamples) * kSampleStepMs;
    for (SensorSegment& seg : segments) {
        const long long s0 = seg.start_ms, s1 = seg.start_ms + window_ms;
        std::array<long long, kActivityClasses> total{};
        std::array<long long, kActivityClasses> first;
        first.fill(LLONG_MAX);
        long long covered_to = s0;
        long long uncovered = 0, first_gap = LLONG_MAX;
        for (const AnnotationSpan& sp : sorted) {
            const long long lo = std::max(s0, sp.start_ms), hi = std::min(s1, sp.end_ms);
            if (lo >= hi) continue;
            const auto c = static_cast<std::size_t>(sp.label);
            total[c] += hi - lo;
            first[c] = std::min(first[c], sp.start_ms);
            if (lo > covered_to) {
                if (first_gap == LLONG_MAX) first_gap = covered_to;
                uncovered += lo - covered_to;
            }
            covered_to = std::max(covered_to, hi);
        }
        if (covered_to < s1) {
            if (first_gap == LLONG_MAX) first_gap = covered_to;
            uncovered += s1 - covered_to;
        }
        if (uncovered > 0) {
            const auto nr = static_cast<std::size_t>(ActivityLabel::NR);
            total[nr] += uncovered;
            first[nr] = std::min(first[nr], first_gap);
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < kActivityClasses; ++c)
            if (total[c] > total[best] || (total[c] == total[best] && first[c] < first[best]))
                best = c;
        seg.label = static_cast<ActivityLabel>(best);
    }
}

/// True when either EOG channel stays above +T or below -T for a contiguous
/// run of at least ceil(100 * t) samples.
inline bool reject_noisy(const SensorSegment& seg, const NoiseCriteria& criteria) {
    criteria.validate();
    // Tiny slack so that durations like 0.01 s, inexact in binary, still mean
    // exactly ceil(100 * t) samples.
    const long need =
        std::max<long>(1, static_cast<long>(std::ceil(100.0 * criteria.sustain_s - 1e-9)));
    for (const auto& ch : seg.eog) {
        long run_hi = 0, run_lo = 0;
        for (float v : ch) {
            run_hi = v > criteria.threshold_uv ? run_hi + 1 : 0;
            run_lo = v < -criteria.threshold_uv ? run_lo + 1 : 0;
            if (run_hi >= need || run_lo >= need) return true;
        }
    }
    return false;
}

/// Subtract each channel's mean. Values of a few hundred microvolts quantize
/// to ~3e-5 steps in single precision, and those rounding errors correlate
/// across a channel, so plain per-element rounding can leave a residual mean
/// above 1e-6. Carrying the accumulated rounding error into the next element
/// bounds the stored sum by one quantum, putting the residual mean near
/// 1e-8. Channels already centered within 1e-7 are left untouched, which
/// makes the operation exactly idempotent.
inline SensorSegment baseline_correct(SensorSegment seg) {
    const auto fix = [](std::vector<float>& ch) {
        if (ch.empty()) return;
        double sum = 0.0;
        for (float v : ch) sum += v;
        const double mean = sum / static_cast<double>(ch.size());
        if (std::abs(mean) <= 1e-7) return;
        double carry = 0.0;
        for (float& v : ch) {
            const double want = static_cast<double>(v) - mean;
            const auto stored = static_cast<float>(want + carry);
            carry += want - static_cast<double>(stored);
            v = stored;
        }
    };
    for (auto* group : {&seg.eog, &seg.acc, &seg.gyro})
        for (auto& ch : *group) fix(ch);
    return seg;
}

// ---------------------------------------------------------------------------
// Class balancing

/// Pick `per_class` indices per class uniformly without replacement,
/// deterministically per seed. Returned indices are sorted, so the selection
/// is a subsequence of the input. A class with too few samples is an error
/// naming that class.
inline std::vector<std::size_t> balance_indices(const std::vector<int>& labels, int num_classes,
                                                std::size_t per_class, std::uint64_t seed,
                                                const std::vector<std::string>& class_names = {}) {
    if (num_classes < 1) throw DataError("balance: need at least one class");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw DataError("balance: label " + std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " out of range");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    std::vector<std::size_t> picked;
    picked.reserve(static_cast<std::size_t>(num_classes) * per_class);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& pool = by_class[c];
        if (pool.size() < per_class) {
            const std::string name =
                c < class_names.size() ? class_names[c] : std::to_string(c);
            throw DataError("balance: class '" + name + "' has " + std::to_string(pool.size()) +
                            " samples, need " + std::to_string(per_class));
        }
        Rng rng = make_rng(derive_seed(seed, 0x62616cu /* 'bal' */, c));
        shuffle(pool, rng);
        picked.insert(picked.end(), pool.begin(),
                      pool.begin() + static_cast<std::ptrdiff_t>(per_class));
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

// ---------------------------------------------------------------------------
// Synthetic reading-activity streams
//
// Stand-ins for the wearable recordings: reading produces a sawtooth gaze
// pattern (a run of small same-direction saccades, then a return sweep) on
// the horizontal EOG channel for EN/JH and on the vertical channel for JV,
// while NR is band-limited drift. Motion channels carry class-correlated
// low-frequency posture sway. The confusability knob theta linearly blends
// every class toward the across-class mean, so theta = 0 makes all four
// classes draw from one distribution and theta = 1 gives full separation.

namespace detail {

struct RdClassParams {
    double saw_amp_h = 0.0, saw_rate_h = 0.0, saw_span_h = 0.0;
    double saw_amp_v = 0.0, saw_rate_v = 0.0, saw_span_v = 0.0;
    double drift_uv = 0.0, jitter_uv = 0.0;
    double sway_g = 0.0, sway_hz = 0.0;
    double turn_dps = 0.0, turn_hz = 0.0;
};

inline RdClassParams rd_class_params(ActivityLabel c) {
    switch (c) {
        case ActivityLabel::NR: return {0, 0, 0, 0, 0, 0, 40, 4, 0.020, 0.20, 2.0, 0.30};
        case ActivityLabel::EN: return {45, 4.0, 360, 0, 0, 0, 20, 4, 0.010, 0.10, 1.0, 0.15};
        case ActivityLabel::JH: return {90, 2.5, 540, 0, 0, 0, 20, 4, 0.015, 0.12, 1.5, 0.20};
        case ActivityLabel::JV: return {0, 0, 0, 60, 3.0, 420, 20, 4, 0.012, 0.18, 1.2, 0.25};
    }
    return {};
}

inline RdClassParams rd_effective_params(ActivityLabel c, double theta) {
    using Arr = std::array<double, 12>;
    static_assert(sizeof(RdClassParams) == sizeof(Arr));
    Arr mean{};
    for (std::size_t k = 0; k < kActivityClasses; ++k) {
        const Arr a = std::bit_cast<Arr>(rd_class_params(static_cast<ActivityLabel>(k)));
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += a[j] / kActivityClasses;
    }
    Arr out = std::bit_cast<Arr>(rd_class_params(c));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = mean[j] + theta * (out[j] - mean[j]);
    return std::bit_cast<RdClassParams>(out);
}

/// Saccade staircase: step up every 1/rate seconds, sweep back over ~120 ms
/// once the span is covered. Output is centered on zero.
struct Sawtooth {
    double pos = 0.0;
    double since = 0.0;
    bool sweeping = false;

    double step(double dt, double amp, double rate, double span, Rng& rng) {
        if (span <= 0.0 || amp <= 0.0 || rate <= 0.0) return 0.0;
        if (sweeping) {
            pos -= span * dt / 0.12;
            if (pos <= 0.0) {
                pos = 0.0;
                sweeping = false;
            }
        } else {
            since += dt;
            if (since >= 1.0 / rate) {
                since -= 1.0 / rate;
                pos += amp * (1.0 + 0.15 * normal(rng));
                if (pos >= span) sweeping = true;
            }
        }
        return pos - 0.5 * span;
    }
};

/// First-order autoregressive drift with stationary standard deviation ~sd.
struct Drift {
    double state = 0.0;

    double step(double sd, Rng& rng) {
        state = 0.995 * state + 0.0999 * sd * normal(rng);
        return state;
    }
};

}  // namespace detail

struct SynthRdResult {
    std::vector<RawStream> streams;                  // one per participant
    std::vector<std::vector<AnnotationSpan>> spans;  // aligned with streams
};

/// Generate per-participant 100 Hz streams with `hours_per_class` of each
/// activity, cut into shuffled 1-3 minute blocks, plus the matching
/// annotation spans. All EOG amplitudes stay well below 1000 uV, so the
/// labeled-set noise criteria reject nothing by construction.
inline SynthRdResult synth_rd_stream(std::size_t participants, double hours_per_class,
                                     double theta, std::uint64_t seed) {
    if (!(theta >= 0.0 && theta <= 1.0)) throw DataError("synth: theta must be in [0,1]");
    if (!(hours_per_class > 0.0)) throw DataError("synth: hours_per_class must be positive");
    SynthRdResult res;
    const double dt = 0.01;
    for (std::size_t p = 0; p < participants; ++p) {
        Rng rng = make_rng(derive_seed(seed, 0x726473u /* 'rds' */, p));
        // Carve each class budget into blocks, then shuffle the block order.
        std::vector<std::pair<ActivityLabel, std::size_t>> blocks;
        for (std::size_t c = 0; c < kActivityClasses; ++c) {
            auto remaining =
                static_cast<long long>(std::llround(hours_per_class * 3600.0 * 100.0));
            while (remaining > 0) {
                const auto len = std::min<long long>(
                    remaining, std::llround((60.0 + 120.0 * uniform_real(rng)) * 100.0));
                blocks.emplace_back(static_cast<ActivityLabel>(c),
                                    static_cast<std::size_t>(len));
                remaining -= len;
            }
        }
        shuffle(blocks, rng);

        char name[32];
        std::snprintf(name, sizeof name, "p%02zu", p + 1);
        RawStream stream;
        stream.participant = name;
        std::vector<AnnotationSpan> spans;
        long long t = 0;
        for (const auto& [cls, len] : blocks) {
            const detail::RdClassParams q = detail::rd_effective_params(cls, theta);
            detail::Sawtooth saw_h, saw_v;
            detail::Drift drift_h, drift_v, common;
            const double ph_a = 6.2831853 * uniform_real(rng);
            const double ph_g = 6.2831853 * uniform_real(rng);
            spans.push_back({t, t + static_cast<long long>(len) * kSampleStepMs, cls});
            for (std::size_t k = 0; k < len; ++k) {
                const double tk = static_cast<double>(k) * dt;
                const double h = saw_h.step(dt, q.saw_amp_h, q.saw_rate_h, q.saw_span_h, rng) +
                                 drift_h.step(q.drift_uv, rng) + q.jitter_uv * normal(rng);
                const double v = saw_v.step(dt, q.saw_amp_v, q.saw_rate_v, q.saw_span_v, rng) +
                                 drift_v.step(q.drift_uv, rng) + q.jitter_uv * normal(rng);
                // Place the potentials so derivation recovers h and v exactly:
                // L - R = h and B - (L+R)/2 = v, plus a shared common mode.
                const double cm = common.step(20.0, rng);
                ElectrodeFrame f;
                f.t_ms = t;
                f.l = 0.5 * h + cm;
                f.r = -0.5 * h + cm;
                f.b = v + cm;
                const double sway = 6.2831853 * q.sway_hz * tk + ph_a;
                const double turn = 6.2831853 * q.turn_hz * tk + ph_g;
                f.acc = {q.sway_g * std::sin(sway) + 0.003 * normal(rng),
                         0.8 * q.sway_g * std::sin(sway + 1.7) + 0.003 * normal(rng),
                         1.0 + 0.5 * q.sway_g * std::sin(sway + 3.1) + 0.003 * normal(rng)};
                f.gyro = {q.turn_dps * std::sin(turn) + 0.05 * normal(rng),
                          0.8 * q.turn_dps * std::sin(turn + 2.3) + 0.05 * normal(rng),
                          0.6 * q.turn_dps * std::sin(turn + 4.1) + 0.05 * normal(rng)};
                stream.frames.push_back(f);
                t += kSampleStepMs;
            }
        }
        res.streams.push_back(std::move(stream));
        res.spans.push_back(std::move(spans));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Synthetic answer-confidence gaze records
//
// A question region sits near the top of the screen with four stacked answer
// choices below it. Confident answering reads the question and goes straight
// to one choice; unconfident answering wanders across all choices with
// revisits and longer dwells. theta blends both behaviours toward their
// mean, erasing the difference at zero.

namespace detail {

struct CeClassParams {
    double question_dwell_s = 0.0;
    double choice_dwell_s = 0.0;
    double extra_visits = 0.0;
    double revisits = 0.0;
    double move_s = 0.0;
};

inline CeClassParams ce_class_params(Confidence c) {
    if (c == Confidence::Confident) return {1.0, 0.8, 0.0, 0.0, 0.30};
    return {1.6, 0.7, 3.0, 2.0, 0.35};
}

inline CeClassParams ce_effective_params(Confidence c, double theta) {
    using Arr = std::array<double, 5>;
    static_assert(sizeof(CeClassParams) == sizeof(Arr));
    const Arr a = std::bit_cast<Arr>(ce_class_params(Confidence::Confident));
    const Arr b = std::bit_cast<Arr>(ce_class_params(Confidence::Unconfident));
    Arr out{};
    const Arr& own = c == Confidence::Confident ? a : b;
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double mean = 0.5 * (a[j] + b[j]);
        out[j] = mean + theta * (own[j] - mean);
    }
    return std::bit_cast<CeClassParams>(out);
}

}  // namespace detail

/// Generate `questions_per_participant` gaze records for each participant at
/// 20 Hz on a 1920x1080 screen. `confident_fraction` sets the mean class
/// skew; each participant's own skew is jittered around it to mimic uneven
/// real-world label counts. With `labeled` false the records carry no label
/// (the behaviour distribution is unchanged).
inline std::vector<GazeRecord> synth_ce_gaze(std::size_t participants,
                                             std::size_t questions_per_participant, double theta,
                                             std::uint64_t seed, double confident_fraction = 0.6,
                                             bool labeled = true) {
    if (!(theta >= 0.0 && theta <= 1.0)) throw DataError("synth: theta must be in [0,1]");
    if (!(confident_fraction >= 0.0 && confident_fraction <= 1.0))
        throw DataError("synth: confident_fraction must be in [0,1]");
    const double w = 1920.0, h = 1080.0;
    const double qx = 960.0, qy = 200.0;                  // question region center
    const auto choice_y = [&](std::size_t k) { return 480.0 + 140.0 * static_cast<double>(k); };
    std::vector<GazeRecord> out;
    out.reserve(participants * questions_per_participant);
    for (std::size_t p = 0; p < participants; ++p) {
        Rng rng = make_rng(derive_seed(seed, 0x636573u /* 'ces' */, p));
        const double skew =
            std::clamp(confident_fraction + 0.15 * (2.0 * uniform_real(rng) - 1.0), 0.05, 0.95);
        for (std::size_t qi = 0; qi < questions_per_participant; ++qi) {
            const Confidence cls =
                uniform_real(rng) < skew ? Confidence::Confident : Confidence::Unconfident;
            const detail::CeClassParams cp = detail::ce_effective_params(cls, theta);

            // Waypoints: question, optional wandering visits, the final choice.
            const std::size_t chosen = uniform_index(rng, 4);
            std::vector<std::pair<double, double>> stops{{qx, qy}};
            const double want = cp.extra_visits + cp.revisits;
            auto extra = static_cast<std::size_t>(want);
            if (uniform_real(rng) < want - static_cast<double>(extra)) ++extra;
            std::vector<std::size_t> order{0, 1, 2, 3};
            shuffle(order, rng);
            for (std::size_t k = 0; k < extra; ++k) {
                const std::size_t pick =
                    k < order.size() ? order[k] : uniform_index(rng, 4);
                stops.emplace_back(qx, choice_y(pick));
            }
            stops.emplace_back(qx, choice_y(chosen));

            GazeRecord rec;
            rec.screen_w = w;
            rec.screen_h = h;
            char qid[48];
            std::snprintf(qid, sizeof qid, "p%02zu_q%04zu", p + 1, qi + 1);
            rec.question_id = qid;
            if (labeled) rec.label = cls;
            double t = 0.0;
            const auto emit = [&](double x, double y) {
                rec.points.push_back({t, std::clamp(x, 0.0, w), std::clamp(y, 0.0, h)});
                t += 50.0;
            };
            for (std::size_t s = 0; s < stops.size(); ++s) {
                const auto [cx, cy] = stops[s];
                if (s > 0) {  // travel from the previous stop
                    const auto [px, py] = stops[s - 1];
                    const auto steps =
                        std::max<std::size_t>(2, static_cast<std::size_t>(cp.move_s * 20.0));
                    for (std::size_t m = 1; m <= steps; ++m) {
                        const double a = static_cast<double>(m) / static_cast<double>(steps + 1);
                        emit(px + a * (cx - px) + 12.0 * normal(rng),
                             py + a * (cy - py) + 12.0 * normal(rng));
                    }
                }
                const double dwell = (s == 0 ? cp.question_dwell_s : cp.choice_dwell_s) *
                                     (0.8 + 0.4 * uniform_real(rng));
                const auto n =
                    std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(dwell * 20.0)));
                for (std::size_t m = 0; m < n; ++m)
                    emit(cx + 120.0 * normal(rng), cy + 30.0 * normal(rng));
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion and dumps

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline double parse_double(const std::string& s, const std::string& path, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("'" + path + "' line " + std::to_string(line_no) + ": malformed number '" +
                        s + "'");
    }
}

inline long long parse_ll(const std::string& s, const std::string& path, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("'" + path + "' line " + std::to_string(line_no) +
                        ": malformed integer '" + s + "'");
    }
}

}  // namespace detail

inline constexpr const char* kRdCsvHeader =
    "t_ms,eog_l,eog_r,eog_b,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z";

/// Raw wearable CSV for one participant. The file carries no participant
/// column; the caller names the stream (conventionally from the filename).
inline RawStream read_rd_csv(const std::string& path, const std::string& participant) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open raw csv '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw DataError("raw csv '" + path + "': empty file");
    if (line.ends_with('\r')) line.pop_back();
    if (line != kRdCsvHeader)
        throw DataError("raw csv '" + path + "': unexpected header '" + line + "'");
    RawStream stream;
    stream.participant = participant;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = detail::split_csv_line(line);
        if (fields.size() != 10)
            throw DataError("raw csv '" + path + "' line " + std::to_string(line_no) +
                            ": expected 10 fields, got " + std::to_string(fields.size()));
        ElectrodeFrame fr;
        fr.t_ms = detail::parse_ll(fields[0], path, line_no);
        fr.l = detail::parse_double(fields[1], path, line_no);
        fr.r = detail::parse_double(fields[2], path, line_no);
        fr.b = detail::parse_double(fields[3], path, line_no);
        for (std::size_t c = 0; c < 3; ++c) {
            fr.acc[c] = detail::parse_double(fields[4 + c], path, line_no);
            fr.gyro[c] = detail::parse_double(fields[7 + c], path, line_no);
        }
        if (!stream.frames.empty() && fr.t_ms <= stream.frames.back().t_ms)
            throw DataError("raw csv '" + path + "' line " + std::to_string(line_no) +
                            ": timestamps not strictly increasing");
        stream.frames.push_back(fr);
    }
    return stream;
}

inline void write_rd_csv(const std::string& path, const RawStream& stream) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open raw csv '" + path + "' for writing");
    f << kRdCsvHeader << '\n';
    char buf[256];
    for (const ElectrodeFrame& fr : stream.frames) {
        std::snprintf(buf, sizeof buf, "%lld,%.4f,%.4f,%.4f,%.6f,%.6f,%.6f,%.4f,%.4f,%.4f\n",
                      fr.t_ms, fr.l, fr.r, fr.b, fr.acc[0], fr.acc[1], fr.acc[2], fr.gyro[0],
                      fr.gyro[1], fr.gyro[2]);
        f << buf;
    }
    if (!f) throw DataError("short write to raw csv '" + path + "'");
}

inline constexpr const char* kAnnotationCsvHeader = "participant,start_ms,end_ms,label";

inline std::map<std::string, std::vector<AnnotationSpan>> read_annotations(
    const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open annotation csv '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw DataError("annotation csv '" + path + "': empty file");
    if (line.ends_with('\r')) line.pop_back();
    if (line != kAnnotationCsvHeader)
        throw DataError("annotation csv '" + path + "': unexpected header '" + line + "'");
    std::map<std::string, std::vector<AnnotationSpan>> out;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = detail::split_csv_line(line);
        if (fields.size() != 4)
            throw DataError("annotation csv '" + path + "' line " + std::to_string(line_no) +
                            ": expected 4 fields, got " + std::to_string(fields.size()));
        AnnotationSpan span;
        span.start_ms = detail::parse_ll(fields[1], path, line_no);
        span.end_ms = detail::parse_ll(fields[2], path, line_no);
        span.label = parse_activity_label(fields[3]);
        if (span.start_ms >= span.end_ms)
            throw DataError("annotation csv '" + path + "' line " + std::to_string(line_no) +
                            ": start >= end");
        out[fields[0]].push_back(span);
    }
    for (auto& [who, spans] : out) {
        std::vector<AnnotationSpan> sorted = spans;
        std::sort(sorted.begin(), sorted.end(), [](const AnnotationSpan& a, const AnnotationSpan& b) {
            return a.start_ms < b.start_ms;
        });
        for (std::size_t i = 1; i < sorted.size(); ++i)
            if (sorted[i - 1].end_ms > sorted[i].start_ms)
                throw DataError("annotation csv '" + path + "': overlapping spans for '" + who +
                                "'");
    }
    return out;
}

inline void write_annotations(const std::string& path,
                              const std::map<std::string, std::vector<AnnotationSpan>>& spans) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open annotation csv '" + path + "' for writing");
    f << kAnnotationCsvHeader << '\n';
    for (const auto& [who, list] : spans)
        for (const AnnotationSpan& s : list)
            f << who << ',' << s.start_ms << ',' << s.end_ms << ','
              << activity_label_name(s.label) << '\n';
    if (!f) throw DataError("short write to annotation csv '" + path + "'");
}

}  // namespace ssrl
