#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "ssrl/dataset.hpp"
#include "ssrl/gaze.hpp"
#include "ssrl/pipeline.hpp"

namespace ssrl {

inline constexpr std::size_t kRdFeatureCount = 16;
inline constexpr std::size_t kCeFeatureCount = 4;

/// Fixed-width statistical features tagged with the extractor schema that
/// produced them; mixing schemas across train and predict is an error.
struct FeatureVector {
    std::vector<double> values;
    std::string schema;
};

namespace detail {

/// Population mean and variance (divide by N), appended as a (mean, var) pair.
inline void push_mean_var(std::vector<double>& out, const double* v, std::size_t n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += v[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (v[i] - mean) * (v[i] - mean);
    var /= static_cast<double>(n);
    out.push_back(mean);
    out.push_back(var);
}

} // namespace detail

/// Mean and population variance of each of the 8 channels in packed order
/// (EOG H, EOG V, ACC x/y/z, GYRO x/y/z), interleaved as (mean, var) pairs.
inline FeatureVector extract_rd_features(const SensorSegment& seg) {
    if (seg.eog.size() != 2 || seg.acc.size() != 3 || seg.gyro.size() != 3)
        throw ShapeError("rd features: segment must hold 2 EOG + 3 ACC + 3 GYRO channels");
    FeatureVector f;
    f.schema = "rd-mv16";
    f.values.reserve(kRdFeatureCount);
    std::vector<double> channel;
    const Channels* groups[3] = {&seg.eog, &seg.acc, &seg.gyro};
    for (const Channels* g : groups)
        for (const auto& ch : *g) {
            if (ch.empty()) throw ShapeError("rd features: empty channel");
            channel.assign(ch.begin(), ch.end());
            detail::push_mean_var(f.values, channel.data(), channel.size());
        }
    return f;
}

/// Same features from one row of packed [N, 8, L] segments.
inline FeatureVector extract_rd_features(const Tensor<float>& x, std::size_t row) {
    if (x.rank() != 3 || x.extent(1) != kRdChannels)
        throw ShapeError("rd features: expected [N,8,L], got " + shape_str(x.shape()));
    if (row >= x.extent(0)) throw ShapeError("rd features: row out of range");
    const std::size_t l = x.extent(2);
    FeatureVector f;
    f.schema = "rd-mv16";
    f.values.reserve(kRdFeatureCount);
    std::vector<double> channel(l);
    for (std::size_t c = 0; c < kRdChannels; ++c) {
        const float* src = x.data() + (row * kRdChannels + c) * l;
        std::copy(src, src + l, channel.begin());
        detail::push_mean_var(f.values, channel.data(), l);
    }
    return f;
}

/// (mean x, var x, mean y, var y) of the trajectory in screen-normalized
/// coordinates, so the features do not depend on absolute screen units.
inline FeatureVector extract_ce_features(const GazeRecord& rec) {
    if (rec.points.empty()) throw DataError("ce features: empty gaze record");
    if (!(rec.screen_w > 0.0) || !(rec.screen_h > 0.0))
        throw DataError("ce features: non-positive screen extent");
    std::vector<double> xs, ys;
    xs.reserve(rec.points.size());
    ys.reserve(rec.points.size());
    for (const auto& p : rec.points) {
        xs.push_back(p.x / rec.screen_w);
        ys.push_back(p.y / rec.screen_h);
    }
    FeatureVector f;
    f.schema = "ce-mv4";
    detail::push_mean_var(f.values, xs.data(), xs.size());
    detail::push_mean_var(f.values, ys.data(), ys.size());
    return f;
}

/// Subset of the features at `keep` (in the given order); the schema id gains
/// a mask suffix so masked and unmasked vectors never mix silently.
inline FeatureVector select_features(const FeatureVector& f,
                                     const std::vector<std::size_t>& keep) {
    if (keep.empty()) throw DataError("feature mask: empty selection");
    FeatureVector out;
    out.schema = f.schema + "[";
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] >= f.values.size())
            throw DataError("feature mask: index " + std::to_string(keep[i]) +
                            " out of range for " + f.schema);
        out.values.push_back(f.values[keep[i]]);
        out.schema += (i ? "," : "") + std::to_string(keep[i]);
    }
    out.schema += "]";
    return out;
}

/// Linear one-vs-rest classifier with the training-split standardization
/// baked in. Features whose training spread is zero keep stdev 0 and are
/// ignored at prediction time (standardized to 0).
struct SvmModel {
    std::string schema;
    double lambda = 0.0;
    std::vector<std::vector<double>> w;  // [classes][features]
    std::vector<double> b;               // [classes]
    std::vector<double> mean, stdev;     // per-feature training statistics

    std::size_t classes() const { return b.size(); }
    std::size_t features() const { return mean.size(); }

    std::vector<double> standardize(const FeatureVector& f) const {
        if (f.schema != schema)
            throw DataError("svm: feature schema '" + f.schema + "' does not match model '" +
                            schema + "'");
        if (f.values.size() != features())
            throw DataError("svm: got " + std::to_string(f.values.size()) + " features, expected " +
                            std::to_string(features()));
        std::vector<double> z(features());
        for (std::size_t j = 0; j < z.size(); ++j)
            z[j] = stdev[j] > 0.0 ? (f.values[j] - mean[j]) / stdev[j] : 0.0;
        return z;
    }
};

struct SvmTraining {
    SvmModel model;
    std::vector<double> objective;  // regularized hinge objective after each epoch
};

namespace detail {

inline double svm_objective(const SvmModel& m, const std::vector<std::vector<double>>& z,
                            const std::vector<int>& labels) {
    double reg = 0.0;
    for (const auto& wc : m.w)
        for (const double v : wc) reg += v * v;
    reg *= 0.5 * m.lambda;
    double hinge = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t c = 0; c < m.classes(); ++c) {
            const double y = labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
            const double score =
                std::inner_product(m.w[c].begin(), m.w[c].end(), z[i].begin(), m.b[c]);
            hinge += std::max(0.0, 1.0 - y * score);
        }
    return reg + hinge / static_cast<double>(z.size());
}

} // namespace detail

/// Trains per-class hinge objectives by decaying-step subgradient descent
/// (step 1/(λt)) over shuffled epochs; all class problems share one example
/// order so a 2-class run is an exactly mirrored pair of binary problems.
inline SvmTraining svm_train(const std::vector<FeatureVector>& features,
                             const std::vector<int>& labels, double lambda, std::size_t epochs,
                             std::uint64_t seed) {
    if (features.empty()) throw DataError("svm: no training features");
    if (features.size() != labels.size())
        throw DataError("svm: " + std::to_string(features.size()) + " features but " +
                        std::to_string(labels.size()) + " labels");
    if (!(lambda > 0.0)) throw DataError("svm: lambda must be positive");
    if (epochs < 1) throw DataError("svm: epochs must be positive");

    const std::string& schema = features[0].schema;
    const std::size_t width = features[0].values.size();
    int max_label = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].schema != schema)
            throw DataError("svm: mixed feature schemas '" + schema + "' and '" +
                            features[i].schema + "'");
        if (features[i].values.size() != width) throw DataError("svm: ragged feature widths");
        for (const double v : features[i].values)
            if (!std::isfinite(v)) throw NumericError("svm: non-finite feature value");
        if (labels[i] < 0) throw DataError("svm: negative label");
        max_label = std::max(max_label, labels[i]);
    }
    const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::size_t> counts(classes, 0);
    for (const int y : labels) ++counts[static_cast<std::size_t>(y)];
    if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2)
        throw DataError("svm: training data holds a single class");

    SvmModel m;
    m.schema = schema;
    m.lambda = lambda;
    m.mean.assign(width, 0.0);
    m.stdev.assign(width, 0.0);
    for (const auto& f : features)
        for (std::size_t j = 0; j < width; ++j) m.mean[j] += f.values[j];
    for (double& v : m.mean) v /= static_cast<double>(features.size());
    for (const auto& f : features)
        for (std::size_t j = 0; j < width; ++j) {
            const double d = f.values[j] - m.mean[j];
            m.stdev[j] += d * d;
        }
    for (double& v : m.stdev) v = std::sqrt(v / static_cast<double>(features.size()));

    std::vector<std::vector<double>> z(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        z[i].resize(width);
        for (std::size_t j = 0; j < width; ++j)
            z[i][j] = m.stdev[j] > 0.0 ? (features[i].values[j] - m.mean[j]) / m.stdev[j] : 0.0;
    }

    m.w.assign(classes, std::vector<double>(width, 0.0));
    m.b.assign(classes, 0.0);

    SvmTraining result;
    std::vector<std::size_t> order(features.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        Rng rng = make_rng(derive_seed(seed, 0x73766dULL, epoch));
        shuffle(order, rng);
        for (const std::size_t i : order) {
            ++t;
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const double shrink = 1.0 - 1.0 / static_cast<double>(t);  // 1 - eta*lambda
            for (std::size_t c = 0; c < classes; ++c) {
                const double y = labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
                const double score =
                    std::inner_product(m.w[c].begin(), m.w[c].end(), z[i].begin(), m.b[c]);
                for (double& v : m.w[c]) v *= shrink;
                if (y * score < 1.0) {
                    for (std::size_t j = 0; j < width; ++j) m.w[c][j] += eta * y * z[i][j];
                    m.b[c] += eta * y;
                }
            }
        }
        result.objective.push_back(detail::svm_objective(m, z, labels));
    }
    result.model = std::move(m);
    return result;
}

struct SvmPrediction {
    int label = 0;
    std::vector<double> scores;
};

/// Argmax of the per-class linear scores on standardized features; ties break
/// toward the lower class index.
inline SvmPrediction svm_predict(const SvmModel& m, const FeatureVector& f) {
    const std::vector<double> z = m.standardize(f);
    SvmPrediction out;
    out.scores.resize(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c)
        out.scores[c] = std::inner_product(m.w[c].begin(), m.w[c].end(), z.begin(), m.b[c]);
    for (std::size_t c = 1; c < m.classes(); ++c)
        if (out.scores[c] > out.scores[static_cast<std::size_t>(out.label)])
            out.label = static_cast<int>(c);
    return out;
}

// ---- external interfaces ----

inline Json svm_to_json(const SvmModel& m) {
    return Json{{"schema", m.schema}, {"lambda", m.lambda}, {"w", m.w},
                {"b", m.b},           {"mean", m.mean},     {"stdev", m.stdev}};
}

inline SvmModel svm_from_json(const Json& j) {
    SvmModel m;
    try {
        m.schema = j.at("schema").get<std::string>();
        m.lambda = j.at("lambda").get<double>();
        m.w = j.at("w").get<std::vector<std::vector<double>>>();
        m.b = j.at("b").get<std::vector<double>>();
        m.mean = j.at("mean").get<std::vector<double>>();
        m.stdev = j.at("stdev").get<std::vector<double>>();
    } catch (const Json::exception& e) {
        throw DataError(std::string("svm model json: ") + e.what());
    }
    if (m.w.size() != m.b.size()) throw DataError("svm model json: w/b class counts differ");
    for (const auto& wc : m.w)
        if (wc.size() != m.mean.size() || m.stdev.size() != m.mean.size())
            throw DataError("svm model json: inconsistent feature widths");
    return m;
}

inline void save_svm(const std::string& path, const SvmModel& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write '" + path + "'");
    f << svm_to_json(m).dump(2) << '\n';
    if (!f) throw DataError("short write on '" + path + "'");
}

inline SvmModel load_svm(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open '" + path + "'");
    Json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw DataError("'" + path + "': " + e.what());
    }
    return svm_from_json(j);
}

} // namespace ssrl
