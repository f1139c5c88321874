#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssrl/dataset.hpp"
#include "ssrl/graph.hpp"
#include "ssrl/optim.hpp"
#include "ssrl/transforms.hpp"

namespace ssrl {

/// Pretext and target graphs for one task. Base layers carry identical
/// "base/" parameter names in both graphs, so a state dict saved after
/// pre-training loads losslessly into the target network; only the "head/"
/// parameters differ. Training and inference run in float; the builders are
/// generic over the scalar so finite-difference checks can rebuild the exact
/// architectures in double.
template <typename Real>
struct BasicNetworkPair {
    Graph<Real> pretext;
    Graph<Real> target;
};

using NetworkPair = BasicNetworkPair<float>;

namespace detail {

inline std::size_t scaled_units(std::size_t units, double scale, const std::string& name) {
    const long long s = std::llround(static_cast<double>(units) * scale);
    if (s < 1)
        throw ShapeError("width scale " + std::to_string(scale) + " collapses '" + name +
                         "' to zero units");
    return static_cast<std::size_t>(s);
}

/// Three conv1d+batchnorm+relu stages with the shared 32/64/96-unit,
/// 24/16/8-kernel schedule; only the conv widths scale.
template <typename Real>
int conv_block1d(Graph<Real>& g, int in, const std::string& scope, double scale) {
    constexpr std::size_t units[3] = {32, 64, 96};
    constexpr std::size_t kernels[3] = {24, 16, 8};
    int node = in;
    for (int i = 0; i < 3; ++i) {
        const std::string tag = std::to_string(i + 1);
        node = g.add({.kind = LayerKind::Conv1d,
                      .name = scope + "/conv" + tag,
                      .units = scaled_units(units[i], scale, scope + "/conv" + tag),
                      .kernel = kernels[i]},
                     node);
        node = g.add({.kind = LayerKind::BatchNorm, .name = scope + "/bn" + tag}, node);
        node = g.add({.kind = LayerKind::Relu, .name = scope + "/relu" + tag}, node);
    }
    return node;
}

/// Sensor-task base: one conv block per sensor branch, channel-wise concat,
/// one merge conv block, global max pool (the exported embedding), dropout.
template <typename Real>
int add_rd_base(Graph<Real>& g, double scale, double dropout) {
    const int eog = g.add_input("eog", kEogChannels);
    const int acc = g.add_input("acc", kAccChannels);
    const int gyro = g.add_input("gyro", kGyroChannels);
    const int cat = g.add({.kind = LayerKind::Concat, .name = "base/concat"},
                          {conv_block1d(g, eog, "base/eog", scale),
                           conv_block1d(g, acc, "base/acc", scale),
                           conv_block1d(g, gyro, "base/gyro", scale)});
    const int merge = conv_block1d(g, cat, "base/merge", scale);
    const int gmp = g.add({.kind = LayerKind::GlobalMaxPool1d, .name = "base/gmp"}, merge);
    g.mark_embedding(gmp);
    return g.add({.kind = LayerKind::Dropout, .name = "base/dropout", .rate = dropout}, gmp);
}

/// Image-task base: two conv2d(8)+bn+relu then pool, two conv2d(16)+bn+relu
/// then pool, dropout, flatten (the exported embedding).
template <typename Real>
int add_ce_base(Graph<Real>& g, double dropout) {
    constexpr std::size_t units[4] = {8, 8, 16, 16};
    int node = g.add_input2d("image", 3, kImageSize, kImageSize);
    for (int i = 0; i < 4; ++i) {
        const std::string tag = std::to_string(i + 1);
        node = g.add({.kind = LayerKind::Conv2d,
                      .name = "base/conv" + tag,
                      .units = units[i],
                      .kernel = 3},
                     node);
        node = g.add({.kind = LayerKind::BatchNorm, .name = "base/bn" + tag}, node);
        node = g.add({.kind = LayerKind::Relu, .name = "base/relu" + tag}, node);
        if (i % 2 == 1)
            node = g.add({.kind = LayerKind::MaxPool2d,
                          .name = "base/pool" + std::to_string(i / 2 + 1),
                          .pool = 2},
                         node);
    }
    node = g.add({.kind = LayerKind::Dropout, .name = "base/dropout", .rate = dropout}, node);
    node = g.add({.kind = LayerKind::Flatten, .name = "base/flatten"}, node);
    g.mark_embedding(node);
    return node;
}

template <typename Real>
void add_dense_head(Graph<Real>& g, int in, const std::string& head,
                    std::span<const std::size_t> widths, std::size_t classes) {
    const std::string scope = "head/" + head;
    int node = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const std::string tag = std::to_string(i + 1);
        node = g.add({.kind = LayerKind::Dense, .name = scope + "/fc" + tag, .units = widths[i]},
                     node);
        node = g.add({.kind = LayerKind::Relu, .name = scope + "/relu" + tag}, node);
    }
    node = g.add({.kind = LayerKind::Dense, .name = scope + "/logits", .units = classes}, node);
    node = g.add({.kind = LayerKind::Softmax, .name = scope + "/softmax"}, node);
    g.mark_output(head, node);
}

} // namespace detail

/// Reading-detection networks. Pretext heads "eog"/"acc"/"gyro" classify the
/// applied signal transformation (8/9/9 classes); the target head "target"
/// classifies the four reading activities. The scale knob shrinks conv widths
/// for fast runs; 1.0 is the reference architecture.
template <typename Real = float>
BasicNetworkPair<Real> build_rd_networks(double width_scale = 1.0, double dropout_rate = 0.25) {
    if (!(width_scale > 0.0)) throw ShapeError("width scale must be positive");
    constexpr std::size_t head_widths[2] = {256, 512};
    constexpr std::size_t target_widths[1] = {1024};
    BasicNetworkPair<Real> nets;
    {
        Graph<Real>& g = nets.pretext;
        const int base = detail::add_rd_base(g, width_scale, dropout_rate);
        detail::add_dense_head(g, base, "eog", head_widths, pretext_kinds(kEogChannels).size());
        detail::add_dense_head(g, base, "acc", head_widths, pretext_kinds(kAccChannels).size());
        detail::add_dense_head(g, base, "gyro", head_widths, pretext_kinds(kGyroChannels).size());
    }
    {
        Graph<Real>& g = nets.target;
        const int base = detail::add_rd_base(g, width_scale, dropout_rate);
        detail::add_dense_head(g, base, "target", target_widths, kActivityClasses);
    }
    return nets;
}

/// Confidence-estimation networks over [3, 64, 64] rasters. Pretext head
/// "pretext" classifies the applied image transformation (4 classes); the
/// target head "target" is the binary confident/unconfident classifier.
template <typename Real = float>
BasicNetworkPair<Real> build_ce_networks(double dropout_rate = 0.25) {
    constexpr std::size_t pretext_widths[2] = {36, 36};
    constexpr std::size_t target_widths[1] = {64};
    BasicNetworkPair<Real> nets;
    {
        Graph<Real>& g = nets.pretext;
        detail::add_dense_head(g, detail::add_ce_base(g, dropout_rate), "pretext",
                               pretext_widths, kImagePretextClasses);
    }
    {
        Graph<Real>& g = nets.target;
        detail::add_dense_head(g, detail::add_ce_base(g, dropout_rate), "target",
                               target_widths, 2);
    }
    return nets;
}

/// Knobs for one training run. `dropout` is consumed by the network builders
/// (the rate is baked into the graph); everything else drives the loop.
struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 32;
    OptimizerConfig optim = OptimizerConfig::adam(1e-3);
    double dropout = 0.25;
    std::size_t patience = 0;  // epochs without a new best before stopping; 0 disables
    double val_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw DataError("train config: epochs must be positive");
        if (batch < 2) throw DataError("train config: batch must be >= 2 for batch statistics");
        if (!(val_fraction > 0.0 && val_fraction < 1.0))
            throw DataError("train config: validation fraction must lie in (0, 1)");
        if (dropout < 0.0 || dropout >= 1.0)
            throw DataError("train config: dropout rate must lie in [0, 1)");
    }
};

struct EpochStats {
    double train_loss = 0.0, train_acc = 0.0;
    double val_loss = 0.0, val_acc = 0.0;
};

/// Learning curves plus best-validation bookkeeping. When several heads train
/// jointly, losses are summed over heads and accuracies averaged across them;
/// `loss_rule` records which rule applied.
struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val_acc = 0.0;
    std::map<std::string, double> head_val_acc;  // at the best epoch
    std::size_t val_examples = 0;
    std::string loss_rule;

    Json to_json() const {
        Json curve = Json::array();
        for (const EpochStats& e : epochs)
            curve.push_back({{"train_loss", e.train_loss},
                             {"train_acc", e.train_acc},
                             {"val_loss", e.val_loss},
                             {"val_acc", e.val_acc}});
        return Json{{"epochs", curve},
                    {"best_epoch", best_epoch},
                    {"best_val_acc", best_val_acc},
                    {"head_val_acc", head_val_acc},
                    {"val_examples", val_examples},
                    {"loss", loss_rule}};
    }
};

/// Rows of `x` at `rows`, preserving trailing dimensions.
inline Tensor<float> gather_rows(const Tensor<float>& x, std::span<const std::size_t> rows) {
    if (x.rank() < 2)
        throw ShapeError("gather_rows: need a batched tensor, got " + shape_str(x.shape()));
    Shape s = x.shape();
    s[0] = rows.size();
    Tensor<float> out(s);
    const std::size_t stride = x.extent(0) ? x.size() / x.extent(0) : 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.extent(0))
            throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range [0," +
                             std::to_string(x.extent(0)) + ")");
        std::copy(x.data() + rows[i] * stride, x.data() + (rows[i] + 1) * stride,
                  out.data() + i * stride);
    }
    return out;
}

/// Contiguous channel slice [c0, c0+count) of [N, C, L] segments.
inline Tensor<float> slice_channels(const Tensor<float>& x, std::size_t c0, std::size_t count) {
    if (x.rank() != 3)
        throw ShapeError("slice_channels: expected [N,C,L], got " + shape_str(x.shape()));
    const std::size_t n = x.extent(0), c = x.extent(1), l = x.extent(2);
    if (c0 + count > c) throw ShapeError("slice_channels: slice past the channel axis");
    Tensor<float> out({n, count, l});
    for (std::size_t i = 0; i < n; ++i)
        std::copy(x.data() + (i * c + c0) * l, x.data() + (i * c + c0 + count) * l,
                  out.data() + i * count * l);
    return out;
}

/// Named sensor-branch slices of packed [N, 8, L] segments.
inline std::map<std::string, Tensor<float>> rd_inputs(const Tensor<float>& segments) {
    return {{"eog", slice_channels(segments, kEogOffset, kEogChannels)},
            {"acc", slice_channels(segments, kAccOffset, kAccChannels)},
            {"gyro", slice_channels(segments, kGyroOffset, kGyroChannels)}};
}

inline std::map<std::string, const Tensor<float>*> input_ptrs(
    const std::map<std::string, Tensor<float>>& named) {
    std::map<std::string, const Tensor<float>*> out;
    for (const auto& [name, t] : named) out[name] = &t;
    return out;
}

namespace detail {

inline std::size_t count_correct(const Tensor<float>& probs, std::span<const int> labels) {
    const std::size_t n = probs.extent(0), c = probs.extent(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = probs.data() + i * c;
        const auto best = std::max_element(row, row + c) - row;
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return correct;
}

} // namespace detail

/// He-uniform initialization with zero-initialized classifier output layers:
/// an untrained network emits near-uniform class probabilities whatever the
/// input scale, and every head starts unbiased. The output layer recovers
/// immediately since its gradient does not depend on its own weights.
inline void init_model(Graph<float>& g, std::uint64_t seed) {
    g.init_params(seed);
    for (auto& p : g.params())
        if (p.name.find("/logits/") != std::string::npos) p.value.zero();
}

/// Trains `g` on named inputs and per-head integer labels: mini-batch descent
/// under a cross-entropy summed over all listed heads, a seed-keyed held-out
/// validation split, and best-validation-accuracy snapshotting with ties to
/// the earliest epoch. The graph is left holding the best parameters.
inline TrainReport fit(Graph<float>& g, const std::map<std::string, const Tensor<float>*>& inputs,
                       const std::map<std::string, std::vector<int>>& labels,
                       const TrainConfig& cfg) {
    cfg.validate();
    if (inputs.empty()) throw ShapeError("fit: no inputs");
    if (labels.empty()) throw ShapeError("fit: no labeled heads");
    const std::size_t n = inputs.begin()->second->extent(0);
    for (const auto& [name, t] : inputs)
        if (t->extent(0) != n)
            throw ShapeError("fit: input '" + name + "' has " + std::to_string(t->extent(0)) +
                             " rows, expected " + std::to_string(n));
    for (const auto& [head, y] : labels) {
        if (!g.outputs().count(head)) throw ShapeError("fit: graph has no head '" + head + "'");
        if (y.size() != n)
            throw ShapeError("fit: head '" + head + "' has " + std::to_string(y.size()) +
                             " labels, expected " + std::to_string(n));
    }
    if (n < 4) throw DataError("fit: need at least 4 examples, got " + std::to_string(n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng = make_rng(derive_seed(cfg.seed, 0x73706c74ULL));
    shuffle(order, split_rng);
    std::size_t val_n =
        static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
    val_n = std::clamp<std::size_t>(val_n, 1, n - 2);
    const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<long>(val_n));
    std::vector<std::size_t> train(order.begin() + static_cast<long>(val_n), order.end());

    Optimizer<float> opt(cfg.optim, g);
    Workspace<float> ws;

    auto batch_ptrs = [&](std::span<const std::size_t> idx,
                          std::map<std::string, Tensor<float>>& store) {
        std::map<std::string, const Tensor<float>*> ptrs;
        for (const auto& [name, t] : inputs) {
            store[name] = gather_rows(*t, idx);
            ptrs[name] = &store[name];
        }
        return ptrs;
    };
    auto batch_labels = [](const std::vector<int>& y, std::span<const std::size_t> idx) {
        std::vector<int> out(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) out[i] = y[idx[i]];
        return out;
    };
    auto evaluate = [&](std::span<const std::size_t> idx, std::map<std::string, double>* per_head) {
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::map<std::string, std::size_t> head_correct;
        std::map<std::string, Tensor<float>> store;
        for (std::size_t at = 0; at < idx.size(); at += 256) {
            const std::size_t b = std::min<std::size_t>(256, idx.size() - at);
            const auto chunk = idx.subspan(at, b);
            g.forward(ws, batch_ptrs(chunk, store), Mode::Infer);
            double head_sum = 0.0;
            for (const auto& [head, y] : labels) {
                const std::vector<int> yb = batch_labels(y, chunk);
                head_sum += g.loss_xent(ws, head, yb);
                const std::size_t ok = detail::count_correct(
                    ws.act[static_cast<std::size_t>(g.output_id(head))], yb);
                correct += ok;
                head_correct[head] += ok;
            }
            loss_sum += head_sum * static_cast<double>(b);
        }
        if (per_head)
            for (const auto& [head, ok] : head_correct)
                (*per_head)[head] = static_cast<double>(ok) / static_cast<double>(idx.size());
        return std::pair{loss_sum / static_cast<double>(idx.size()),
                         static_cast<double>(correct) /
                             static_cast<double>(idx.size() * labels.size())};
    };

    TrainReport report;
    report.val_examples = val_n;
    report.loss_rule = labels.size() > 1 ? "summed-cross-entropy" : "cross-entropy";
    TensorMap best_state = g.state_dict();
    double best_acc = -1.0;
    std::size_t best_epoch = 0, stale = 0;
    std::map<std::string, double> best_heads;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng order_rng = make_rng(derive_seed(cfg.seed, 0x65706f63ULL, epoch));
        shuffle(train, order_rng);
        double loss_sum = 0.0;
        std::size_t seen = 0, correct = 0;
        std::map<std::string, Tensor<float>> store;
        for (std::size_t at = 0; at < train.size(); at += cfg.batch) {
            const std::size_t b = std::min(cfg.batch, train.size() - at);
            if (b < 2) continue;  // batchnorm needs batch statistics
            const std::span<const std::size_t> chunk(train.data() + at, b);
            g.forward(ws, batch_ptrs(chunk, store), Mode::Train,
                      derive_seed(cfg.seed, 0x73746570ULL, epoch * 1000003 + at));
            double step_loss = 0.0;
            for (const auto& [head, y] : labels) {
                const std::vector<int> yb = batch_labels(y, chunk);
                step_loss += g.loss_xent(ws, head, yb);
                correct += detail::count_correct(
                    ws.act[static_cast<std::size_t>(g.output_id(head))], yb);
            }
            g.zero_grads();
            g.backward(ws);
            opt.step(g);
            loss_sum += step_loss * static_cast<double>(b);
            seen += b;
        }
        EpochStats es;
        es.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        es.train_acc =
            seen ? static_cast<double>(correct) / static_cast<double>(seen * labels.size()) : 0.0;
        std::map<std::string, double> heads;
        std::tie(es.val_loss, es.val_acc) = evaluate(val, &heads);
        report.epochs.push_back(es);
        if (es.val_acc > best_acc) {
            best_acc = es.val_acc;
            best_epoch = epoch;
            best_state = g.state_dict();
            best_heads = std::move(heads);
            stale = 0;
        } else {
            ++stale;
            if (cfg.patience && stale >= cfg.patience) break;
        }
    }

    g.load_state_dict(best_state);
    report.best_epoch = best_epoch;
    report.best_val_acc = best_acc;
    report.head_val_acc = std::move(best_heads);
    return report;
}

/// Self-supervised stage for the sensor task: the three transformation heads
/// train jointly under a summed cross-entropy.
inline TrainReport pretrain_rd(Graph<float>& pretext, const RdPretextData& data,
                               const TrainConfig& cfg) {
    init_model(pretext, derive_seed(cfg.seed, 0x696e6974ULL));
    return fit(pretext, {{"eog", &data.eog}, {"acc", &data.acc}, {"gyro", &data.gyro}},
               {{"eog", data.y_eog}, {"acc", data.y_acc}, {"gyro", data.y_gyro}}, cfg);
}

/// Self-supervised stage for the image task: one transformation head.
inline TrainReport pretrain_ce(Graph<float>& pretext, const ImagePretextData& data,
                               const TrainConfig& cfg) {
    init_model(pretext, derive_seed(cfg.seed, 0x696e6974ULL));
    return fit(pretext, {{"image", &data.x}}, {{"pretext", data.y}}, cfg);
}

namespace detail {

/// Positions of the labeled examples to fine-tune on: a class-balanced draw
/// of `n_per_class` each, or every labeled example when n_per_class is 0.
inline std::vector<std::size_t> balanced_labeled_subset(const std::vector<int>& y, int classes,
                                                        std::size_t n_per_class,
                                                        std::uint64_t seed,
                                                        const std::vector<std::string>& names) {
    std::vector<std::size_t> labeled;
    std::vector<int> yl;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] >= 0) {
            labeled.push_back(i);
            yl.push_back(y[i]);
        }
    if (labeled.empty()) throw DataError("finetune: dataset has no labeled examples");
    if (n_per_class == 0) return labeled;
    const auto rel = balance_indices(yl, classes, n_per_class, seed, names);
    std::vector<std::size_t> out(rel.size());
    for (std::size_t i = 0; i < rel.size(); ++i) out[i] = labeled[rel[i]];
    return out;
}

} // namespace detail

/// Supervised stage for the sensor task: fresh-initializes the target
/// network, overlays pre-trained "base/" parameters when given (pass nullptr
/// for the fully-supervised control), and trains on a class-balanced labeled
/// subsample (n_per_class 0 = every labeled example, unbalanced).
inline TrainReport finetune_rd(Graph<float>& target, const TensorMap* pretrained,
                               const RdDataset& ds, std::size_t n_per_class,
                               const TrainConfig& cfg, bool freeze_base = false) {
    init_model(target, derive_seed(cfg.seed, 0x696e6974ULL));
    if (pretrained && target.load_state_dict(*pretrained) == 0)
        throw DataError("finetune: checkpoint shares no parameters with the target network");
    for (auto& p : target.params())
        if (p.name.starts_with("base/")) p.trainable = !freeze_base;
    std::vector<std::string> class_names;
    for (std::size_t c = 0; c < kActivityClasses; ++c)
        class_names.push_back(activity_label_name(static_cast<ActivityLabel>(c)));
    const auto picked = detail::balanced_labeled_subset(
        ds.y, static_cast<int>(kActivityClasses), n_per_class,
        derive_seed(cfg.seed, 0x62616cULL), class_names);
    const Tensor<float> x = gather_rows(ds.x, picked);
    std::vector<int> y(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) y[i] = ds.y[picked[i]];
    const auto named = rd_inputs(x);
    return fit(target, input_ptrs(named), {{"target", std::move(y)}}, cfg);
}

/// Supervised stage for the image task; same contract as finetune_rd.
inline TrainReport finetune_ce(Graph<float>& target, const TensorMap* pretrained,
                               const CeDataset& ds, std::size_t n_per_class,
                               const TrainConfig& cfg, bool freeze_base = false) {
    init_model(target, derive_seed(cfg.seed, 0x696e6974ULL));
    if (pretrained && target.load_state_dict(*pretrained) == 0)
        throw DataError("finetune: checkpoint shares no parameters with the target network");
    for (auto& p : target.params())
        if (p.name.starts_with("base/")) p.trainable = !freeze_base;
    const auto picked = detail::balanced_labeled_subset(ds.y, 2, n_per_class,
                                                        derive_seed(cfg.seed, 0x62616cULL),
                                                        {"confident", "unconfident"});
    const Tensor<float> x = gather_rows(ds.x, picked);
    std::vector<int> y(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) y[i] = ds.y[picked[i]];
    return fit(target, {{"image", &x}}, {{"target", std::move(y)}}, cfg);
}

struct Prediction {
    Tensor<float> probs;      // [N, classes]
    Tensor<float> embedding;  // [N, features]: global-max-pool (RD) / flatten (CE) output
};

/// Pure inference: dropout off, batchnorm on running statistics.
inline Prediction predict(Graph<float>& g,
                          const std::map<std::string, const Tensor<float>*>& inputs,
                          const std::string& head = "target") {
    if (!g.outputs().count(head)) throw ShapeError("predict: graph has no head '" + head + "'");
    Workspace<float> ws;
    g.forward(ws, inputs, Mode::Infer);
    Prediction out;
    out.probs = ws.act[static_cast<std::size_t>(g.output_id(head))];
    if (g.embedding_id() >= 0)
        out.embedding = ws.act[static_cast<std::size_t>(g.embedding_id())];
    return out;
}

inline Prediction predict_rd(Graph<float>& g, const Tensor<float>& segments,
                             const std::string& head = "target") {
    const auto named = rd_inputs(segments);
    return predict(g, input_ptrs(named), head);
}

inline Prediction predict_ce(Graph<float>& g, const Tensor<float>& images,
                             const std::string& head = "target") {
    return predict(g, {{"image", &images}}, head);
}

// ---- external interfaces ----

/// Writes `<prefix>.bin` (parameter checkpoint) and `<prefix>.json` (sidecar
/// metadata: task, stage, seed, config hash — whatever the caller supplies).
inline void save_model(const std::string& prefix, const Graph<float>& g, const Json& sidecar) {
    save_checkpoint(prefix + ".bin", g.state_dict());
    std::ofstream f(prefix + ".json", std::ios::binary);
    if (!f) throw DataError("cannot write '" + prefix + ".json'");
    f << sidecar.dump(2) << '\n';
    if (!f) throw DataError("short write on '" + prefix + ".json'");
}

inline TensorMap load_model(const std::string& prefix, Json* sidecar = nullptr) {
    TensorMap state = load_checkpoint(prefix + ".bin");
    if (sidecar) {
        std::ifstream f(prefix + ".json");
        if (!f) throw DataError("cannot open '" + prefix + ".json'");
        try {
            f >> *sidecar;
        } catch (const std::exception& e) {
            throw DataError("'" + prefix + ".json': " + e.what());
        }
    }
    return state;
}

} // namespace ssrl
