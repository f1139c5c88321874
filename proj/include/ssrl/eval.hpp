#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "ssrl/models.hpp"
#include "ssrl/svm.hpp"

namespace ssrl {

// ---------------------------------------------------------------------------
// Fold plans

enum class FoldScheme { Lopo, BalancedTenfold };

struct Fold {
    std::string id;                   // participant name, or "fold01".."fold10"
    std::vector<std::size_t> train;   // dataset row ids, ascending
    std::vector<std::size_t> test;
};

struct FoldPlan {
    FoldScheme scheme = FoldScheme::Lopo;
    std::uint64_t seed = 0;
    std::vector<Fold> folds;
};

/// One fold per participant, ordered by name; the named participant's rows
/// form the test set and everyone else's the train pool.
inline FoldPlan make_lopo_folds(const std::vector<std::string>& participants) {
    if (participants.empty()) throw DataError("lopo folds: empty dataset");
    std::map<std::string, std::vector<std::size_t>> by_name;
    for (std::size_t i = 0; i < participants.size(); ++i) by_name[participants[i]].push_back(i);
    if (by_name.size() < 2)
        throw DataError("lopo folds: need at least 2 participants, got " +
                        std::to_string(by_name.size()));
    FoldPlan plan;
    plan.scheme = FoldScheme::Lopo;
    for (const auto& [name, test] : by_name) {
        Fold f;
        f.id = name;
        f.test = test;
        for (const auto& [other, rows] : by_name)
            if (other != name) f.train.insert(f.train.end(), rows.begin(), rows.end());
        std::sort(f.train.begin(), f.train.end());
        plan.folds.push_back(std::move(f));
    }
    return plan;
}

/// Balanced ten-fold split of a confidence dataset, materialized: each class
/// is shuffled, truncated to a multiple of ten, and dealt into ten folds;
/// then the smaller class in every fold is topped up to the larger one with
/// 5°-rotated copies of its own members. The returned dataset holds the
/// retained originals followed by the rotated copies, so augmented samples
/// can never leak across folds; `source`/`rotated` record each row's origin.
struct BalancedTenfold {
    CeDataset data;
    FoldPlan plan;                     // row ids into `data`
    std::vector<std::size_t> source;   // per data row: row in the input dataset
    std::vector<std::uint8_t> rotated; // per data row: 1 for a 5°-rotated copy
};

inline BalancedTenfold make_balanced_tenfold(const CeDataset& ds, std::uint64_t seed) {
    constexpr std::size_t kFolds = 10;
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.y[i] == -1) continue;  // unlabeled rows belong to pre-training, not folds
        if (ds.y[i] != 0 && ds.y[i] != 1)
            throw DataError("balanced folds: label " + std::to_string(ds.y[i]) + " at row " +
                            std::to_string(i) + " is not a confidence class");
        by_class[ds.y[i]].push_back(i);
    }
    const char* names[2] = {"confident", "unconfident"};
    for (int c = 0; c < 2; ++c)
        if (by_class[c].size() < kFolds)
            throw DataError("balanced folds: class '" + std::string(names[c]) + "' has " +
                            std::to_string(by_class[c].size()) + " samples; need at least " +
                            std::to_string(kFolds));

    // Shuffle each class, truncate to a multiple of ten, deal into chunks.
    std::size_t per_fold[2];
    std::vector<std::size_t> members[kFolds][2];  // input row ids
    for (int c = 0; c < 2; ++c) {
        Rng rng = make_rng(derive_seed(seed, 0x666f6c64ULL /* 'fold' */, c));
        shuffle(by_class[c], rng);
        per_fold[c] = by_class[c].size() / kFolds;
        for (std::size_t f = 0; f < kFolds; ++f)
            members[f][c].assign(by_class[c].begin() + f * per_fold[c],
                                 by_class[c].begin() + (f + 1) * per_fold[c]);
    }

    // Top the minority class up to the majority count, fold by fold, cycling
    // through a shuffled list of the fold's own members.
    const int minority = per_fold[0] < per_fold[1] ? 0 : 1;
    const std::size_t deficit = per_fold[1 - minority] - per_fold[minority];
    std::vector<std::size_t> extra[kFolds];  // input row ids to copy
    for (std::size_t f = 0; f < kFolds && deficit > 0; ++f) {
        std::vector<std::size_t> pool = members[f][minority];
        Rng rng = make_rng(derive_seed(seed, 0x6f766572ULL /* 'over' */, f));
        shuffle(pool, rng);
        for (std::size_t j = 0; j < deficit; ++j) extra[f].push_back(pool[j % pool.size()]);
    }

    // Materialize: retained originals in input order, then copies fold by fold.
    std::vector<std::size_t> retained;
    for (int c = 0; c < 2; ++c)
        for (std::size_t f = 0; f < kFolds; ++f)
            retained.insert(retained.end(), members[f][c].begin(), members[f][c].end());
    std::sort(retained.begin(), retained.end());
    std::map<std::size_t, std::size_t> data_row;  // input row -> output row
    for (std::size_t i = 0; i < retained.size(); ++i) data_row[retained[i]] = i;

    BalancedTenfold out;
    const std::size_t px = 3 * kImageSize * kImageSize;
    std::size_t total = retained.size();
    for (std::size_t f = 0; f < kFolds; ++f) total += extra[f].size();
    out.data.x.resize({total, 3, kImageSize, kImageSize});
    for (std::size_t i = 0; i < retained.size(); ++i) {
        const std::size_t r = retained[i];
        std::copy(ds.x.data() + r * px, ds.x.data() + (r + 1) * px, out.data.x.data() + i * px);
        out.data.y.push_back(ds.y[r]);
        out.data.question.push_back(ds.question[r]);
        out.source.push_back(r);
        out.rotated.push_back(0);
    }
    out.plan.scheme = FoldScheme::BalancedTenfold;
    out.plan.seed = seed;
    std::vector<std::vector<std::size_t>> fold_rows(kFolds);
    for (std::size_t f = 0; f < kFolds; ++f)
        for (int c = 0; c < 2; ++c)
            for (const std::size_t r : members[f][c]) fold_rows[f].push_back(data_row.at(r));
    std::size_t next = retained.size();
    for (std::size_t f = 0; f < kFolds; ++f)
        for (const std::size_t r : extra[f]) {
            GazeImage img({3, kImageSize, kImageSize});
            std::copy(ds.x.data() + r * px, ds.x.data() + (r + 1) * px, img.data());
            const GazeImage rot = rotate_image(img, 5.0);
            std::copy(rot.data(), rot.data() + px, out.data.x.data() + next * px);
            out.data.y.push_back(ds.y[r]);
            out.data.question.push_back(ds.question[r]);
            out.source.push_back(r);
            out.rotated.push_back(1);
            fold_rows[f].push_back(next++);
        }
    for (std::size_t f = 0; f < kFolds; ++f) {
        Fold fold;
        char id[8];
        std::snprintf(id, sizeof id, "fold%02zu", f + 1);
        fold.id = id;
        fold.test = fold_rows[f];
        std::sort(fold.test.begin(), fold.test.end());
        for (std::size_t g = 0; g < kFolds; ++g)
            if (g != f) fold.train.insert(fold.train.end(), fold_rows[g].begin(), fold_rows[g].end());
        std::sort(fold.train.begin(), fold.train.end());
        out.plan.folds.push_back(std::move(fold));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::vector<long long>> counts;  // [actual][predicted]

    long long total() const {
        long long t = 0;
        for (const auto& row : counts)
            for (const long long v : row) t += v;
        return t;
    }
    long long diagonal() const {
        long long d = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) d += counts[i][i];
        return d;
    }
    double accuracy() const {
        const long long t = total();
        if (t == 0) throw DataError("confusion matrix: no observations");
        return static_cast<double>(diagonal()) / static_cast<double>(t);
    }
    Json to_json() const {
        return Json{{"classes", classes}, {"counts", counts}, {"accuracy", accuracy()}};
    }
};

inline ConfusionMatrix confusion_and_accuracy(const std::vector<int>& actual,
                                              const std::vector<int>& predicted,
                                              const std::vector<std::string>& classes) {
    if (actual.size() != predicted.size())
        throw ShapeError("confusion: " + std::to_string(actual.size()) + " actual vs " +
                         std::to_string(predicted.size()) + " predicted labels");
    if (actual.empty()) throw DataError("confusion: no observations");
    ConfusionMatrix m;
    m.classes = classes;
    const auto c = static_cast<int>(classes.size());
    m.counts.assign(classes.size(), std::vector<long long>(classes.size(), 0));
    for (std::size_t i = 0; i < actual.size(); ++i) {
        if (actual[i] < 0 || actual[i] >= c || predicted[i] < 0 || predicted[i] >= c)
            throw DataError("confusion: label outside [0," + std::to_string(c) + ") at row " +
                            std::to_string(i));
        ++m.counts[actual[i]][predicted[i]];
    }
    return m;
}

// ---------------------------------------------------------------------------
// Sample-count sweeps

inline std::vector<std::size_t> rd_sweep_counts() { return {10, 50, 100, 500, 1000, 5340}; }
inline std::vector<std::size_t> ce_sweep_counts() {
    return {10, 20, 50, 100, 150, 200, 300, 400, 500, 1000, 5382};
}

inline std::vector<std::string> task_class_names(const std::string& task) {
    if (task == "rd") {
        std::vector<std::string> names;
        for (std::size_t c = 0; c < kActivityClasses; ++c)
            names.push_back(activity_label_name(static_cast<ActivityLabel>(c)));
        return names;
    }
    if (task == "ce") return {"confident", "unconfident"};
    throw DataError("unknown task '" + task + "' (expected rd or ce)");
}

struct SweepRow {
    std::string task;
    std::string method;           // self-supervised | fully-supervised | svm
    std::size_t n_per_class = 0;
    std::string fold;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    ConfusionMatrix confusion;
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

struct SweepSpec {
    std::string task;  // "rd" | "ce"
    std::vector<std::string> methods = {"self-supervised", "fully-supervised", "svm"};
    std::vector<std::size_t> sample_counts;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    TrainConfig train;
    double svm_lambda = 1e-3;
    std::size_t svm_epochs = 30;
    double width_scale = 1.0;  // rd network width multiplier

    void validate() const {
        task_class_names(task);
        if (methods.empty()) throw DataError("sweep: no methods");
        for (const auto& m : methods)
            if (m != "self-supervised" && m != "fully-supervised" && m != "svm")
                throw DataError("sweep: unknown method '" + m + "'");
        if (sample_counts.empty()) throw DataError("sweep: empty sample-count list");
        for (const std::size_t n : sample_counts)
            if (n < 1) throw DataError("sweep: sample counts must be positive");
        if (seeds.empty()) throw DataError("sweep: empty seed list");
        train.validate();
        if (!(svm_lambda > 0.0) || svm_epochs < 1)
            throw DataError("sweep: svm hyperparameters out of range");
    }
};

namespace detail {

/// Labeled members of `pool`, grouped by class.
inline std::vector<std::vector<std::size_t>> rows_by_class(const std::vector<std::size_t>& pool,
                                                           const std::vector<int>& y,
                                                           std::size_t classes) {
    std::vector<std::vector<std::size_t>> out(classes);
    for (const std::size_t r : pool) {
        if (y[r] < 0) continue;
        if (static_cast<std::size_t>(y[r]) >= classes)
            throw DataError("sweep: label " + std::to_string(y[r]) + " at row " +
                            std::to_string(r) + " outside the task's classes");
        out[y[r]].push_back(r);
    }
    return out;
}

/// Argmax class per row of the network's probability output, in test-row
/// order; inference runs in bounded chunks.
inline std::vector<int> predict_rows(Graph<float>& g, const Tensor<float>& x,
                                     const std::vector<std::size_t>& rows, bool rd) {
    std::vector<int> labels;
    labels.reserve(rows.size());
    constexpr std::size_t kChunk = 256;
    for (std::size_t at = 0; at < rows.size(); at += kChunk) {
        const std::size_t n = std::min(kChunk, rows.size() - at);
        const Tensor<float> xs =
            gather_rows(x, std::span<const std::size_t>(rows.data() + at, n));
        const Prediction pred = rd ? predict_rd(g, xs) : predict_ce(g, xs);
        const std::size_t classes = pred.probs.shape()[1];
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (pred.probs.at(i, c) > pred.probs.at(i, best)) best = c;
            labels.push_back(static_cast<int>(best));
        }
    }
    return labels;
}

} // namespace detail

/// The experiment grid: for every (method, n-per-class, fold, seed), train on
/// a class-balanced subsample of the fold's train pool and score the fold's
/// labeled test rows. Subsamples are nested — for a fixed (fold, seed) the
/// n=10 subset is a prefix of the n=50 subset — and shared across methods, so
/// curves differ only in the learner. `pretrained` supplies the base weights
/// for the self-supervised method; `features` (aligned with dataset rows)
/// feeds the svm.
inline SweepResult run_sample_sweep(const SweepSpec& spec, const Tensor<float>& x,
                                    const std::vector<int>& y, const FoldPlan& plan,
                                    const TensorMap* pretrained = nullptr,
                                    const std::vector<FeatureVector>* features = nullptr) {
    spec.validate();
    if (plan.folds.empty()) throw DataError("sweep: fold plan is empty");
    if (x.rank() < 2 || x.shape()[0] != y.size())
        throw ShapeError("sweep: tensor holds " + std::to_string(x.rank() ? x.shape()[0] : 0) +
                         " rows but labels " + std::to_string(y.size()));
    const bool rd = spec.task == "rd";
    const std::vector<std::string> class_names = task_class_names(spec.task);
    const std::size_t classes = class_names.size();
    const bool want_ssl =
        std::find(spec.methods.begin(), spec.methods.end(), "self-supervised") != spec.methods.end();
    const bool want_svm =
        std::find(spec.methods.begin(), spec.methods.end(), "svm") != spec.methods.end();
    if (want_ssl && !pretrained)
        throw DataError("sweep: self-supervised method needs pre-trained base weights");
    if (want_svm) {
        if (!features) throw DataError("sweep: svm method needs per-row feature vectors");
        if (features->size() != y.size())
            throw ShapeError("sweep: " + std::to_string(features->size()) + " feature rows for " +
                             std::to_string(y.size()) + " samples");
    }

    // Every requested n must fit the smallest per-class train pool of every
    // fold, and every fold must have something labeled to score.
    const std::size_t n_max = *std::max_element(spec.sample_counts.begin(), spec.sample_counts.end());
    std::string too_small;
    for (const Fold& fold : plan.folds) {
        const auto groups = detail::rows_by_class(fold.train, y, classes);
        std::size_t cap = groups[0].size();
        for (const auto& g : groups) cap = std::min(cap, g.size());
        if (n_max > cap)
            too_small += (too_small.empty() ? "" : ", ") + fold.id + " (" + std::to_string(cap) +
                         " per class)";
        if (std::none_of(fold.test.begin(), fold.test.end(),
                         [&](std::size_t r) { return y[r] >= 0; }))
            throw DataError("sweep: fold '" + fold.id + "' has no labeled test rows");
    }
    if (!too_small.empty())
        throw DataError("sweep: n=" + std::to_string(n_max) +
                        " per class exceeds the train pool in folds: " + too_small);

    SweepResult result;
    for (std::size_t fi = 0; fi < plan.folds.size(); ++fi) {
        const Fold& fold = plan.folds[fi];
        const auto groups = detail::rows_by_class(fold.train, y, classes);
        std::vector<std::size_t> test_rows;
        std::vector<int> actual;
        for (const std::size_t r : fold.test)
            if (y[r] >= 0) {
                test_rows.push_back(r);
                actual.push_back(y[r]);
            }
        for (const std::uint64_t seed : spec.seeds) {
            const std::uint64_t sub_seed = derive_seed(seed, 0x73776570ULL /* 'swep' */, fi);
            // One shuffle per class; taking prefixes nests the subsamples.
            auto order = groups;
            for (std::size_t c = 0; c < classes; ++c) {
                Rng rng = make_rng(derive_seed(sub_seed, 0x636c7373ULL /* 'clss' */, c));
                shuffle(order[c], rng);
            }
            for (const std::size_t n : spec.sample_counts) {
                std::vector<std::size_t> subset;
                for (std::size_t c = 0; c < classes; ++c)
                    subset.insert(subset.end(), order[c].begin(), order[c].begin() + n);
                for (const std::string& method : spec.methods) {
                    std::vector<int> predicted;
                    if (method == "svm") {
                        std::vector<FeatureVector> feats;
                        std::vector<int> labels;
                        for (const std::size_t r : subset) {
                            feats.push_back((*features)[r]);
                            labels.push_back(y[r]);
                        }
                        const SvmModel m =
                            svm_train(feats, labels, spec.svm_lambda, spec.svm_epochs,
                                      derive_seed(sub_seed, 0x73766dULL /* 'svm' */))
                                .model;
                        for (const std::size_t r : test_rows)
                            predicted.push_back(svm_predict(m, (*features)[r]).label);
                    } else {
                        TrainConfig cfg = spec.train;
                        cfg.seed = derive_seed(sub_seed, 0x666974ULL /* 'fit' */);
                        const TensorMap* base = method == "self-supervised" ? pretrained : nullptr;
                        NetworkPair nets = rd ? build_rd_networks(spec.width_scale, cfg.dropout)
                                              : build_ce_networks(cfg.dropout);
                        const Tensor<float> xs = gather_rows(x, subset);
                        std::vector<int> ys;
                        for (const std::size_t r : subset) ys.push_back(y[r]);
                        if (rd) {
                            RdDataset sub;
                            sub.x = xs;
                            sub.y = ys;
                            finetune_rd(nets.target, base, sub, 0, cfg);
                        } else {
                            CeDataset sub;
                            sub.x = xs;
                            sub.y = ys;
                            finetune_ce(nets.target, base, sub, 0, cfg);
                        }
                        predicted = detail::predict_rows(nets.target, x, test_rows, rd);
                    }
                    SweepRow row;
                    row.task = spec.task;
                    row.method = method;
                    row.n_per_class = n;
                    row.fold = fold.id;
                    row.seed = seed;
                    row.confusion = confusion_and_accuracy(actual, predicted, class_names);
                    row.accuracy = row.confusion.accuracy();
                    result.rows.push_back(std::move(row));
                }
            }
        }
    }
    return result;
}

// ---- external interfaces ----

inline std::string sweep_csv(const SweepResult& result) {
    std::string out = "task,method,n_per_class,fold,seed,accuracy\n";
    char line[256];
    for (const SweepRow& r : result.rows) {
        std::snprintf(line, sizeof line, "%s,%s,%zu,%s,%llu,%.10g\n", r.task.c_str(),
                      r.method.c_str(), r.n_per_class, r.fold.c_str(),
                      static_cast<unsigned long long>(r.seed), r.accuracy);
        out += line;
    }
    return out;
}

/// Inverse of sweep_csv (confusion matrices are not part of the CSV and come
/// back empty).
inline SweepResult parse_sweep_csv(const std::string& text) {
    SweepResult result;
    std::size_t at = 0, line_no = 0;
    auto next_line = [&](std::string& line) {
        if (at >= text.size()) return false;
        const std::size_t end = text.find('\n', at);
        line = text.substr(at, end == std::string::npos ? std::string::npos : end - at);
        at = end == std::string::npos ? text.size() : end + 1;
        ++line_no;
        return true;
    };
    std::string line;
    if (!next_line(line) || line != "task,method,n_per_class,fold,seed,accuracy")
        throw DataError("sweep csv: missing or unexpected header");
    while (next_line(line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            fields.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                         : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (fields.size() != 6)
            throw DataError("sweep csv line " + std::to_string(line_no) + ": expected 6 fields");
        SweepRow row;
        row.task = fields[0];
        row.method = fields[1];
        row.fold = fields[3];
        try {
            row.n_per_class = std::stoull(fields[2]);
            row.seed = std::stoull(fields[4]);
            row.accuracy = std::stod(fields[5]);
        } catch (const std::exception&) {
            throw DataError("sweep csv line " + std::to_string(line_no) + ": malformed number");
        }
        result.rows.push_back(std::move(row));
    }
    if (result.rows.empty()) throw DataError("sweep csv: no data rows");
    return result;
}

/// Confusion matrices keyed by the same tuple as the CSV rows.
inline Json sweep_confusions_json(const SweepResult& result) {
    Json arr = Json::array();
    for (const SweepRow& r : result.rows)
        arr.push_back({{"task", r.task},
                       {"method", r.method},
                       {"n_per_class", r.n_per_class},
                       {"fold", r.fold},
                       {"seed", r.seed},
                       {"confusion", r.confusion.to_json()}});
    return arr;
}

struct SweepSummaryRow {
    std::string task;
    std::string method;
    std::size_t n_per_class = 0;
    std::size_t runs = 0;
    double median_accuracy = 0.0;
};

/// Median accuracy over (fold, seed) per sweep point, sorted by task, method
/// and sample count.
inline std::vector<SweepSummaryRow> summarize_sweep(const SweepResult& result) {
    std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<double>> acc;
    for (const SweepRow& r : result.rows)
        acc[{r.task, r.method, r.n_per_class}].push_back(r.accuracy);
    std::vector<SweepSummaryRow> out;
    for (auto& [key, values] : acc) {
        std::sort(values.begin(), values.end());
        const std::size_t n = values.size();
        SweepSummaryRow row;
        row.task = std::get<0>(key);
        row.method = std::get<1>(key);
        row.n_per_class = std::get<2>(key);
        row.runs = n;
        row.median_accuracy =
            n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
        out.push_back(std::move(row));
    }
    return out;
}

} // namespace ssrl
