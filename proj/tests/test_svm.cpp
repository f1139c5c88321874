#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ssrl/svm.hpp"

using namespace ssrl;

namespace {

SensorSegment constant_segment(const std::vector<float>& levels, std::size_t len = 30) {
    REQUIRE(levels.size() == kRdChannels);
    SensorSegment seg;
    seg.participant = "p01";
    seg.eog = {std::vector<float>(len, levels[0]), std::vector<float>(len, levels[1])};
    seg.acc = {std::vector<float>(len, levels[2]), std::vector<float>(len, levels[3]),
               std::vector<float>(len, levels[4])};
    seg.gyro = {std::vector<float>(len, levels[5]), std::vector<float>(len, levels[6]),
                std::vector<float>(len, levels[7])};
    return seg;
}

GazeRecord record_from_points(std::vector<GazePoint> pts, double w = 1000.0, double h = 500.0) {
    GazeRecord rec;
    rec.points = std::move(pts);
    rec.screen_w = w;
    rec.screen_h = h;
    rec.question_id = "q1";
    return rec;
}

/// Two well-separated 1-D Gaussian-ish clusters, class c centred at ±1.
std::vector<FeatureVector> toy_features(std::vector<int>& labels, std::size_t per_class,
                                        std::uint64_t seed) {
    std::vector<FeatureVector> out;
    Rng rng = make_rng(seed);
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const int cls = static_cast<int>(i % 2);
        labels.push_back(cls);
        const double v = (cls ? 1.0 : -1.0) + 0.2 * normal(rng);
        out.push_back({{v}, "toy-1d"});
    }
    return out;
}

}  // namespace

TEST_CASE("rd features are per-channel mean/variance pairs in packed order") {
    const SensorSegment seg = constant_segment({3, -2, 0.5, 0, 1, 10, -10, 0.25});
    const FeatureVector f = extract_rd_features(seg);
    REQUIRE(f.values.size() == kRdFeatureCount);
    CHECK(f.schema == "rd-mv16");
    const double expect_means[8] = {3, -2, 0.5, 0, 1, 10, -10, 0.25};
    for (std::size_t c = 0; c < 8; ++c) {
        CHECK(f.values[2 * c] == expect_means[c]);
        CHECK(f.values[2 * c + 1] == 0.0);  // constant channel, zero variance
    }

    SensorSegment ramp = constant_segment({0, 0, 0, 0, 0, 0, 0, 0}, 3);
    ramp.eog[0] = {1.0f, 2.0f, 3.0f};
    const FeatureVector g = extract_rd_features(ramp);
    CHECK_THAT(g.values[0], Catch::Matchers::WithinAbs(2.0, 1e-12));
    CHECK_THAT(g.values[1], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));

    const FeatureVector zero = extract_rd_features(constant_segment(std::vector<float>(8, 0.0f)));
    CHECK(std::all_of(zero.values.begin(), zero.values.end(),
                      [](double v) { return v == 0.0; }));

    SensorSegment bad = seg;
    bad.acc.pop_back();
    CHECK_THROWS_AS(extract_rd_features(bad), ShapeError);
}

TEST_CASE("rd features from a packed tensor row match the segment extractor") {
    Tensor<float> x({2, kRdChannels, 40});
    Rng rng = make_rng(5);
    for (auto& v : x.values()) v = static_cast<float>(normal(rng));

    SensorSegment seg;
    seg.eog.resize(2);
    seg.acc.resize(3);
    seg.gyro.resize(3);
    for (std::size_t c = 0; c < kRdChannels; ++c) {
        std::vector<float> ch(40);
        for (std::size_t j = 0; j < 40; ++j) ch[j] = x.at(1, c, j);
        if (c < 2)
            seg.eog[c] = ch;
        else if (c < 5)
            seg.acc[c - 2] = ch;
        else
            seg.gyro[c - 5] = ch;
    }
    const FeatureVector a = extract_rd_features(seg);
    const FeatureVector b = extract_rd_features(x, 1);
    REQUIRE(a.values.size() == b.values.size());
    for (std::size_t j = 0; j < a.values.size(); ++j)
        CHECK_THAT(a.values[j], Catch::Matchers::WithinAbs(b.values[j], 1e-12));

    CHECK_THROWS_AS(extract_rd_features(x, 2), ShapeError);
    CHECK_THROWS_AS(extract_rd_features(Tensor<float>({1, 3, 10}), 0), ShapeError);
}

TEST_CASE("ce features are screen-normalized trajectory statistics") {
    const FeatureVector single =
        extract_ce_features(record_from_points({{0.0, 500.0, 250.0}}));
    REQUIRE(single.values.size() == kCeFeatureCount);
    CHECK(single.schema == "ce-mv4");
    CHECK(single.values == std::vector<double>{0.5, 0.0, 0.5, 0.0});

    const FeatureVector pair =
        extract_ce_features(record_from_points({{0.0, 0.0, 0.0}, {10.0, 1000.0, 500.0}}));
    CHECK(pair.values == std::vector<double>{0.5, 0.25, 0.5, 0.25});

    const FeatureVector scan = extract_ce_features(
        record_from_points({{0.0, 100.0, 200.0}, {10.0, 400.0, 200.0}, {20.0, 900.0, 200.0}}));
    CHECK_THAT(scan.values[3], Catch::Matchers::WithinAbs(0.0, 1e-18));  // horizontal scan

    CHECK(scan.values[1] > 0.0);

    CHECK_THROWS_AS(extract_ce_features(record_from_points({})), DataError);
}

TEST_CASE("feature masking selects values and changes the schema") {
    const FeatureVector f{{10.0, 11.0, 12.0, 13.0}, "toy"};
    const FeatureVector m = select_features(f, {2, 0});
    CHECK(m.values == std::vector<double>{12.0, 10.0});
    CHECK(m.schema == "toy[2,0]");
    CHECK_THROWS_AS(select_features(f, {4}), DataError);
    CHECK_THROWS_AS(select_features(f, {}), DataError);
}

TEST_CASE("svm separates a linearly separable toy problem") {
    std::vector<int> labels;
    const auto features = toy_features(labels, 50, 7);
    const SvmTraining trained = svm_train(features, labels, 1e-2, 40, 8);
    const SvmModel& m = trained.model;

    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i)
        if (svm_predict(m, features[i]).label == labels[i]) ++correct;
    CHECK(correct == features.size());

    // Held-out points from the same distribution.
    std::vector<int> test_labels;
    const auto test_features = toy_features(test_labels, 25, 9);
    correct = 0;
    for (std::size_t i = 0; i < test_features.size(); ++i)
        if (svm_predict(m, test_features[i]).label == test_labels[i]) ++correct;
    CHECK(correct == test_features.size());

    // Objective non-increasing (1e-3 tolerance) over the last half of epochs.
    const auto& obj = trained.objective;
    for (std::size_t e = obj.size() / 2 + 1; e < obj.size(); ++e)
        CHECK(obj[e] <= obj[e - 1] + 1e-3);
}

TEST_CASE("two-class one-vs-rest is an exactly mirrored pair of binary problems") {
    std::vector<int> labels;
    const auto features = toy_features(labels, 20, 11);
    const SvmModel m = svm_train(features, labels, 1e-2, 10, 12).model;
    REQUIRE(m.classes() == 2);
    for (std::size_t j = 0; j < m.features(); ++j) CHECK(m.w[0][j] == -m.w[1][j]);
    CHECK(m.b[0] == -m.b[1]);
}

TEST_CASE("extreme regularization shrinks weights to the bias ordering") {
    std::vector<int> labels;
    const auto features = toy_features(labels, 30, 13);
    const SvmModel m = svm_train(features, labels, 1e6, 20, 14).model;
    for (const auto& wc : m.w)
        for (const double v : wc) CHECK(std::abs(v) < 1e-3);
    const int first = svm_predict(m, features[0]).label;
    for (const auto& f : features) CHECK(svm_predict(m, f).label == first);
}

TEST_CASE("training features standardize to mean 0 and variance 1") {
    std::vector<int> labels;
    std::vector<FeatureVector> features;
    Rng rng = make_rng(15);
    for (std::size_t i = 0; i < 80; ++i) {
        labels.push_back(static_cast<int>(i % 2));
        features.push_back({{500.0 + 30.0 * normal(rng), 1e-3 * normal(rng),
                             static_cast<double>(labels.back())},
                            "wide"});
    }
    const SvmModel m = svm_train(features, labels, 1e-2, 5, 16).model;
    for (std::size_t j = 0; j < m.features(); ++j) {
        double mean = 0.0, var = 0.0;
        for (const auto& f : features) {
            const double z = (f.values[j] - m.mean[j]) / m.stdev[j];
            mean += z;
            var += z * z;
        }
        mean /= static_cast<double>(features.size());
        var /= static_cast<double>(features.size());
        CHECK_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-6));
        CHECK_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-3));
    }
}

TEST_CASE("zero-spread features are dropped rather than divided by zero") {
    std::vector<int> labels;
    std::vector<FeatureVector> features;
    Rng rng = make_rng(17);
    for (std::size_t i = 0; i < 40; ++i) {
        const int cls = static_cast<int>(i % 2);
        labels.push_back(cls);
        features.push_back({{(cls ? 1.0 : -1.0) + 0.2 * normal(rng), 42.0}, "with-const"});
    }
    const SvmModel m = svm_train(features, labels, 1e-2, 20, 18).model;
    CHECK(m.stdev[1] == 0.0);

    FeatureVector probe = features[0];
    const SvmPrediction before = svm_predict(m, probe);
    probe.values[1] = -1e9;  // the dead feature's value must not matter
    const SvmPrediction after = svm_predict(m, probe);
    CHECK(before.label == after.label);
    CHECK(before.scores == after.scores);
}

TEST_CASE("prediction breaks ties toward the lower class and survives rescaling") {
    SvmModel m;
    m.schema = "toy-1d";
    m.lambda = 1.0;
    m.w = {{0.0}, {0.0}, {0.0}};
    m.b = {0.0, 0.0, 0.0};
    m.mean = {0.0};
    m.stdev = {1.0};
    CHECK(svm_predict(m, {{3.0}, "toy-1d"}).label == 0);  // all-zero scores tie

    m.w = {{1.0}, {2.0}, {-1.0}};
    m.b = {0.1, -0.2, 0.0};
    const FeatureVector f{{0.7}, "toy-1d"};
    const int before = svm_predict(m, f).label;
    for (auto& wc : m.w)
        for (double& v : wc) v *= 3.7;
    for (double& v : m.b) v *= 3.7;
    CHECK(svm_predict(m, f).label == before);
}

TEST_CASE("svm rejects degenerate inputs and mismatched schemas") {
    std::vector<int> labels;
    const auto features = toy_features(labels, 10, 19);

    CHECK_THROWS_AS(svm_train({}, {}, 1e-2, 5, 0), DataError);
    CHECK_THROWS_AS(svm_train(features, std::vector<int>(features.size(), 1), 1e-2, 5, 0),
                    DataError);  // single class
    CHECK_THROWS_AS(svm_train(features, labels, 0.0, 5, 0), DataError);
    CHECK_THROWS_AS(svm_train(features, labels, 1e-2, 0, 0), DataError);

    auto mixed = features;
    mixed[3].schema = "other";
    CHECK_THROWS_AS(svm_train(mixed, labels, 1e-2, 5, 0), DataError);
    auto broken = features;
    broken[2].values[0] = std::nan("");
    CHECK_THROWS_AS(svm_train(broken, labels, 1e-2, 5, 0), NumericError);

    const SvmModel m = svm_train(features, labels, 1e-2, 5, 0).model;
    CHECK_THROWS_AS(svm_predict(m, {{1.0}, "other"}), DataError);
    CHECK_THROWS_AS(svm_predict(m, {{1.0, 2.0}, "toy-1d"}), DataError);
}

TEST_CASE("svm training is deterministic in the seed") {
    std::vector<int> labels;
    const auto features = toy_features(labels, 30, 21);
    const SvmModel a = svm_train(features, labels, 1e-2, 15, 22).model;
    const SvmModel b = svm_train(features, labels, 1e-2, 15, 22).model;
    const SvmModel c = svm_train(features, labels, 1e-2, 15, 23).model;
    CHECK(a.w == b.w);
    CHECK(a.b == b.b);
    CHECK(a.w != c.w);
}

TEST_CASE("three separable clusters are classified one-vs-rest") {
    std::vector<FeatureVector> features;
    std::vector<int> labels;
    const double centers[3][2] = {{0.0, 2.0}, {2.0, -1.0}, {-2.0, -1.0}};
    Rng rng = make_rng(25);
    for (std::size_t i = 0; i < 120; ++i) {
        const int cls = static_cast<int>(i % 3);
        labels.push_back(cls);
        features.push_back({{centers[cls][0] + 0.3 * normal(rng),
                             centers[cls][1] + 0.3 * normal(rng)},
                            "toy-2d"});
    }
    const SvmModel m = svm_train(features, labels, 1e-3, 60, 26).model;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i)
        if (svm_predict(m, features[i]).label == labels[i]) ++correct;
    CHECK(correct >= 114);  // >= 95%
}

TEST_CASE("svm baseline separates the synthetic reading activities") {
    const SynthRdResult synth = synth_rd_stream(1, 0.12, 1.0, 27);
    auto segs = segment_stream(synth.streams[0]);
    label_segments(segs, synth.spans[0]);
    std::vector<FeatureVector> features;
    std::vector<int> labels;
    for (const auto& s : segs) {
        if (!s.label) continue;
        features.push_back(extract_rd_features(s));
        labels.push_back(static_cast<int>(*s.label));
    }
    REQUIRE(features.size() >= 100);
    const SvmModel m = svm_train(features, labels, 1e-4, 50, 28).model;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i)
        if (svm_predict(m, features[i]).label == labels[i]) ++correct;
    CHECK(static_cast<double>(correct) >= 0.9 * static_cast<double>(features.size()));
}

TEST_CASE("svm model json round-trips and rejects corrupt files") {
    std::vector<int> labels;
    const auto features = toy_features(labels, 20, 29);
    const SvmModel m = svm_train(features, labels, 1e-2, 10, 30).model;

    const auto path = std::filesystem::temp_directory_path() / "ssrl-test-svm.json";
    save_svm(path.string(), m);
    const SvmModel back = load_svm(path.string());
    CHECK(back.schema == m.schema);
    CHECK(back.lambda == m.lambda);
    CHECK(back.w == m.w);
    CHECK(back.b == m.b);
    CHECK(back.mean == m.mean);
    CHECK(back.stdev == m.stdev);
    for (const auto& f : features)
        CHECK(svm_predict(back, f).label == svm_predict(m, f).label);

    {
        std::ofstream bad(path, std::ios::trunc);
        bad << "{ not json";
    }
    CHECK_THROWS_AS(load_svm(path.string()), DataError);
    std::filesystem::remove(path);

    Json j = svm_to_json(m);
    j["b"] = std::vector<double>{1.0};  // class count no longer matches w
    CHECK_THROWS_AS(svm_from_json(j), DataError);
    CHECK_THROWS_AS(load_svm("/nonexistent/svm.json"), DataError);
}
