#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "ssrl/models.hpp"

using namespace ssrl;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
    Tensor<float> t(std::move(shape));
    Rng rng = make_rng(seed);
    for (auto& v : t.values()) v = static_cast<float>(normal(rng));
    return t;
}

std::map<std::string, Tensor<float>> rd_random_inputs(std::size_t n, std::size_t len,
                                                      std::uint64_t seed) {
    return {{"eog", random_tensor({n, kEogChannels, len}, seed)},
            {"acc", random_tensor({n, kAccChannels, len}, seed + 1)},
            {"gyro", random_tensor({n, kGyroChannels, len}, seed + 2)}};
}

/// One global-max-pool + dense classifier over [N, 1, L] rows; rows of class
/// c sit near 2c - 1, so the problem is linearly separable.
Graph<float> toy_graph() {
    Graph<float> g;
    const int in = g.add_input("x", 1);
    const int gp = g.add({.kind = LayerKind::GlobalMaxPool1d, .name = "base/pool"}, in);
    const int fc = g.add({.kind = LayerKind::Dense, .name = "head/out/logits", .units = 2}, gp);
    const int sm = g.add({.kind = LayerKind::Softmax, .name = "head/out/softmax"}, fc);
    g.mark_output("out", sm);
    g.mark_embedding(gp);
    return g;
}

struct ToyProblem {
    Tensor<float> x;
    std::vector<int> y;
};

ToyProblem toy_problem(std::size_t n, std::uint64_t seed) {
    ToyProblem p{Tensor<float>({n, 1, 8}), std::vector<int>(n)};
    Rng rng = make_rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        p.y[i] = static_cast<int>(i % 2);
        const float base = p.y[i] ? 1.0f : -1.0f;
        for (std::size_t j = 0; j < 8; ++j)
            p.x.at(i, 0, j) = base + 0.1f * static_cast<float>(normal(rng));
    }
    return p;
}

/// Separable sensor dataset: the horizontal EOG channel of class c sits near
/// level c with small jitter, remaining channels are noise.
RdDataset toy_rd_dataset(std::size_t per_class, std::size_t unlabeled, std::size_t len,
                         std::uint64_t seed) {
    const std::size_t n = kActivityClasses * per_class + unlabeled;
    RdDataset ds;
    ds.x = Tensor<float>({n, kRdChannels, len});
    Rng rng = make_rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = i < kActivityClasses * per_class
                              ? static_cast<int>(i % kActivityClasses)
                              : -1;
        ds.y.push_back(label);
        ds.participant.push_back("p01");
        ds.start_ms.push_back(static_cast<long long>(i));
        const float level = label >= 0 ? static_cast<float>(label) : 0.0f;
        for (std::size_t c = 0; c < kRdChannels; ++c)
            for (std::size_t j = 0; j < len; ++j)
                ds.x.at(i, c, j) = (c == 0 ? level : 0.0f) +
                                   0.05f * static_cast<float>(normal(rng));
    }
    return ds;
}

CeDataset toy_ce_dataset(std::size_t n, std::uint64_t seed) {
    const auto records = synth_ce_gaze(2, (n + 1) / 2, 1.0, seed);
    CeDataset ds = make_ce_dataset(records);
    REQUIRE(ds.size() >= n);
    return ds;
}

bool tensors_equal(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() &&
           std::equal(a.data(), a.data() + a.size(), b.data());
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const char* name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("rd architecture: branch length 2955, head widths 8/9/9, scaled conv units") {
    NetworkPair nets = build_rd_networks(0.25);
    nets.pretext.init_params(1);

    const auto named = rd_random_inputs(2, kSegmentSamples, 11);
    Workspace<float> ws;
    nets.pretext.forward(ws, input_ptrs(named), Mode::Infer);

    // 3000 - 23 - 15 - 7 = 2955 per branch; three branches of 24 channels
    // each meet at the concat.
    const bool concat_seen = std::any_of(ws.act.begin(), ws.act.end(), [](const Tensor<float>& t) {
        return t.shape() == Shape{2, 72, 2955};
    });
    CHECK(concat_seen);

    CHECK(ws.act[static_cast<std::size_t>(nets.pretext.output_id("eog"))].shape() ==
          Shape{2, 8});
    CHECK(ws.act[static_cast<std::size_t>(nets.pretext.output_id("acc"))].shape() ==
          Shape{2, 9});
    CHECK(ws.act[static_cast<std::size_t>(nets.pretext.output_id("gyro"))].shape() ==
          Shape{2, 9});
    CHECK(ws.act[static_cast<std::size_t>(nets.pretext.embedding_id())].shape() ==
          Shape{2, 24});

    for (const auto& p : nets.pretext.params())
        if (p.name == "base/eog/conv1/w") CHECK(p.value.extent(0) == 8);
}

TEST_CASE("rd embedding width is 96 at scale 1.0") {
    NetworkPair nets = build_rd_networks(1.0);
    nets.target.init_params(2);
    // Short segments keep the full-width forward cheap; conv arithmetic only
    // needs length >= 91.
    const Prediction pred = predict_rd(nets.target, random_tensor({2, kRdChannels, 128}, 3));
    CHECK(pred.embedding.shape() == Shape{2, 96});
    CHECK(pred.probs.shape() == Shape{2, kActivityClasses});
}

TEST_CASE("ce architecture: flatten width matches shape arithmetic, heads 4 and 2") {
    // Independent oracle: two valid 3x3 convs then a 2x2 pool, twice.
    std::size_t side = kImageSize;
    side = (side - 2 - 2) / 2;
    side = (side - 2 - 2) / 2;
    const std::size_t flat = 16 * side * side;
    REQUIRE(flat == 2704);

    NetworkPair nets = build_ce_networks();
    nets.pretext.init_params(1);
    nets.target.init_params(1);
    const Tensor<float> images = random_tensor({2, 3, kImageSize, kImageSize}, 5);

    const Prediction pre = predict_ce(nets.pretext, images, "pretext");
    CHECK(pre.probs.shape() == Shape{2, kImagePretextClasses});
    CHECK(pre.embedding.shape() == Shape{2, flat});

    const Prediction tgt = predict_ce(nets.target, images);
    CHECK(tgt.probs.shape() == Shape{2, 2});
    CHECK(tgt.embedding.shape() == Shape{2, flat});
}

TEST_CASE("builder rejects widths scaled to zero and non-positive scales") {
    CHECK_THROWS_AS(build_rd_networks(0.01), ShapeError);
    CHECK_THROWS_AS(build_rd_networks(0.0), ShapeError);
    CHECK_THROWS_AS(build_rd_networks(-1.0), ShapeError);
}

TEST_CASE("pretext and target networks share base parameters by name") {
    NetworkPair nets = build_rd_networks(0.25);
    nets.pretext.init_params(7);
    const TensorMap sd = nets.pretext.state_dict();

    nets.target.init_params(8);
    const std::size_t loaded = nets.target.load_state_dict(sd);

    std::size_t base_params = 0;
    for (const auto& p : nets.target.params()) {
        if (!p.name.starts_with("base/")) continue;
        ++base_params;
        REQUIRE(sd.count(p.name) == 1);
        CHECK(tensors_equal(p.value, sd.at(p.name)));
    }
    CHECK(loaded == base_params);
    CHECK(base_params > 0);

    NetworkPair ce = build_ce_networks();
    ce.pretext.init_params(7);
    ce.target.init_params(8);
    const std::size_t ce_loaded = ce.target.load_state_dict(ce.pretext.state_dict());
    std::size_t ce_base = 0;
    for (const auto& p : ce.target.params())
        if (p.name.starts_with("base/")) ++ce_base;
    CHECK(ce_loaded == ce_base);
}

TEST_CASE("untrained 4-class probabilities are near uniform and sum to one") {
    for (std::uint64_t seed : {3ULL, 4ULL, 5ULL}) {
        NetworkPair nets = build_rd_networks(0.25);
        init_model(nets.target, seed);
        const Prediction pred = predict_rd(nets.target, random_tensor({4, kRdChannels, 256}, seed));
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t c = 0; c < kActivityClasses; ++c) {
                const float p = pred.probs.at(i, c);
                CHECK(p >= 0.1f);
                CHECK(p <= 0.5f);
                sum += p;
            }
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-5));
        }
    }
}

TEST_CASE("predict is a pure function and checks its inputs") {
    NetworkPair nets = build_ce_networks();
    nets.target.init_params(9);
    const Tensor<float> images = random_tensor({3, 3, kImageSize, kImageSize}, 6);
    const Prediction a = predict_ce(nets.target, images);
    const Prediction b = predict_ce(nets.target, images);
    CHECK(tensors_equal(a.probs, b.probs));
    CHECK(tensors_equal(a.embedding, b.embedding));

    CHECK_THROWS_AS(predict_ce(nets.target, random_tensor({2, 1, 64, 64}, 6)), ShapeError);
    CHECK_THROWS_AS(predict_ce(nets.target, images, "no-such-head"), ShapeError);
}

TEST_CASE("gather_rows and slice_channels index correctly") {
    Tensor<float> x({3, 2, 4});
    std::iota(x.values().begin(), x.values().end(), 0.0f);

    const std::vector<std::size_t> rows{2, 0};
    const Tensor<float> g = gather_rows(x, rows);
    REQUIRE(g.shape() == Shape{2, 2, 4});
    CHECK(g.at(0, 0, 0) == 16.0f);
    CHECK(g.at(1, 1, 3) == 7.0f);
    const std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(gather_rows(x, bad), ShapeError);

    const Tensor<float> s = slice_channels(x, 1, 1);
    REQUIRE(s.shape() == Shape{3, 1, 4});
    CHECK(s.at(2, 0, 1) == 21.0f);
    CHECK_THROWS_AS(slice_channels(x, 1, 2), ShapeError);

    Tensor<float> packed({2, kRdChannels, 5});
    std::iota(packed.values().begin(), packed.values().end(), 0.0f);
    const auto named = rd_inputs(packed);
    CHECK(named.at("eog").shape() == Shape{2, 2, 5});
    CHECK(named.at("acc").shape() == Shape{2, 3, 5});
    CHECK(named.at("gyro").shape() == Shape{2, 3, 5});
    CHECK(named.at("acc").at(0, 0, 0) == packed.at(0, kAccOffset, 0));
    CHECK(named.at("gyro").at(1, 2, 4) == packed.at(1, kGyroOffset + 2, 4));
}

TEST_CASE("fit validates its configuration and data") {
    Graph<float> g = toy_graph();
    g.init_params(1);
    const ToyProblem p = toy_problem(12, 2);
    const std::map<std::string, const Tensor<float>*> inputs{{"x", &p.x}};

    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(fit(g, inputs, {{"out", p.y}}, cfg), DataError);
    cfg = {};
    cfg.batch = 1;
    CHECK_THROWS_AS(fit(g, inputs, {{"out", p.y}}, cfg), DataError);
    cfg = {};
    cfg.val_fraction = 1.0;
    CHECK_THROWS_AS(fit(g, inputs, {{"out", p.y}}, cfg), DataError);
    cfg = {};
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(fit(g, inputs, {{"out", p.y}}, cfg), DataError);

    cfg = {};
    CHECK_THROWS_AS(fit(g, inputs, {{"missing", p.y}}, cfg), ShapeError);
    CHECK_THROWS_AS(fit(g, inputs, {{"out", std::vector<int>(5, 0)}}, cfg), ShapeError);
    CHECK_THROWS_AS(fit(g, {}, {{"out", p.y}}, cfg), ShapeError);

    const ToyProblem tiny = toy_problem(3, 2);
    CHECK_THROWS_AS(fit(g, {{"x", &tiny.x}}, {{"out", tiny.y}}, cfg), DataError);
}

TEST_CASE("fit learns a separable problem with a mostly non-increasing loss") {
    Graph<float> g = toy_graph();
    const ToyProblem p = toy_problem(40, 3);

    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch = 8;
    cfg.seed = 4;
    cfg.optim = OptimizerConfig::adam(0.05);
    init_model(g, derive_seed(cfg.seed, 0x696e6974ULL));
    const TrainReport report = fit(g, {{"x", &p.x}}, {{"out", p.y}}, cfg);

    REQUIRE(report.epochs.size() == 30);
    CHECK(report.val_examples == 8);  // llround(0.2 * 40)
    CHECK(report.best_val_acc == 1.0);
    CHECK(report.loss_rule == "cross-entropy");
    REQUIRE(report.head_val_acc.count("out") == 1);
    CHECK(report.head_val_acc.at("out") == report.best_val_acc);

    std::size_t non_increasing = 0;
    for (std::size_t e = 1; e < report.epochs.size(); ++e)
        if (report.epochs[e].train_loss <= report.epochs[e - 1].train_loss + 0.05)
            ++non_increasing;
    CHECK(non_increasing * 10 >= (report.epochs.size() - 1) * 9);

    // Best epoch is the earliest argmax of validation accuracy.
    std::size_t expected_best = 0;
    for (std::size_t e = 1; e < report.epochs.size(); ++e)
        if (report.epochs[e].val_acc > report.epochs[expected_best].val_acc) expected_best = e;
    CHECK(report.best_epoch == expected_best);
    CHECK(report.epochs[report.best_epoch].val_acc == report.best_val_acc);
}

TEST_CASE("fit is deterministic in the seed and patience stops early") {
    const ToyProblem p = toy_problem(40, 5);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch = 8;
    cfg.seed = 6;
    cfg.optim = OptimizerConfig::adam(0.05);

    auto run = [&](std::uint64_t seed) {
        TrainConfig c = cfg;
        c.seed = seed;
        Graph<float> g = toy_graph();
        init_model(g, derive_seed(c.seed, 0x696e6974ULL));
        fit(g, {{"x", &p.x}}, {{"out", p.y}}, c);
        return g.state_dict();
    };
    const TensorMap a = run(6), b = run(6), c = run(7);
    REQUIRE(a.size() == b.size());
    for (const auto& [name, t] : a) CHECK(tensors_equal(t, b.at(name)));
    bool any_diff = false;
    for (const auto& [name, t] : a)
        if (!tensors_equal(t, c.at(name))) any_diff = true;
    CHECK(any_diff);

    Graph<float> g = toy_graph();
    init_model(g, derive_seed(cfg.seed, 0x696e6974ULL));
    TrainConfig stopping = cfg;
    stopping.epochs = 50;
    stopping.patience = 3;
    const TrainReport report = fit(g, {{"x", &p.x}}, {{"out", p.y}}, stopping);
    CHECK(report.epochs.size() < 50);
    CHECK(report.epochs.size() == report.best_epoch + 1 + stopping.patience);
}

TEST_CASE("pretrain_rd trains all three heads jointly and deterministically") {
    const Tensor<float> segments = random_tensor({24, kRdChannels, 240}, 10);
    const RdPretextData data = build_pretext_dataset(segments, TransformParams{}, 11);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 8;
    cfg.seed = 12;

    NetworkPair nets = build_rd_networks(0.25);
    const TrainReport report = pretrain_rd(nets.pretext, data, cfg);
    REQUIRE(report.epochs.size() == 2);
    CHECK(report.val_examples == 5);  // llround(0.2 * 24)
    CHECK(report.loss_rule == "summed-cross-entropy");
    CHECK(report.head_val_acc.count("eog") == 1);
    CHECK(report.head_val_acc.count("acc") == 1);
    CHECK(report.head_val_acc.count("gyro") == 1);
    for (const EpochStats& e : report.epochs) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(std::isfinite(e.val_loss));
    }

    NetworkPair again = build_rd_networks(0.25);
    pretrain_rd(again.pretext, data, cfg);
    const TensorMap sa = nets.pretext.state_dict(), sb = again.pretext.state_dict();
    for (const auto& [name, t] : sa) CHECK(tensors_equal(t, sb.at(name)));
}

TEST_CASE("finetune_rd balances the labeled pool and transfers the base") {
    const RdDataset ds = toy_rd_dataset(15, 5, 240, 13);

    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch = 8;
    cfg.seed = 14;

    NetworkPair nets = build_rd_networks(0.25);
    SECTION("n per class 10 gives a pool of exactly 40") {
        const TrainReport report = finetune_rd(nets.target, nullptr, ds, 10, cfg);
        CHECK(report.val_examples == 8);  // llround(0.2 * 40)
        REQUIRE(report.epochs.size() >= 1);
        CHECK(std::isfinite(report.epochs.back().train_loss));
        CHECK(report.best_val_acc >= 0.5);  // separable by the level of channel 0
    }
    SECTION("insufficient class population is an error naming the class") {
        CHECK_THROWS_WITH(finetune_rd(nets.target, nullptr, ds, 16, cfg),
                          Catch::Matchers::ContainsSubstring("NR"));
    }
    SECTION("datasets with no labels are rejected") {
        RdDataset unlabeled = ds;
        std::fill(unlabeled.y.begin(), unlabeled.y.end(), -1);
        CHECK_THROWS_AS(finetune_rd(nets.target, nullptr, unlabeled, 10, cfg), DataError);
    }
    SECTION("a checkpoint with no shared parameters is rejected") {
        TensorMap junk;
        junk["nonsense/w"] = Tensor<float>({2, 2});
        CHECK_THROWS_AS(finetune_rd(nets.target, &junk, ds, 10, cfg), DataError);
    }
    SECTION("pretrained base parameters load into the target") {
        nets.pretext.init_params(99);
        const TensorMap sd = nets.pretext.state_dict();
        const TrainReport report = finetune_rd(nets.target, &sd, ds, 10, cfg);
        CHECK(report.epochs.size() >= 1);
    }
}

TEST_CASE("image pretext dataset balances classes and applies the transforms") {
    const Tensor<float> images = random_tensor({11, 3, kImageSize, kImageSize}, 15);
    const ImagePretextData data = build_image_pretext_dataset(images, 16);

    REQUIRE(data.y.size() == 11);
    std::vector<int> counts(kImagePretextClasses, 0);
    for (const int y : data.y) {
        REQUIRE(y >= 0);
        REQUIRE(y < static_cast<int>(kImagePretextClasses));
        ++counts[static_cast<std::size_t>(y)];
    }
    std::sort(counts.begin(), counts.end());
    CHECK(counts == std::vector<int>{2, 3, 3, 3});

    const std::size_t px = 3 * kImageSize * kImageSize;
    for (std::size_t i : {std::size_t{0}, std::size_t{7}}) {
        GazeImage img({3, kImageSize, kImageSize});
        std::copy(images.data() + i * px, images.data() + (i + 1) * px, img.data());
        const GazeImage expect =
            apply_image_transform(img, static_cast<ImageTransformKind>(data.y[i]));
        CHECK(std::equal(expect.data(), expect.data() + px, data.x.data() + i * px));
    }

    const ImagePretextData again = build_image_pretext_dataset(images, 16);
    CHECK(again.y == data.y);
    CHECK(tensors_equal(again.x, data.x));

    CHECK_THROWS_AS(build_image_pretext_dataset(random_tensor({2, 1, 64, 64}, 1), 0),
                    ShapeError);
    CHECK_THROWS_AS(build_image_pretext_dataset(Tensor<float>({0, 3, 64, 64}), 0), ShapeError);
}

TEST_CASE("ce pretrain/finetune round: transfer, freeze, and supervision modes") {
    const CeDataset ds = toy_ce_dataset(60, 17);
    const ImagePretextData pretext_data = build_image_pretext_dataset(ds.x, 18);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 8;
    cfg.seed = 19;
    cfg.optim = OptimizerConfig::sgd(1e-2, 0.9);

    NetworkPair nets = build_ce_networks();
    const TrainReport pre = pretrain_ce(nets.pretext, pretext_data, cfg);
    CHECK(pre.val_examples == std::size_t(std::llround(0.2 * static_cast<double>(ds.size()))));
    CHECK(pre.head_val_acc.count("pretext") == 1);
    const TensorMap sd = nets.pretext.state_dict();

    const TrainReport fine = finetune_ce(nets.target, &sd, ds, 10, cfg);
    CHECK(fine.val_examples == 4);  // llround(0.2 * 10 per class * 2 classes)
    CHECK(fine.loss_rule == "cross-entropy");

    // Frozen base: everything but the batchnorm running statistics stays at
    // the pre-trained values; unfrozen training moves the conv weights.
    NetworkPair frozen = build_ce_networks();
    finetune_ce(frozen.target, &sd, ds, 10, cfg, /*freeze_base=*/true);
    for (const auto& p : frozen.target.params()) {
        if (!p.name.starts_with("base/")) continue;
        if (p.name.ends_with("/rmean") || p.name.ends_with("/rvar")) continue;
        CHECK(tensors_equal(p.value, sd.at(p.name)));
    }
    bool conv_moved = false;
    for (const auto& p : nets.target.params())
        if (p.name == "base/conv1/w" && !tensors_equal(p.value, sd.at(p.name)))
            conv_moved = true;
    CHECK(conv_moved);
}

TEST_CASE("model files round-trip parameters and sidecar metadata") {
    const TempDir tmp("ssrl-test-models");
    const std::string prefix = (tmp.path / "rd-pretext").string();

    NetworkPair nets = build_rd_networks(0.25);
    nets.pretext.init_params(20);
    const Json sidecar{{"task", "rd"}, {"stage", "pretext"}, {"seed", 20}, {"config", "abc123"}};
    save_model(prefix, nets.pretext, sidecar);

    Json meta;
    const TensorMap state = load_model(prefix, &meta);
    CHECK(meta == sidecar);
    const TensorMap expect = nets.pretext.state_dict();
    REQUIRE(state.size() == expect.size());
    for (const auto& [name, t] : expect) CHECK(tensors_equal(t, state.at(name)));

    NetworkPair fresh = build_rd_networks(0.25);
    fresh.target.init_params(21);
    CHECK(fresh.target.load_state_dict(state) > 0);

    CHECK_THROWS_AS(load_model((tmp.path / "missing").string()), CheckpointError);
    {
        std::ofstream bad(prefix + ".json", std::ios::trunc);
        bad << "{ not json";
    }
    CHECK_THROWS_AS(load_model(prefix, &meta), DataError);
}
