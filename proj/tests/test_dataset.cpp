#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "ssrl/dataset.hpp"

using namespace ssrl;

namespace {

std::vector<SensorSegment> labeled_segments(std::size_t n, std::uint64_t seed) {
    const SynthRdResult r = synth_rd_stream(1, 0.01 * static_cast<double>(n), 1.0, seed);
    auto segs = segment_stream(r.streams[0]);
    label_segments(segs, r.spans[0]);
    for (auto& s : segs) s = baseline_correct(s);
    segs.resize(std::min(segs.size(), n));
    return segs;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const char* name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("rd dataset packs segments in channel order H,V,acc,gyro") {
    const auto segs = labeled_segments(4, 3);
    REQUIRE(segs.size() >= 2);
    const RdDataset ds = make_rd_dataset(segs);
    REQUIRE(ds.x.shape() == Shape{segs.size(), kRdChannels, kSegmentSamples});
    for (std::size_t k = 0; k < kSegmentSamples; k += 173) {
        CHECK(ds.x.at(1, 0, k) == segs[1].eog[0][k]);
        CHECK(ds.x.at(1, 1, k) == segs[1].eog[1][k]);
        CHECK(ds.x.at(1, 2, k) == segs[1].acc[0][k]);
        CHECK(ds.x.at(1, 5, k) == segs[1].gyro[0][k]);
    }
    CHECK(ds.y[0] == static_cast<int>(*segs[0].label));
    CHECK(ds.participant[0] == "p01");
    CHECK(ds.start_ms[1] == segs[1].start_ms);

    SensorSegment unlabeled = segs[0];
    unlabeled.label.reset();
    CHECK(make_rd_dataset({unlabeled}).y[0] == -1);
}

TEST_CASE("ce dataset rasterizes records") {
    const auto recs = synth_ce_gaze(1, 3, 1.0, 7);
    const CeDataset ds = make_ce_dataset(recs);
    REQUIRE(ds.x.shape() == Shape{3, 3, kImageSize, kImageSize});
    const GazeImage img = rasterize_gaze(recs[2]);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < kImageSize; r += 7)
            for (std::size_t col = 0; col < kImageSize; col += 7)
                REQUIRE(ds.x.at(2, c, r, col) == img.at(c, r, col));
    CHECK(ds.question[1] == recs[1].question_id);
    CHECK((ds.y[0] == 0 || ds.y[0] == 1));
}

TEST_CASE("rd dataset container round-trips through disk") {
    TempDir dir("ssrl_rd_ds");
    const auto segs = labeled_segments(6, 11);
    const RdDataset ds = make_rd_dataset(segs);
    Json meta;
    meta["seed"] = 11;
    meta["criteria"] = {{"threshold_uv", 1000.0}, {"sustain_s", 2.0}};
    save_rd_dataset(dir.path.string(), {{"labeled", ds}}, meta);

    const RdDataset back = load_rd_dataset(dir.path.string(), "labeled");
    REQUIRE(back.size() == ds.size());
    CHECK(back.y == ds.y);
    CHECK(back.participant == ds.participant);
    CHECK(back.start_ms == ds.start_ms);
    REQUIRE(back.x.shape() == ds.x.shape());
    for (std::size_t i = 0; i < ds.x.size(); i += 499) REQUIRE(back.x[i] == ds.x[i]);

    CHECK(dataset_split_names(dir.path.string()) == std::vector<std::string>{"labeled"});
    CHECK_THROWS_AS(load_rd_dataset(dir.path.string(), "missing"), DataError);
    CHECK_THROWS_AS(load_ce_dataset(dir.path.string(), "labeled"), DataError);  // kind mismatch
}

TEST_CASE("saving the same dataset twice is byte-identical") {
    TempDir a("ssrl_ds_a"), b("ssrl_ds_b");
    const auto segs = labeled_segments(5, 23);
    const RdDataset ds = make_rd_dataset(segs);
    Json meta;
    meta["seed"] = 23;
    save_rd_dataset(a.path.string(), {{"labeled", ds}, {"pool", ds}}, meta);
    save_rd_dataset(b.path.string(), {{"labeled", ds}, {"pool", ds}}, meta);
    CHECK(slurp((a.path / "manifest.json").string()) == slurp((b.path / "manifest.json").string()));
    CHECK(slurp((a.path / "labeled.bin").string()) == slurp((b.path / "labeled.bin").string()));
    CHECK(slurp((a.path / "pool.bin").string()) == slurp((b.path / "pool.bin").string()));
}

TEST_CASE("ce dataset container round-trips through disk") {
    TempDir dir("ssrl_ce_ds");
    const auto recs = synth_ce_gaze(2, 4, 0.8, 29);
    const CeDataset ds = make_ce_dataset(recs);
    save_ce_dataset(dir.path.string(), {{"labeled", ds}});
    const CeDataset back = load_ce_dataset(dir.path.string(), "labeled");
    REQUIRE(back.size() == ds.size());
    CHECK(back.y == ds.y);
    CHECK(back.question == ds.question);
    for (std::size_t i = 0; i < ds.x.size(); i += 1013) REQUIRE(back.x[i] == ds.x[i]);
}

TEST_CASE("corrupt containers raise data errors") {
    TempDir dir("ssrl_bad_ds");
    std::filesystem::create_directories(dir.path);
    CHECK_THROWS_AS(load_rd_dataset(dir.path.string(), "labeled"), DataError);
    {
        std::ofstream f(dir.path / "manifest.json");
        f << "{ not json";
    }
    CHECK_THROWS_AS(load_rd_dataset(dir.path.string(), "labeled"), DataError);
    {
        std::ofstream f(dir.path / "manifest.json");
        f << R"({"kind":"rd","splits":{"labeled":{"file":"labeled.bin","count":2,)"
          << R"("labels":[0],"participants":["p01"],"start_ms":[0]}}})";
    }
    CHECK_THROWS_AS(load_rd_dataset(dir.path.string(), "labeled"), DataError);
}
