#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ssrl/checkpoint.hpp"

using namespace ssrl;

namespace {
std::filesystem::path temp_file(const char* tag) {
    return std::filesystem::temp_directory_path() / (std::string("ssrl_ckpt_") + tag + ".bin");
}
} // namespace

TEST_CASE("checkpoint round-trips tensors by name and value") {
    TensorMap m;
    m.emplace("base/conv1/w", Tensor<float>({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}));
    m.emplace("base/conv1/b", Tensor<float>({2}, std::vector<float>{-0.5f, 0.25f}));
    const auto path = temp_file("roundtrip");
    save_checkpoint(path.string(), m);
    const TensorMap back = load_checkpoint(path.string());
    REQUIRE(back.size() == 2);
    REQUIRE(back.at("base/conv1/w").shape() == Shape{2, 3});
    for (std::size_t i = 0; i < 6; ++i)
        REQUIRE(back.at("base/conv1/w")[i] == m.at("base/conv1/w")[i]);
    REQUIRE(back.at("base/conv1/b")[1] == 0.25f);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint bytes are deterministic") {
    TensorMap m;
    m.emplace("z/late", Tensor<float>({1}, std::vector<float>{3.0f}));
    m.emplace("a/early", Tensor<float>({2}, std::vector<float>{1.0f, 2.0f}));
    const auto p1 = temp_file("det1"), p2 = temp_file("det2");
    save_checkpoint(p1.string(), m);
    save_checkpoint(p2.string(), m);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
    REQUIRE(b1.substr(0, 7) == std::string("SSRLW1\0", 7));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("loading rejects a bad magic header") {
    const auto path = temp_file("badmagic");
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTAMODEL";
    }
    REQUIRE_THROWS_AS(load_checkpoint(path.string()), CheckpointError);
    std::filesystem::remove(path);
}

TEST_CASE("loading rejects truncated files") {
    TensorMap m;
    m.emplace("w", Tensor<float>({4}, std::vector<float>{1, 2, 3, 4}));
    const auto path = temp_file("trunc");
    save_checkpoint(path.string(), m);
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 5);
    REQUIRE_THROWS_AS(load_checkpoint(path.string()), CheckpointError);
    std::filesystem::remove(path);
}
