#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssrl/checkpoint.hpp"
#include "ssrl/gaze.hpp"
#include "ssrl/pipeline.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

using Json = nlohmann::json;

/// Model-ready reading-detection samples: x is [N, 8, 3000] in channel order
/// EOG H, EOG V, ACC x/y/z, GYRO x/y/z; y holds class indices with -1 for
/// unlabeled samples.
struct RdDataset {
    Tensor<float> x;
    std::vector<int> y;
    std::vector<std::string> participant;
    std::vector<long long> start_ms;

    std::size_t size() const { return y.size(); }
};

/// Model-ready confidence-estimation samples: x is [N, 3, 64, 64] rasters,
/// y in {0 = confident, 1 = unconfident, -1 = unlabeled}.
struct CeDataset {
    Tensor<float> x;
    std::vector<int> y;
    std::vector<std::string> question;

    std::size_t size() const { return y.size(); }
};

inline RdDataset make_rd_dataset(const std::vector<SensorSegment>& segments) {
    RdDataset ds;
    const std::size_t n = segments.size();
    ds.x.resize({n, kRdChannels, kSegmentSamples});
    ds.y.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const SensorSegment& seg = segments[i];
        if (seg.eog.size() != 2 || seg.acc.size() != 3 || seg.gyro.size() != 3)
            throw ShapeError("rd dataset: segment " + std::to_string(i) +
                             " has wrong channel group sizes");
        std::size_t ch = 0;
        for (const auto* group : {&seg.eog, &seg.acc, &seg.gyro})
            for (const auto& channel : *group) {
                if (channel.size() != kSegmentSamples)
                    throw ShapeError("rd dataset: segment " + std::to_string(i) + " channel " +
                                     std::to_string(ch) + " has " +
                                     std::to_string(channel.size()) + " samples");
                for (std::size_t k = 0; k < kSegmentSamples; ++k)
                    ds.x.at(i, ch, k) = channel[k];
                ++ch;
            }
        ds.y.push_back(seg.label ? static_cast<int>(*seg.label) : -1);
        ds.participant.push_back(seg.participant);
        ds.start_ms.push_back(seg.start_ms);
    }
    return ds;
}

inline CeDataset make_ce_dataset(const std::vector<GazeRecord>& records) {
    CeDataset ds;
    const std::size_t n = records.size();
    ds.x.resize({n, 3, kImageSize, kImageSize});
    ds.y.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const GazeImage img = rasterize_gaze(records[i]);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t r = 0; r < kImageSize; ++r)
                for (std::size_t col = 0; col < kImageSize; ++col)
                    ds.x.at(i, c, r, col) = img.at(c, r, col);
        ds.y.push_back(records[i].label ? static_cast<int>(*records[i].label) : -1);
        ds.question.push_back(records[i].question_id);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// On-disk container: a directory holding manifest.json plus one tensor file
// per split in the checkpoint format. The manifest carries the per-sample
// metadata, so writing the same datasets twice produces identical bytes.

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw DataError("short write to '" + path + "'");
}

inline Json read_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.json";
    std::ifstream f(path);
    if (!f) throw DataError("cannot open '" + path + "'");
    Json m;
    try {
        f >> m;
    } catch (const std::exception& e) {
        throw DataError("'" + path + "': " + e.what());
    }
    return m;
}

inline const Json& split_entry(const Json& manifest, const std::string& dir,
                               const std::string& kind, const std::string& split) {
    if (manifest.value("kind", "") != kind)
        throw DataError("dataset '" + dir + "': kind is '" + manifest.value("kind", "") +
                        "', expected '" + kind + "'");
    if (!manifest.contains("splits") || !manifest["splits"].contains(split))
        throw DataError("dataset '" + dir + "': no split '" + split + "'");
    return manifest["splits"][split];
}

inline Tensor<float> load_split_tensor(const std::string& dir, const Json& entry,
                                       std::size_t count) {
    TensorMap tensors = load_checkpoint(dir + "/" + entry.at("file").get<std::string>());
    auto it = tensors.find("x");
    if (it == tensors.end()) throw DataError("dataset '" + dir + "': tensor file lacks 'x'");
    if (it->second.shape().empty() || it->second.shape()[0] != count)
        throw DataError("dataset '" + dir + "': tensor count does not match manifest");
    return std::move(it->second);
}

}  // namespace detail

inline void save_rd_dataset(const std::string& dir,
                            const std::map<std::string, RdDataset>& splits,
                            const Json& meta = Json::object()) {
    std::filesystem::create_directories(dir);
    Json manifest;
    manifest["kind"] = "rd";
    manifest["meta"] = meta;
    manifest["splits"] = Json::object();
    for (const auto& [name, ds] : splits) {
        const std::string file = name + ".bin";
        save_checkpoint(dir + "/" + file, {{"x", ds.x}});
        Json entry;
        entry["file"] = file;
        entry["count"] = ds.size();
        entry["labels"] = ds.y;
        entry["participants"] = ds.participant;
        entry["start_ms"] = ds.start_ms;
        manifest["splits"][name] = std::move(entry);
    }
    detail::write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

inline RdDataset load_rd_dataset(const std::string& dir, const std::string& split) {
    const Json manifest = detail::read_manifest(dir);
    const Json& entry = detail::split_entry(manifest, dir, "rd", split);
    RdDataset ds;
    ds.y = entry.at("labels").get<std::vector<int>>();
    ds.participant = entry.at("participants").get<std::vector<std::string>>();
    ds.start_ms = entry.at("start_ms").get<std::vector<long long>>();
    if (ds.participant.size() != ds.y.size() || ds.start_ms.size() != ds.y.size() ||
        entry.at("count").get<std::size_t>() != ds.y.size())
        throw DataError("dataset '" + dir + "': inconsistent metadata for split '" + split + "'");
    ds.x = detail::load_split_tensor(dir, entry, ds.y.size());
    if (ds.x.shape() != Shape{ds.y.size(), kRdChannels, kSegmentSamples})
        throw DataError("dataset '" + dir + "': unexpected tensor shape " + shape_str(ds.x.shape()));
    return ds;
}

inline void save_ce_dataset(const std::string& dir,
                            const std::map<std::string, CeDataset>& splits,
                            const Json& meta = Json::object()) {
    std::filesystem::create_directories(dir);
    Json manifest;
    manifest["kind"] = "ce";
    manifest["meta"] = meta;
    manifest["splits"] = Json::object();
    for (const auto& [name, ds] : splits) {
        const std::string file = name + ".bin";
        save_checkpoint(dir + "/" + file, {{"x", ds.x}});
        Json entry;
        entry["file"] = file;
        entry["count"] = ds.size();
        entry["labels"] = ds.y;
        entry["questions"] = ds.question;
        manifest["splits"][name] = std::move(entry);
    }
    detail::write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

inline CeDataset load_ce_dataset(const std::string& dir, const std::string& split) {
    const Json manifest = detail::read_manifest(dir);
    const Json& entry = detail::split_entry(manifest, dir, "ce", split);
    CeDataset ds;
    ds.y = entry.at("labels").get<std::vector<int>>();
    ds.question = entry.at("questions").get<std::vector<std::string>>();
    if (ds.question.size() != ds.y.size() || entry.at("count").get<std::size_t>() != ds.y.size())
        throw DataError("dataset '" + dir + "': inconsistent metadata for split '" + split + "'");
    ds.x = detail::load_split_tensor(dir, entry, ds.y.size());
    if (ds.x.shape() != Shape{ds.y.size(), 3, kImageSize, kImageSize})
        throw DataError("dataset '" + dir + "': unexpected tensor shape " + shape_str(ds.x.shape()));
    return ds;
}

inline std::vector<std::string> dataset_split_names(const std::string& dir) {
    const Json manifest = detail::read_manifest(dir);
    std::vector<std::string> names;
    if (manifest.contains("splits"))
        for (const auto& item : manifest["splits"].items()) names.push_back(item.key());
    return names;
}

}  // namespace ssrl
