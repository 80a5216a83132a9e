#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>
#include <zlib.h>

#include "duohdr/synth.hpp"
#include "duohdr/train.hpp"

namespace duohdr {

// ---------------------------------------------------------------------------
// Image files (implemented in io.cpp)
// ---------------------------------------------------------------------------

struct ImageU8 {
    int w = 0, h = 0, c = 0;  // c in {1,3}
    std::vector<std::uint8_t> px;  // row-major, interleaved
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// Portable float map: "PF"/"Pf" header, little-endian payload (scale -1.0),
// rows stored bottom-to-top in the file; in memory rows are top-down.
struct PfmImage {
    int w = 0, h = 0, c = 0;  // c in {1,3}
    std::vector<float> px;
};

PfmImage read_pfm(const std::string& path);
void write_pfm(const std::string& path, const PfmImage& img);

template <typename S>
Image<S> u8_to_image(const ImageU8& in) {
    Image<S> out(in.h, in.w, in.c);
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out.px[static_cast<size_t>(i)] = static_cast<S>(in.px[static_cast<size_t>(i)]) / S(255);
    return out;
}

template <typename S>
ImageU8 image_to_u8(const Image<S>& in) {
    ImageU8 out;
    out.w = in.w;
    out.h = in.h;
    out.c = in.c;
    out.px.resize(static_cast<size_t>(in.numel()));
    for (std::int64_t i = 0; i < in.numel(); ++i) {
        const double v = std::clamp(static_cast<double>(in.px[static_cast<size_t>(i)]), 0.0, 1.0);
        out.px[static_cast<size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

template <typename S>
Image<S> pfm_to_image(const PfmImage& in) {
    Image<S> out(in.h, in.w, in.c);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.px[static_cast<size_t>(i)] = static_cast<S>(in.px[static_cast<size_t>(i)]);
    return out;
}

template <typename S>
PfmImage image_to_pfm(const Image<S>& in) {
    PfmImage out;
    out.w = in.w;
    out.h = in.h;
    out.c = in.c;
    out.px.resize(static_cast<size_t>(in.numel()));
    for (std::int64_t i = 0; i < in.numel(); ++i) out.px[static_cast<size_t>(i)] = static_cast<float>(in.px[static_cast<size_t>(i)]);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: one-line JSON manifest followed by raw little-endian blobs.
// ---------------------------------------------------------------------------

template <typename S>
void save_checkpoint(const ParamStore<S>& store, const std::string& path, const NetworkConfig* net = nullptr) {
    nlohmann::json manifest;
    manifest["format"] = "duohdr-checkpoint";
    manifest["version"] = 1;
    manifest["seed"] = store.seed();
    manifest["scalar_bytes"] = sizeof(S);
    if (net) {
        manifest["network"] = {{"channels", net->channels},
                               {"dem_count", net->dem_count},
                               {"window", net->window},
                               {"ablation", ablation_name(net->ablation)}};
    }
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, e] : store) {
        nlohmann::json je;
        je["name"] = name;
        nlohmann::json sh = nlohmann::json::array();
        for (int i = 0; i < e.value.shape.rank(); ++i) sh.push_back(e.value.shape[i]);
        je["shape"] = sh;
        je["learnable"] = e.learnable;
        const std::uint64_t bytes = static_cast<std::uint64_t>(e.value.numel()) * sizeof(S);
        je["offset"] = offset;
        je["bytes"] = bytes;
        je["crc32"] = static_cast<std::uint32_t>(
            ::crc32(0, reinterpret_cast<const Bytef*>(e.value.ptr()), static_cast<uInt>(bytes)));
        entries.push_back(je);
        offset += bytes;
    }
    manifest["entries"] = entries;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << manifest.dump() << '\n';
    for (const auto& [name, e] : store)
        f.write(reinterpret_cast<const char*>(e.value.ptr()),
                static_cast<std::streamsize>(static_cast<std::uint64_t>(e.value.numel()) * sizeof(S)));
    if (!f) throw IoError("failed writing checkpoint '" + path + "'");
}

template <typename S>
void load_checkpoint(ParamStore<S>& store, const std::string& path, NetworkConfig* net_out = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw IoError("checkpoint '" + path + "': missing manifest line");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
        throw IoError("checkpoint '" + path + "': malformed manifest: " + e.what());
    }
    if (manifest.value("format", "") != "duohdr-checkpoint")
        throw IoError("checkpoint '" + path + "': unrecognized format");
    if (manifest.value("scalar_bytes", 0) != static_cast<int>(sizeof(S)))
        throw IoError("checkpoint '" + path + "': scalar width mismatch");
    if (net_out && manifest.contains("network")) {
        const auto& n = manifest.at("network");
        net_out->channels = n.value("channels", net_out->channels);
        net_out->dem_count = n.value("dem_count", net_out->dem_count);
        net_out->window = n.value("window", net_out->window);
        net_out->ablation = ablation_from_name(n.value("ablation", "none"));
    }

    const std::streampos blob_start = f.tellg();
    store.clear();
    for (const auto& je : manifest.at("entries")) {
        const std::string name = je.at("name").get<std::string>();
        std::vector<int> dims = je.at("shape").get<std::vector<int>>();
        Shape sh;
        switch (dims.size()) {
            case 1: sh = Shape{dims[0]}; break;
            case 2: sh = Shape{dims[0], dims[1]}; break;
            case 3: sh = Shape{dims[0], dims[1], dims[2]}; break;
            case 4: sh = Shape{dims[0], dims[1], dims[2], dims[3]}; break;
            default: throw IoError("checkpoint entry '" + name + "': bad shape rank");
        }
        Tensor<S> t(sh);
        const std::uint64_t bytes = je.at("bytes").get<std::uint64_t>();
        if (bytes != static_cast<std::uint64_t>(t.numel()) * sizeof(S))
            throw IoError("checkpoint entry '" + name + "': byte count does not match shape");
        f.seekg(blob_start + static_cast<std::streamoff>(je.at("offset").get<std::uint64_t>()));
        f.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(bytes));
        if (!f) throw IoError("checkpoint entry '" + name + "': truncated payload");
        const auto crc = static_cast<std::uint32_t>(
            ::crc32(0, reinterpret_cast<const Bytef*>(t.ptr()), static_cast<uInt>(bytes)));
        if (crc != je.at("crc32").get<std::uint32_t>())
            throw IoError("checkpoint entry '" + name + "': checksum mismatch");
        store.insert_raw(name, std::move(t), je.at("learnable").get<bool>());
    }
}

// ---------------------------------------------------------------------------
// Run configuration JSON
// ---------------------------------------------------------------------------

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Scene directories: ldr_0.png ldr_1.png ldr_2.png + exposure.json
// (+ gt.pfm, mask.png when synthesized)
// ---------------------------------------------------------------------------

void write_scene_dir(const std::string& dir, const SynthScene<double>& scene);
ExposureStack<double> read_scene_dir(const std::string& dir);
bool read_scene_gt(const std::string& dir, Image<double>& gt);

// ---------------------------------------------------------------------------
// Training reports: per-step JSON lines + summary document
// ---------------------------------------------------------------------------

void write_report(const std::string& dir, const TrainReport& report, const RunConfig& cfg);

}  // namespace duohdr
