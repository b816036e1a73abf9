#pragma once

// Checkpoint container, little-endian:
//
//   bytes 0..3   magic "IVTL"
//   bytes 4..7   u32 format version (currently 1)
//   bytes 8..15  u64 manifest length M
//   16 .. 16+M   manifest: JSON with sorted keys
//   16+M ..      parameter data, float32, canonical order, row-major
//
// The manifest holds the model config, the curriculum stage the parameters
// had completed, and one {name, shape, offset} entry per parameter, offsets
// counted in bytes from the start of the data section. Saving is atomic
// (temp file + rename), and save -> load -> save is byte-identical.

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mlr/model.hpp"

namespace mlr {

inline constexpr char kCheckpointMagic[4] = {'I', 'V', 'T', 'L'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Params<float> params;
    int stage = 0;
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const std::string& s, size_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)(unsigned char)s[at + (size_t)i] << (8 * i);
    return v;
}

inline uint64_t get_u64(const std::string& s, size_t at) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)(unsigned char)s[at + (size_t)i] << (8 * i);
    return v;
}

}  // namespace detail

inline std::string checkpoint_bytes(const Params<float>& params, int stage) {
    if (stage < 0) throw ContractError("checkpoint stage must be non-negative");
    nlohmann::json manifest;
    manifest["config"] = model_config_to_json(params.cfg);
    manifest["stage"] = stage;
    nlohmann::json plist = nlohmann::json::array();
    uint64_t offset = 0;
    for (size_t i = 0; i < params.count(); ++i) {
        plist.push_back({{"name", params.names[i]},
                         {"shape", params.tensors[i].shape},
                         {"offset", offset}});
        offset += (uint64_t)params.tensors[i].values.size() * sizeof(float);
    }
    manifest["params"] = std::move(plist);
    const std::string mjson = manifest.dump();

    std::string out;
    out.reserve(16 + mjson.size() + offset);
    out.append(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, (uint64_t)mjson.size());
    out += mjson;
    for (const auto& t : params.tensors) {
        const size_t at = out.size();
        out.resize(at + t.values.size() * sizeof(float));
        std::memcpy(out.data() + at, t.values.data(), t.values.size() * sizeof(float));
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const Params<float>& params, int stage) {
    const std::string bytes = checkpoint_bytes(params, stage);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open for writing: " + tmp);
        f.write(bytes.data(), (std::streamsize)bytes.size());
        if (!f) throw DataError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("cannot move checkpoint into place: " + ec.message());
}

inline Checkpoint checkpoint_from_bytes(const std::string& bytes) {
    if (bytes.size() < 16) throw FormatError("checkpoint is too short for its header");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw FormatError("bad checkpoint magic");
    const uint32_t version = detail::get_u32(bytes, 4);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const uint64_t mlen = detail::get_u64(bytes, 8);
    if (16 + mlen > bytes.size()) throw FormatError("checkpoint manifest is truncated");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(16, mlen));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    if (!manifest.is_object()) throw FormatError("checkpoint manifest must be an object");
    for (auto it = manifest.begin(); it != manifest.end(); ++it)
        if (it.key() != "config" && it.key() != "params" && it.key() != "stage")
            throw FormatError("checkpoint manifest has unknown key '" + it.key() + "'");
    for (const char* key : {"config", "params", "stage"})
        if (!manifest.contains(key))
            throw FormatError(std::string("checkpoint manifest is missing '") + key + "'");

    Checkpoint ck;
    ck.params.cfg = model_config_from_json(manifest["config"]);
    ck.stage = manifest["stage"].get<int>();
    if (ck.stage < 0) throw FormatError("checkpoint stage is negative");

    const auto layout = param_layout(ck.params.cfg);
    const auto& plist = manifest["params"];
    if (!plist.is_array() || plist.size() != layout.size())
        throw FormatError("checkpoint parameter list does not match the model layout");
    const size_t data_at = 16 + (size_t)mlen;
    uint64_t expect_offset = 0;
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& e = plist[i];
        if (!e.is_object()) throw FormatError("checkpoint parameter entry must be an object");
        for (auto it = e.begin(); it != e.end(); ++it)
            if (it.key() != "name" && it.key() != "shape" && it.key() != "offset")
                throw FormatError("checkpoint parameter entry has unknown key '" + it.key() +
                                  "'");
        if (e.value("name", "") != layout[i].first)
            throw FormatError("checkpoint parameter " + std::to_string(i) + " is '" +
                              e.value("name", "") + "', expected '" + layout[i].first + "'");
        const Shape shape = e.at("shape").get<Shape>();
        if (shape != layout[i].second)
            throw FormatError("checkpoint parameter " + layout[i].first + " has shape " +
                              shape_str(shape) + ", expected " + shape_str(layout[i].second));
        if (e.at("offset").get<uint64_t>() != expect_offset)
            throw FormatError("checkpoint parameter " + layout[i].first +
                              " is not stored contiguously");
        TensorData<float> t;
        t.shape = shape;
        t.requires_grad = true;
        t.values.resize(numel(shape));
        const size_t nbytes = t.values.size() * sizeof(float);
        if (data_at + expect_offset + nbytes > bytes.size())
            throw FormatError("checkpoint data is truncated at parameter " + layout[i].first);
        std::memcpy(t.values.data(), bytes.data() + data_at + expect_offset, nbytes);
        ck.params.names.push_back(layout[i].first);
        ck.params.tensors.push_back(std::move(t));
        expect_offset += nbytes;
    }
    if (data_at + expect_offset != bytes.size())
        throw FormatError("checkpoint has trailing bytes after the parameter data");
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return checkpoint_from_bytes(bytes);
}

}  // namespace mlr
