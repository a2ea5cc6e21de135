#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfuse/audio.hpp"
#include "promptfuse/error.hpp"
#include "promptfuse/model.hpp"
#include "promptfuse/sha256.hpp"
#include "promptfuse/train_config.hpp"

namespace promptfuse {

// Layout (all integers little-endian):
//   magic "PFUSECKP" | u32 version | u32 json length | json
//   u32 parameter count
//   per parameter: u32 name length | name | u64 element count | float32 * count
inline constexpr char kCheckpointMagic[8] = {'P', 'F', 'U', 'S', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> b) : b_(b) {}
    std::span<const std::uint8_t> take(std::size_t n) {
        if (b_.size() - pos_ < n) throw ParseError("checkpoint: truncated file");
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32() {
        auto s = take(4);
        return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
               (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    bool done() const noexcept { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Bytes of one parameter as little-endian float32.
template <class S>
void append_float32(std::vector<std::uint8_t>& out, const Matrix<S>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_f32(out, static_cast<float>(m.data()[i]));
}

/// SHA-256 over name and float32 blob of every frozen parameter, in order.
template <class S>
std::string frozen_parameter_hash(const ParameterStore<S>& store) {
    Sha256 h;
    std::vector<std::uint8_t> blob;
    for (const auto& p : store) {
        if (p.trainable) continue;
        blob.clear();
        append_float32(blob, p.value);
        h.update(p.name);
        h.update(std::as_bytes(std::span(blob)));
    }
    return h.hex_digest();
}

struct CheckpointMeta {
    TrainConfig config;
    int epochs_completed = 0;
};

template <class S>
std::vector<std::uint8_t> serialize_checkpoint(const MultimodalModel<S>& model, const CheckpointMeta& meta) {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    detail::put_u32(out, kCheckpointVersion);
    nlohmann::json header{{"format", "promptfuse-checkpoint"},
                          {"train_config", meta.config},
                          {"epochs_completed", meta.epochs_completed}};
    const std::string json = header.dump();
    detail::put_u32(out, static_cast<std::uint32_t>(json.size()));
    out.insert(out.end(), json.begin(), json.end());
    detail::put_u32(out, static_cast<std::uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        detail::put_u64(out, static_cast<std::uint64_t>(p.value.size()));
        append_float32(out, p.value);
    }
    return out;
}

template <class S>
struct LoadedCheckpoint {
    CheckpointMeta meta;
    MultimodalModel<S> model;
};

/// Rebuilds the model from the embedded config, then overwrites every
/// parameter from the blobs. Names and element counts must match exactly.
template <class S = float>
LoadedCheckpoint<S> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::Cursor c(bytes);
    const auto magic = c.take(sizeof(kCheckpointMagic));
    if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw ParseError("checkpoint: bad magic");
    if (const auto v = c.u32(); v != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(v));
    const auto json_len = c.u32();
    const auto json_bytes = c.take(json_len);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: bad header: ") + e.what());
    }
    CheckpointMeta meta;
    meta.config = header.at("train_config").get<TrainConfig>();
    meta.epochs_completed = header.value("epochs_completed", 0);

    MultimodalModel<S> model(meta.config.model, meta.config.seed);
    const auto count = c.u32();
    if (count != model.params().size())
        throw ParseError("checkpoint: parameter count " + std::to_string(count) + " does not match config (" +
                         std::to_string(model.params().size()) + ")");
    for (auto& p : model.params()) {
        const auto name_len = c.u32();
        const auto name_bytes = c.take(name_len);
        const std::string name(name_bytes.begin(), name_bytes.end());
        if (name != p.name) throw ParseError("checkpoint: expected parameter " + p.name + ", found " + name);
        if (c.u64() != static_cast<std::uint64_t>(p.value.size()))
            throw ParseError("checkpoint: element count mismatch for " + name);
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(c.f32());
    }
    if (!c.done()) throw ParseError("checkpoint: trailing bytes");
    return {std::move(meta), std::move(model)};
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write error on " + path.string());
}

template <class S>
void save_checkpoint(const MultimodalModel<S>& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
    write_bytes(path, serialize_checkpoint(model, meta));
}

template <class S = float>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint<S>(read_file_bytes(path));
}

}  // namespace promptfuse
