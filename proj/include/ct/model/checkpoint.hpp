#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "ct/model/config.hpp"
#include "ct/model/encoder.hpp"

namespace ct::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    EncoderParams params;
    EncoderConfig config;
    nlohmann::json metadata = nlohmann::json::object();  // task-specific extras
};

// Layout: "CTXF", u32 version, u32 JSON length, JSON header, then per tensor:
// u32 name length, name, u8 rank, rank x u64 dims, little-endian f32 values.
// The JSON header holds the encoder config plus "tensor_count" and "metadata".
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params, const EncoderConfig& cfg,
                     const nlohmann::json& metadata = nlohmann::json::object());

// Throws CorruptCheckpoint or VersionMismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const EncoderParams& params, const EncoderConfig& cfg,
                                 const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint deserialize_checkpoint(std::string_view bytes);

}  // namespace ct::model
