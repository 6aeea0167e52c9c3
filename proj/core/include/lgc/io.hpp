#pragma once

// Little-endian binary formats.
//
// LGCK checkpoint / LGPQ packed model:
//   magic[4] | u32 version | u32 len + config JSON
//   | (LGPQ only) u32 len + quant spec JSON
//   | u32 count | count x { u16 len + name, u8 dtype, u8 rank, u32 dims[rank],
//                          u64 offset, u64 byte_length }
//   | data
// Offsets are absolute file offsets. Tensors appear in canonical order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lgc/model.hpp"
#include "lgc/packed_model.hpp"

namespace lgc {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kPackedVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f16 = 1, i8 = 2, i4_packed = 3, i32 = 4 };

struct DirectoryEntry {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::uint32_t> dims;
    std::uint64_t offset = 0;
    std::uint64_t byte_length = 0;
};

struct Checkpoint {
    ModelConfig config;
    ModelWeights weights;
};

std::vector<std::uint8_t> serialize_checkpoint(const ModelWeights& weights, const ModelConfig& config);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
/// Parses only the header and directory.
std::vector<DirectoryEntry> read_directory(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_packed(const PackedModel& model);
PackedModel deserialize_packed(std::span<const std::uint8_t> bytes);

std::string to_json_string(const PackedQuantSpec& spec);
PackedQuantSpec quant_spec_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights, const ModelConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_packed(const std::filesystem::path& path, const PackedModel& model);
PackedModel load_packed(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a, used for artifact digests in manifests.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);

}  // namespace lgc
