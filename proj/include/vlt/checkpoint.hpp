#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlt/model.hpp"

namespace vlt::checkpoint {

std::uint32_t crc32(const std::uint8_t* data, std::size_t len);

// Named-tensor container: magic "VLTC", u32 version, u32 count, per tensor
// (u32 name length, name, u32 rank, u32 dims, u8 dtype, payload), trailing
// CRC32 of everything before it. All integers little-endian; f32 tensors
// store 4-byte floats, f64 tensors 8-byte doubles.
std::vector<std::uint8_t> serialize(const model::ModelParams& m);
// Validates magic, version, CRC, and that names/shapes/dtypes match the
// target model exactly, then overwrites the tensor values.
void deserialize(model::ModelParams& m, const std::vector<std::uint8_t>& blob);

void save_checkpoint(const std::string& path, const model::ModelParams& m);
void load_checkpoint(const std::string& path, model::ModelParams& m);

}  // namespace vlt::checkpoint
