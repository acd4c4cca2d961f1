#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "csn/tensor.hpp"

// CSNT tensor container, little-endian:
//   "CSNT" | version u16 | entry count u32 |
//   per entry: name length u16, ASCII name, rank u8, dims u32 x rank,
//              payload f32 x numel, CRC32 u32 of the payload bytes
// Values are narrowed to f32 on write and widened back to f64 on read.
namespace csn {

inline constexpr std::uint16_t kContainerVersion = 1;

std::string encode_container(const std::vector<NamedTensor>& entries);
// Throws DataError on bad magic, unsupported version, truncation or CRC mismatch.
std::vector<NamedTensor> decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_container(const std::filesystem::path& path);

// Rounds every value through f32, i.e. what a write/read cycle yields.
Tensor round_to_f32(const Tensor& t);

}  // namespace csn
