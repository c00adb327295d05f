#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tsm/tensor.hpp"

namespace tsm {

// Tensor file layout (all integers little-endian):
//   "TSMT" | u8 version (1) | u8 rank | rank x u8 axis code | rank x u64 extent | f32 data, row-major
inline constexpr std::uint8_t kTensorFormatVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace tsm
