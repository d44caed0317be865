#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "busuq/nn/tensor.hpp"

namespace busuq::io {

using nlohmann::json;

// Flat little-endian IEEE-754 binary32 arrays.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path);

// Writes `<name>.f32` next to the manifest and returns its manifest entry
// {"file": ..., "shape": [...], "dtype": "f32le"}.
json write_tensor(const std::filesystem::path& dir, const std::string& name,
                  const nn::Tensor<float>& tensor);
nn::Tensor<float> read_tensor(const std::filesystem::path& dir, const json& entry);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& value);

// Stable 64-bit FNV-1a digest, used for content-addressed artifact names.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex_digest(std::uint64_t value);

}  // namespace busuq::io
