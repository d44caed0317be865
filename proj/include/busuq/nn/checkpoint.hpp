#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "busuq/array_io.hpp"
#include "busuq/nn/layers.hpp"

namespace busuq::nn {

inline constexpr const char* kCheckpointFormat = "busuq-model-v1";

// Writes `model.json` (layer list, shapes, offsets, hyper-parameters, seed)
// and `params.f32` (all parameters concatenated, column-major per matrix).
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const ParameterStore<Scalar>& store,
                     const nlohmann::json& hyper, std::uint64_t seed, const nlohmann::json& extra = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json layers = nlohmann::json::array();
  std::vector<float> flat;
  for (const auto* p : store.all()) {
    layers.push_back({{"name", p->name},
                      {"shape", {p->value.rows(), p->value.cols()}},
                      {"offset", flat.size()},
                      {"trainable", p->trainable}});
    for (Index i = 0; i < p->value.size(); ++i) flat.push_back(static_cast<float>(p->value.data()[i]));
  }
  io::write_f32(dir / "params.f32", flat);
  nlohmann::json manifest{{"format", kCheckpointFormat}, {"kind", kind},   {"seed", seed},
                          {"hyper", hyper},              {"layers", layers}, {"params_file", "params.f32"},
                          {"element_count", flat.size()}};
  if (!extra.is_null()) manifest["extra"] = extra;
  io::write_json(dir / "model.json", manifest);
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir, const std::string& expected_kind = "") {
  auto manifest = io::read_json(dir / "model.json");
  require(manifest.value("format", "") == kCheckpointFormat, dir.string() + ": unsupported checkpoint format");
  if (!expected_kind.empty()) {
    require(manifest.at("kind").get<std::string>() == expected_kind,
            dir.string() + ": checkpoint holds a '" + manifest.at("kind").get<std::string>() + "' model, expected '" +
                expected_kind + "'");
  }
  return manifest;
}

// Fills an already-constructed store (same architecture) from disk.
template <typename Scalar>
void load_parameters(const std::filesystem::path& dir, const nlohmann::json& manifest, ParameterStore<Scalar>& store) {
  const auto flat = io::read_f32(dir / manifest.at("params_file").get<std::string>());
  for (const auto& layer : manifest.at("layers")) {
    auto& p = store.at(layer.at("name").get<std::string>());
    const Index rows = layer.at("shape")[0].get<Index>();
    const Index cols = layer.at("shape")[1].get<Index>();
    require(rows == p.value.rows() && cols == p.value.cols(),
            "checkpoint parameter '" + p.name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                ", model expects " + std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    const auto offset = layer.at("offset").get<std::size_t>();
    require(offset + static_cast<std::size_t>(rows * cols) <= flat.size(), "checkpoint array is truncated");
    for (Index i = 0; i < rows * cols; ++i) p.value.data()[i] = static_cast<Scalar>(flat[offset + static_cast<std::size_t>(i)]);
  }
  require(manifest.at("layers").size() == store.size(), "checkpoint and model disagree on the parameter count");
}

}  // namespace busuq::nn
