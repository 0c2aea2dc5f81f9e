// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: a little-endian uint32 manifest length, a JSON
// manifest (format version, step, producing run config, and an array table
// of name/shape/offset entries), then the payload — every parameter's f32
// data concatenated in manifest order. Round-trips are bitwise exact.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/config.hpp"
#include "moelab/errors.hpp"
#include "moelab/model.hpp"

namespace moelab {

constexpr int kCheckpointVersion = 1;

struct LoadedArray {
  std::vector<int> shape;
  std::vector<float> values;
};

struct LoadedCheckpoint {
  ordered_json manifest;
  int step = 0;
  RunConfig run_config;
  std::vector<std::pair<std::string, LoadedArray>> arrays;  // manifest order

  const LoadedArray* find(const std::string& name) const {
    for (const auto& [n, a] : arrays)
      if (n == name) return &a;
    return nullptr;
  }
};

inline void save_checkpoint(std::vector<NamedParam> params, int step,
                            const RunConfig& cfg, const std::string& path) {
  ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["step"] = step;
  manifest["run_config"] = run_config_to_json(cfg);
  ordered_json table = ordered_json::array();
  size_t offset = 0;  // in floats, from the start of the payload
  for (const NamedParam& p : params) {
    ordered_json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape();
    entry["dtype"] = "f32";
    entry["offset"] = offset;
    offset += p.tensor.numel();
    table.push_back(std::move(entry));
  }
  manifest["arrays"] = std::move(table);

  const std::string header = manifest.dump();
  if (header.size() > 0x7fffffffu)
    throw ManifestError("checkpoint manifest too large");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  const uint32_t len = static_cast<uint32_t>(header.size());
  char lenbuf[4];
  std::memcpy(lenbuf, &len, 4);  // little-endian host assumed project-wide
  out.write(lenbuf, 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const NamedParam& p : params)
    out.write(reinterpret_cast<const char*>(p.tensor.data()),
              static_cast<std::streamsize>(p.tensor.numel() * sizeof(float)));
  if (!out) throw DataError("short write on checkpoint: " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char lenbuf[4];
  if (!in.read(lenbuf, 4))
    throw ManifestError("checkpoint too short for manifest length: " + path);
  uint32_t len = 0;
  std::memcpy(&len, lenbuf, 4);
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len)))
    throw ManifestError("checkpoint manifest truncated: " + path);

  LoadedCheckpoint ck;
  try {
    ck.manifest = ordered_json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("checkpoint manifest is not valid JSON: " +
                        std::string(e.what()));
  }
  if (!ck.manifest.contains("format_version") ||
      ck.manifest["format_version"].get<int>() != kCheckpointVersion)
    throw ManifestError("unsupported checkpoint format version in " + path);
  ck.step = ck.manifest.at("step").get<int>();
  ck.run_config = run_config_from_json(ck.manifest.at("run_config"));

  for (const auto& entry : ck.manifest.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    LoadedArray arr;
    arr.shape = entry.at("shape").get<std::vector<int>>();
    size_t numel = 1;
    for (const int d : arr.shape) numel *= static_cast<size_t>(d);
    arr.values.resize(numel);
    if (!in.read(reinterpret_cast<char*>(arr.values.data()),
                 static_cast<std::streamsize>(numel * sizeof(float))))
      throw ManifestError("checkpoint payload truncated at array '" + name +
                          "' in " + path);
    ck.arrays.emplace_back(name, std::move(arr));
  }
  return ck;
}

// Copies loaded arrays into live parameters by name. Every live parameter
// must be present with a matching shape.
inline void apply_checkpoint(const LoadedCheckpoint& ck,
                             std::vector<NamedParam>& params) {
  for (NamedParam& p : params) {
    const LoadedArray* arr = ck.find(p.name);
    if (arr == nullptr)
      throw ManifestError("checkpoint is missing parameter '" + p.name + "'");
    if (arr->shape != p.tensor.shape())
      throw ManifestError("checkpoint parameter '" + p.name +
                          "' has mismatched shape");
    p.tensor.values() = arr->values;
  }
}

// Rebuilds the model a checkpoint was saved from: same config, same seed,
// then parameters overwritten with the stored values.
inline Model model_from_checkpoint(const LoadedCheckpoint& ck) {
  Model m = build_model(ck.run_config.model, ck.run_config.seed);
  auto params = collect_params(m);
  apply_checkpoint(ck, params);
  return m;
}

}  // namespace moelab
