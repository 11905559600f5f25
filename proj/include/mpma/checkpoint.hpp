#pragma once

// Versioned checkpoint container: magic "MPMA1", a little-endian u64 giving
// the length of a JSON manifest (run configuration, step counters, array
// table), then the raw array payloads in manifest order. Round-trips are
// bit-exact; precision is recorded per array and must match the loader's.

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpma/tensor.hpp"

namespace mpma {

inline constexpr char kCheckpointMagic[5] = {'M', 'P', 'M', 'A', '1'};

struct CheckpointMeta {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
};

template <class T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else static_assert(sizeof(T) == 0, "unsupported checkpoint scalar type");
}

template <class T>
void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& config,
                     const CheckpointMeta& meta,
                     const std::map<std::string, Array<T>>& arrays) {
  nlohmann::json manifest;
  manifest["config"] = config;
  manifest["meta"] = {{"step", meta.step}, {"epoch", meta.epoch}};
  auto& list = manifest["arrays"] = nlohmann::json::array();
  for (const auto& [name, arr] : arrays)
    list.push_back({{"name", name}, {"shape", arr.shape}, {"dtype", dtype_name<T>()}});
  const std::string text = manifest.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t len = text.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(text.data(), std::streamsize(text.size()));
  for (const auto& [name, arr] : arrays)
    f.write(reinterpret_cast<const char*>(arr.data->data()),
            std::streamsize(arr.numel() * sizeof(T)));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

template <class T>
struct Checkpoint {
  std::map<std::string, std::string> config;
  CheckpointMeta meta;
  std::map<std::string, Array<T>> arrays;
};

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic)];
  f.read(magic, sizeof(magic));
  if (!f || std::string(magic, sizeof(magic)) != std::string(kCheckpointMagic, 5))
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  f.read(text.data(), std::streamsize(len));
  if (!f) throw std::runtime_error("truncated checkpoint manifest: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  Checkpoint<T> out;
  out.config = manifest.at("config").get<std::map<std::string, std::string>>();
  out.meta.step = manifest.at("meta").at("step").get<std::uint64_t>();
  out.meta.epoch = manifest.at("meta").at("epoch").get<std::uint64_t>();
  for (const auto& entry : manifest.at("arrays")) {
    const auto name = entry.at("name").get<std::string>();
    const auto dtype = entry.at("dtype").get<std::string>();
    if (dtype != dtype_name<T>())
      throw std::runtime_error("checkpoint array " + name + " has dtype " + dtype +
                               ", expected " + dtype_name<T>());
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<T> data(shape_numel(shape));
    f.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * sizeof(T)));
    if (!f) throw std::runtime_error("truncated checkpoint payload at array " + name);
    out.arrays.emplace(name, Array<T>(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace mpma
