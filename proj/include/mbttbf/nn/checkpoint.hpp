#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbttbf/nn/model.hpp"

namespace mbttbf::nn {

// Layout:
//   8 bytes   magic "MBTTBFCK"
//   u32       version (1)
//   u64       header length N
//   N bytes   JSON header {"network": NetworkConfig, "params": [{"name", "shape", "offset"}]}
//   payload   float32 little-endian values, parameters back to back in header order;
//             "offset" counts floats from the start of the payload.
inline constexpr char kCheckpointMagic[8] = {'M', 'B', 'T', 'T', 'B', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::string serialize_checkpoint(const Model<T>& model) {
  nlohmann::json params = nlohmann::json::array();
  std::size_t offset = 0;
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.count(); ++i) {
    params.push_back({{"name", store[i].name}, {"shape", store[i].shape}, {"offset", offset}});
    offset += store[i].size();
  }
  const std::string header = nlohmann::json{{"network", to_json(model.config())}, {"params", params}}.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  auto put = [&](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  put(&kCheckpointVersion, sizeof kCheckpointVersion);
  const std::uint64_t len = header.size();
  put(&len, sizeof len);
  out += header;
  for (std::size_t i = 0; i < store.count(); ++i)
    for (T v : store[i].value) {
      const float f = static_cast<float>(v);
      put(&f, sizeof f);
    }
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
Model<T> deserialize_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  const std::size_t fixed = sizeof kCheckpointMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < fixed || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError(origin + ": not a checkpoint");
  std::uint32_t version;
  std::uint64_t len;
  std::memcpy(&version, bytes.data() + 8, sizeof version);
  std::memcpy(&len, bytes.data() + 12, sizeof len);
  if (version != kCheckpointVersion) throw FormatError(origin + ": unsupported version " + std::to_string(version));
  if (bytes.size() < fixed + len) throw FormatError(origin + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(fixed, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": bad header: " + e.what());
  }
  Model<T> model(network_config_from_json(header.at("network")));
  auto& store = model.params();

  // Key diff against the graph the config describes.
  std::vector<std::string> stored;
  for (const auto& p : header.at("params")) stored.push_back(p.at("name").get<std::string>());
  std::vector<std::string> missing, unexpected;
  for (const auto& n : store.names())
    if (std::find(stored.begin(), stored.end(), n) == stored.end()) missing.push_back(n);
  for (const auto& n : stored)
    if (!store.contains(n)) unexpected.push_back(n);
  if (!missing.empty() || !unexpected.empty()) {
    std::ostringstream msg;
    msg << origin << ": parameter keys do not match the network config;";
    for (const auto& n : missing) msg << " -" << n;
    for (const auto& n : unexpected) msg << " +" << n;
    throw FormatError(msg.str());
  }

  const std::size_t payload = fixed + len;
  const std::size_t total = store.total_size();
  if (bytes.size() != payload + total * sizeof(float))
    throw FormatError(origin + ": payload size does not match parameter shapes");
  for (const auto& p : header.at("params")) {
    auto& dst = store.get(p.at("name").get<std::string>());
    if (p.at("shape").get<std::vector<int>>() != dst.shape) throw FormatError(origin + ": shape mismatch for " + dst.name);
    const std::size_t off = p.at("offset").get<std::size_t>();
    if (off + dst.size() > total) throw FormatError(origin + ": offset out of range for " + dst.name);
    for (std::size_t k = 0; k < dst.size(); ++k) {
      float f;
      std::memcpy(&f, bytes.data() + payload + (off + k) * sizeof f, sizeof f);
      dst.value[k] = static_cast<T>(f);
    }
  }
  return model;
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint<T>(ss.str(), path.string());
}

}  // namespace mbttbf::nn
