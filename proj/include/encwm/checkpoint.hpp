#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "encwm/downstream.hpp"
#include "encwm/encoder.hpp"

namespace encwm {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// File layout:
//   "ENCWM1" | u32 LE version | u64 LE manifest length | JSON manifest |
//   little-endian float32 payloads, one per manifest tensor, in order.
namespace checkpoint {

inline constexpr std::array<char, 6> kMagic{'E', 'N', 'C', 'W', 'M', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 6 + 4 + 8;

struct Meta {
  std::string kind;  // "encoder" or "classifier"
  nlohmann::json provenance = nlohmann::json::object();
  std::string config_hash;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return static_cast<T>(v);
}

inline nlohmann::json arch_json(const EncoderArch& a) {
  return {{"input_dim", a.input_dim},
          {"hidden", a.hidden},
          {"feature_dim", a.feature_dim},
          {"projection_dim", a.projection_dim}};
}

inline EncoderArch arch_from_json(const nlohmann::json& j) {
  EncoderArch a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  a.feature_dim = j.at("feature_dim").get<std::size_t>();
  a.projection_dim = j.at("projection_dim").get<std::size_t>();
  return a;
}

using Named = std::vector<std::pair<std::string, const Tensor*>>;

inline void write_file(const std::string& path, nlohmann::json manifest, const Named& tensors) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : tensors) entries.push_back({{"name", name}, {"shape", t->shape}});
  manifest["tensors"] = entries;
  const std::string text = manifest.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(bytes, kVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes += text;
  for (const auto& entry : tensors) {
    for (float f : entry.second->data) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_le<std::uint32_t>(bytes, u);
    }
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

struct Loaded {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline Loaded read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 6);
  if (version != kVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kVersion) + ")");
  }
  const auto mlen = get_le<std::uint64_t>(bytes.data() + 10);
  if (mlen > bytes.size() - kHeaderBytes) {
    throw CheckpointError("checkpoint manifest length " + std::to_string(mlen) + " exceeds file size");
  }
  Loaded out;
  try {
    out.manifest = nlohmann::json::parse(bytes.begin() + kHeaderBytes,
                                         bytes.begin() + long(kHeaderBytes + mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  std::size_t expected = 0;
  std::vector<std::pair<std::string, Shape>> specs;
  try {
    for (const auto& e : out.manifest.at("tensors")) {
      specs.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
      expected += 4 * shape_numel(specs.back().second);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest has a malformed tensor list: ") + e.what());
  }
  const std::size_t payload = bytes.size() - kHeaderBytes - mlen;
  if (payload != expected) {
    throw CheckpointError("checkpoint payload length mismatch: manifest describes " +
                          std::to_string(expected) + " bytes, file holds " + std::to_string(payload));
  }
  const unsigned char* p = bytes.data() + kHeaderBytes + mlen;
  for (auto& [name, shape] : specs) {
    Tensor t(shape);
    for (auto& v : t.data) {
      const auto u = get_le<std::uint32_t>(p);
      std::memcpy(&v, &u, 4);
      p += 4;
    }
    out.tensors.emplace_back(name, std::move(t));
  }
  return out;
}

// Copies loaded tensors into `targets`, checking names and shapes.
inline void assign(const Loaded& loaded, const std::vector<std::pair<std::string, Tensor*>>& targets) {
  if (loaded.tensors.size() != targets.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(loaded.tensors.size()) +
                          " tensors, architecture needs " + std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& [name, t] = loaded.tensors[i];
    if (name != targets[i].first) {
      throw CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" + name +
                            "', expected '" + targets[i].first + "'");
    }
    if (t.shape != targets[i].second->shape) {
      throw CheckpointError("shape mismatch for tensor '" + name + "': manifest " + shape_str(t.shape) +
                            ", architecture " + shape_str(targets[i].second->shape));
    }
  }
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i].second->data = loaded.tensors[i].second.data;
}

inline Meta meta_of(const nlohmann::json& m) {
  Meta meta;
  meta.kind = m.at("kind").get<std::string>();
  if (m.contains("provenance")) meta.provenance = m.at("provenance");
  if (m.contains("config_hash")) meta.config_hash = m.at("config_hash").get<std::string>();
  return meta;
}

inline std::vector<std::pair<std::string, Tensor*>> mutable_params(EncoderModel& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : m.named_parameters()) out.emplace_back(name, const_cast<Tensor*>(t));
  return out;
}

}  // namespace detail

inline void save(const EncoderModel& model, const std::string& path, const Meta& meta = {}) {
  nlohmann::json m{{"kind", "encoder"},
                   {"architecture", detail::arch_json(model.arch())},
                   {"provenance", meta.provenance},
                   {"config_hash", meta.config_hash}};
  detail::write_file(path, std::move(m), model.named_parameters());
}

inline void save(const Classifier& clf, const std::string& path, const Meta& meta = {}) {
  auto arch = detail::arch_json(clf.encoder.arch());
  arch["class_count"] = clf.class_count();
  nlohmann::json prov = meta.provenance;
  if (!clf.provenance.empty()) prov["lineage"] = clf.provenance;
  nlohmann::json m{{"kind", "classifier"},
                   {"architecture", arch},
                   {"provenance", prov},
                   {"config_hash", meta.config_hash}};
  detail::write_file(path, std::move(m), clf.named_parameters());
}

inline EncoderModel load_encoder(const std::string& path, Meta* meta = nullptr) {
  auto loaded = detail::read_file(path);
  try {
    if (loaded.manifest.at("kind") != "encoder") {
      throw CheckpointError("'" + path + "' holds a " + loaded.manifest.at("kind").dump() +
                            ", not an encoder");
    }
    EncoderModel model(detail::arch_from_json(loaded.manifest.at("architecture")));
    detail::assign(loaded, detail::mutable_params(model));
    if (meta) *meta = detail::meta_of(loaded.manifest);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest in '" + path + "': " + e.what());
  }
}

inline Classifier load_classifier(const std::string& path, Meta* meta = nullptr) {
  auto loaded = detail::read_file(path);
  try {
    if (loaded.manifest.at("kind") != "classifier") {
      throw CheckpointError("'" + path + "' holds a " + loaded.manifest.at("kind").dump() +
                            ", not a classifier");
    }
    const auto& a = loaded.manifest.at("architecture");
    Classifier clf;
    clf.encoder = EncoderModel(detail::arch_from_json(a));
    clf.head = Linear(clf.encoder.feature_dim(), a.at("class_count").get<std::size_t>());
    auto targets = detail::mutable_params(clf.encoder);
    targets.emplace_back("head.weight", &clf.head.weight);
    targets.emplace_back("head.bias", &clf.head.bias);
    detail::assign(loaded, targets);
    clf.encoder.set_requires_grad(false);
    clf.head.set_requires_grad(false);
    const auto& prov = loaded.manifest.value("provenance", nlohmann::json::object());
    clf.provenance = prov.value("lineage", std::string{});
    if (meta) *meta = detail::meta_of(loaded.manifest);
    return clf;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest in '" + path + "': " + e.what());
  }
}

}  // namespace checkpoint

inline void save_checkpoint(const EncoderModel& m, const std::string& path,
                            const checkpoint::Meta& meta = {}) {
  checkpoint::save(m, path, meta);
}

inline void save_checkpoint(const Classifier& c, const std::string& path,
                            const checkpoint::Meta& meta = {}) {
  checkpoint::save(c, path, meta);
}

}  // namespace encwm
