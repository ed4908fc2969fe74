#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "derm/error.hpp"
#include "derm/hash.hpp"
#include "derm/model.hpp"

namespace derm {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian");

namespace {

constexpr char kMagic[8] = {'D', 'E', 'R', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct Raw {
  json header;
  std::vector<char> payload;
};

Raw read_raw(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError(path.string() + " is not a checkpoint file");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in) throw CheckpointError(path.string() + ": truncated header");
  if (version != kVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  if (header_len > (1u << 30)) throw CheckpointError(path.string() + ": corrupt header length");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError(path.string() + ": truncated header");
  Raw raw;
  try {
    raw.header = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": unreadable header: " + e.what());
  }
  raw.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return raw;
}

}  // namespace

void save_checkpoint(const Model& model, const fs::path& path) {
  json tensors = json::array();
  std::vector<char> payload;
  for (const nn::Parameter* p : model.parameters()) {
    const std::size_t bytes = p->value.size() * sizeof(float);
    tensors.push_back({{"name", p->name},
                       {"shape", p->value.shape()},
                       {"offset", payload.size()},
                       {"buffer", p->is_buffer}});
    const auto* src = reinterpret_cast<const char*>(p->value.data());
    payload.insert(payload.end(), src, src + bytes);
  }
  json header = {{"spec", to_json(model.spec())},
                 {"tensors", tensors},
                 {"data_sha256", sha256_hex(std::as_bytes(std::span(payload)))}};
  const std::string text = header.dump();
  const std::uint64_t header_len = text.size();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

ModelSpec read_checkpoint_spec(const fs::path& path) {
  return model_spec_from_json(read_raw(path).header.at("spec"));
}

Model load_checkpoint(const fs::path& path) {
  Raw raw = read_raw(path);
  if (!raw.header.contains("spec") || !raw.header.contains("tensors"))
    throw CheckpointError(path.string() + ": header lacks spec or tensor index");
  const std::string digest = sha256_hex(std::as_bytes(std::span(raw.payload)));
  if (digest != raw.header.value("data_sha256", std::string{}))
    throw CheckpointError(path.string() + ": payload digest mismatch (file corrupt or truncated)");

  ModelSpec spec = model_spec_from_json(raw.header.at("spec"));
  spec.pretrained = false;  // weights come from this file
  Model model = [&] {
    try {
      return build_model(spec);
    } catch (const ModelError& e) {
      throw CheckpointError(path.string() + ": " + e.what());
    }
  }();
  // Keep the stored spec verbatim (pretrained flag included).
  Model restored(model_spec_from_json(raw.header.at("spec")), std::move(model.backbone()), std::move(model.head()));

  std::map<std::string, nn::Parameter*> by_name;
  for (nn::Parameter* p : restored.parameters()) by_name[p->name] = p;
  std::size_t seen = 0;
  for (const json& t : raw.header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError(path.string() + ": unexpected tensor " + name);
    nn::Parameter* p = it->second;
    const Shape shape = t.at("shape").get<Shape>();
    if (shape != p->value.shape())
      throw CheckpointError(path.string() + ": tensor " + name + " has shape " + to_string(shape) + ", model expects " +
                            to_string(p->value.shape()));
    const std::size_t offset = t.at("offset").get<std::size_t>();
    const std::size_t bytes = p->value.size() * sizeof(float);
    if (offset + bytes > raw.payload.size()) throw CheckpointError(path.string() + ": tensor " + name + " out of bounds");
    std::memcpy(p->value.data(), raw.payload.data() + offset, bytes);
    ++seen;
  }
  if (seen != by_name.size()) throw CheckpointError(path.string() + ": checkpoint is missing tensors");
  if (!restored.spec().all_layers_trainable)
    for (nn::Parameter* p : restored.parameters())
      if (p->name.rfind("backbone.", 0) == 0) p->trainable = false;
  restored.reseed(restored.spec().init_seed);
  return restored;
}

Model load_checkpoint(const fs::path& path, const ModelSpec& expected) {
  const ModelSpec stored = read_checkpoint_spec(path);
  auto mismatch = [&](const std::string& what, const std::string& a, const std::string& b) {
    throw CheckpointError(path.string() + ": " + what + " is " + a + " in the checkpoint but " + b + " was requested");
  };
  if (stored.backbone != expected.backbone)
    mismatch("backbone", std::string(to_string(stored.backbone)), std::string(to_string(expected.backbone)));
  if (stored.num_classes != expected.num_classes)
    mismatch("num_classes", std::to_string(stored.num_classes), std::to_string(expected.num_classes));
  if (stored.use_gap != expected.use_gap)
    mismatch("use_gap", stored.use_gap ? "true" : "false", expected.use_gap ? "true" : "false");
  if (stored.hidden_width != expected.hidden_width)
    mismatch("hidden_width", std::to_string(stored.hidden_width), std::to_string(expected.hidden_width));
  return load_checkpoint(path);
}

}  // namespace derm
