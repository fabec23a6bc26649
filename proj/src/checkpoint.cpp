// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

namespace svdseg {

namespace {
constexpr char kMagic[8] = {'S', 'S', 'E', 'G', 'C', 'K', 'P', '1'};
}

const CheckpointArray* Checkpoint::find(const std::string& name) const {
  for (const CheckpointArray& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"image_size", cfg.image_size},
                        {"patch", cfg.patch},
                        {"channels", cfg.channels},
                        {"dim", cfg.dim},
                        {"heads", cfg.heads},
                        {"blocks", cfg.blocks},
                        {"mlp_hidden", cfg.mlp_hidden},
                        {"text_dim", cfg.text_dim},
                        {"dec_layers", cfg.dec_layers},
                        {"dec_mlp", cfg.dec_mlp},
                        {"up_mid", cfg.up_mid},
                        {"up_out", cfg.up_out},
                        {"adapt_out_proj", cfg.adapt_out_proj}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.image_size = j.at("image_size").get<int>();
  cfg.patch = j.at("patch").get<int>();
  cfg.channels = j.at("channels").get<int>();
  cfg.dim = j.at("dim").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.blocks = j.at("blocks").get<int>();
  cfg.mlp_hidden = j.at("mlp_hidden").get<int>();
  cfg.text_dim = j.at("text_dim").get<int>();
  cfg.dec_layers = j.at("dec_layers").get<int>();
  cfg.dec_mlp = j.at("dec_mlp").get<int>();
  cfg.up_mid = j.at("up_mid").get<int>();
  cfg.up_out = j.at("up_out").get<int>();
  cfg.adapt_out_proj = j.at("adapt_out_proj").get<bool>();
  cfg.validate();
  return cfg;
}

Checkpoint snapshot_model(PromptSegModel& model) {
  Checkpoint ckpt;
  ckpt.meta = {{"format_version", kCheckpointVersion},
               {"model", model_config_to_json(model.config())},
               {"wiring", wiring_name(model.wiring())},
               {"lora_rank", model.lora_rank()}};
  for (const ParamRef& p : model.params()) {
    CheckpointArray a;
    a.name = p.name;
    a.group = p.group;
    a.rows = p.rows;
    a.cols = p.cols;
    a.trainable = p.trainable && *p.trainable;
    a.data.assign(p.value, p.value + p.size());
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  nlohmann::json header = ckpt.meta;
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const CheckpointArray& a : ckpt.arrays) {
    dir.push_back({{"name", a.name},
                   {"group", a.group},
                   {"rows", a.rows},
                   {"cols", a.cols},
                   {"trainable", a.trainable},
                   {"offset", offset}});
    offset += a.data.size() * sizeof(double);
  }
  header["arrays"] = std::move(dir);
  const std::string header_str = header.dump();

  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + file.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t header_len = header_str.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const CheckpointArray& a : ckpt.arrays) {
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed while writing checkpoint: " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + file.string());
  }
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated checkpoint header: " + file.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + file.string() + ": " + e.what());
  }
  if (header.value("format_version", 0u) != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version in " + file.string());
  }

  Checkpoint ckpt;
  ckpt.meta = header;
  ckpt.meta.erase("arrays");
  for (const nlohmann::json& d : header.at("arrays")) {
    CheckpointArray a;
    a.name = d.at("name").get<std::string>();
    a.group = d.at("group").get<std::string>();
    a.rows = d.at("rows").get<Eigen::Index>();
    a.cols = d.at("cols").get<Eigen::Index>();
    a.trainable = d.at("trainable").get<bool>();
    a.data.resize(static_cast<std::size_t>(a.rows) * static_cast<std::size_t>(a.cols));
    ckpt.arrays.push_back(std::move(a));
  }
  for (CheckpointArray& a : ckpt.arrays) {
    in.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!in) throw DataError("truncated checkpoint data: " + file.string());
  return ckpt;
}

PromptSegModel restore_model(const Checkpoint& ckpt) {
  const ModelConfig cfg = model_config_from_json(ckpt.meta.at("model"));
  const Wiring wiring = wiring_from_name(ckpt.meta.at("wiring").get<std::string>());
  PromptSegModel model = build_pretrained(cfg, 0);
  if (wiring == Wiring::kSvd) {
    adapt_for_ssam(model, cfg.image_size);
  } else if (wiring == Wiring::kLora) {
    rewire_lora(model, ckpt.meta.at("lora_rank").get<int>(), 0);
  }

  std::unordered_map<std::string, ParamRef> refs;
  for (const ParamRef& p : model.params()) refs.emplace(p.name, p);
  if (refs.size() != ckpt.arrays.size()) {
    throw DataError("checkpoint array count does not match the model (" +
                    std::to_string(ckpt.arrays.size()) + " vs " + std::to_string(refs.size()) + ")");
  }
  for (const CheckpointArray& a : ckpt.arrays) {
    auto it = refs.find(a.name);
    if (it == refs.end()) throw DataError("checkpoint has unknown array: " + a.name);
    const ParamRef& p = it->second;
    if (p.rows != a.rows || p.cols != a.cols) {
      throw DataError("checkpoint array shape mismatch for " + a.name);
    }
    std::memcpy(p.value, a.data.data(), a.data.size() * sizeof(double));
    if (p.trainable) *p.trainable = a.trainable;
  }
  return model;
}

std::vector<std::string> audit_frozen_bitwise(const Checkpoint& reference,
                                              const Checkpoint& adapted) {
  std::vector<std::string> violations;
  for (const CheckpointArray& a : adapted.arrays) {
    if (a.trainable) continue;
    const CheckpointArray* ref = reference.find(a.name);
    if (!ref) continue;
    if (ref->rows != a.rows || ref->cols != a.cols ||
        std::memcmp(ref->data.data(), a.data.data(), a.data.size() * sizeof(double)) != 0) {
      violations.push_back(a.name);
    }
  }
  return violations;
}

}  // namespace svdseg
