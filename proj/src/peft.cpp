// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/peft.hpp"

#include <algorithm>
#include <sstream>

namespace svdseg {

Method method_from_name(const std::string& name) {
  if (name == "frozen") return Method::kFrozen;
  if (name == "bias_only") return Method::kBiasOnly;
  if (name == "lora") return Method::kLora;
  if (name == "svd") return Method::kSvd;
  if (name == "full") return Method::kFull;
  throw ConfigError("unknown method: " + name +
                    " (expected frozen|bias_only|lora|svd|full)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kFrozen: return "frozen";
    case Method::kBiasOnly: return "bias_only";
    case Method::kLora: return "lora";
    case Method::kSvd: return "svd";
    case Method::kFull: return "full";
  }
  return "frozen";
}

nlohmann::json ParamReport::to_json() const {
  return nlohmann::json{{"method", method},
                        {"total", total},
                        {"total_formula", total_formula},
                        {"trainable", trainable},
                        {"trainable_formula", trainable_formula},
                        {"fraction", fraction},
                        {"breakdown", breakdown}};
}

ParamReport ParamReport::from_json(const nlohmann::json& j) {
  ParamReport r;
  r.method = j.at("method").get<std::string>();
  r.total = j.at("total").get<std::size_t>();
  r.total_formula = j.at("total_formula").get<std::size_t>();
  r.trainable = j.at("trainable").get<std::size_t>();
  r.trainable_formula = j.at("trainable_formula").get<std::size_t>();
  r.fraction = j.at("fraction").get<double>();
  r.breakdown = j.at("breakdown").get<std::map<std::string, std::size_t>>();
  return r;
}

std::string ParamReport::to_text() const {
  std::ostringstream os;
  os << "method " << method << ": trainable " << trainable << " of " << total << " ("
     << fraction * 100.0 << "%)\n";
  for (const auto& [group, count] : breakdown) {
    os << "  " << group << ": " << count << "\n";
  }
  return os.str();
}

void make_baseline(PromptSegModel& model, Method method, int lora_rank, std::uint64_t seed) {
  if (model.wiring() != Wiring::kDense) {
    throw ConfigError("make_baseline: expects a pretrained, densely wired model");
  }
  switch (method) {
    case Method::kFrozen:
      set_all_trainable(model, false);
      break;
    case Method::kBiasOnly:
      set_all_trainable(model, false);
      set_group_trainable(model, kGroupEncoderBias, true);
      set_group_trainable(model, kGroupTal, true);
      break;
    case Method::kLora:
      rewire_lora(model, lora_rank, seed);
      break;
    case Method::kSvd:
      adapt_for_ssam(model, model.config().image_size);
      break;
    case Method::kFull:
      set_all_trainable(model, true);
      break;
  }
}

void apply_ssam_toggles(PromptSegModel& model, const SsamToggles& toggles) {
  if (model.wiring() != Wiring::kSvd) {
    throw ConfigError("apply_ssam_toggles: model is not svd-adapted");
  }
  set_group_trainable(model, kGroupPosEmbed, toggles.pos_embed);
  set_group_trainable(model, kGroupLayerNorm, toggles.layernorm);
  set_group_trainable(model, kGroupTal, toggles.tal);
  set_group_trainable(model, kGroupAdapterScale, toggles.scale);
  set_group_trainable(model, kGroupAdapterShift, toggles.shift);
}

// ---------------------------------------------------------------------------
// Closed-form accounting
// ---------------------------------------------------------------------------

namespace {
struct MatDims {
  std::size_t out, in;
};

std::vector<MatDims> adapted_matrices(const ModelConfig& cfg) {
  std::vector<MatDims> mats;
  const std::size_t d = static_cast<std::size_t>(cfg.dim);
  const std::size_t h = static_cast<std::size_t>(cfg.mlp_hidden);
  for (int b = 0; b < cfg.blocks; ++b) {
    mats.push_back({3 * d, d});  // fused qkv
    if (cfg.adapt_out_proj) mats.push_back({d, d});
    mats.push_back({h, d});
    mats.push_back({d, h});
  }
  return mats;
}
}  // namespace

std::size_t total_params_formula(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.dim);
  const std::size_t h = static_cast<std::size_t>(cfg.mlp_hidden);
  const std::size_t e = static_cast<std::size_t>(cfg.text_dim);
  const std::size_t g2 = static_cast<std::size_t>(cfg.grid()) * cfg.grid();
  const std::size_t p2c = static_cast<std::size_t>(cfg.patch) * cfg.patch * cfg.channels;
  const std::size_t m = static_cast<std::size_t>(cfg.dec_mlp);
  const std::size_t u1 = static_cast<std::size_t>(cfg.up_mid);
  const std::size_t u2 = static_cast<std::size_t>(cfg.up_out);

  std::size_t n = 0;
  n += d * p2c + d;  // patch embed
  n += g2 * d;       // positional grid
  // encoder blocks: qkv, proj, mlp pair, two norms
  n += static_cast<std::size_t>(cfg.blocks) *
       ((3 * d * d + 3 * d) + (d * d + d) + (h * d + h) + (d * h + d) + 4 * d);
  n += d * e + d;  // prompt encoder
  n += e * e + e;  // TAL
  // decoder: mask token, layers (self/t2i/i2t attention, mlp, 4 norms)
  n += d;
  n += static_cast<std::size_t>(cfg.dec_layers) *
       (3 * 4 * (d * d + d) + (m * d + m + d * m + d) + 4 * 2 * d);
  n += 2 * d;             // final norm
  n += d * d + d + u2 * d + u2;  // hypernet
  n += 4 * d * u1 + u1;   // deconv 1
  n += 4 * u1 * u2 + u2;  // deconv 2
  return n;
}

std::size_t trainable_params_formula(Method method, const ModelConfig& cfg, int lora_rank) {
  const std::size_t d = static_cast<std::size_t>(cfg.dim);
  const std::size_t h = static_cast<std::size_t>(cfg.mlp_hidden);
  const std::size_t e = static_cast<std::size_t>(cfg.text_dim);
  const std::size_t g2 = static_cast<std::size_t>(cfg.grid()) * cfg.grid();
  switch (method) {
    case Method::kFrozen:
      return 0;
    case Method::kBiasOnly: {
      // every encoder block bias (qkv, proj, both mlp maps) + TAL
      std::size_t n = static_cast<std::size_t>(cfg.blocks) * (3 * d + d + h + d);
      return n + e * e + e;
    }
    case Method::kLora: {
      std::size_t n = 0;
      for (const MatDims& mdim : adapted_matrices(cfg)) {
        n += static_cast<std::size_t>(lora_rank) * (mdim.out + mdim.in);
      }
      return n;
    }
    case Method::kSvd: {
      std::size_t n = 0;
      for (const MatDims& mdim : adapted_matrices(cfg)) {
        n += 2 * std::min(mdim.out, mdim.in);
      }
      n += static_cast<std::size_t>(cfg.blocks) * 4 * d;  // encoder layernorms
      n += g2 * d;                                        // positional grid
      n += e * e + e;                                     // TAL
      return n;
    }
    case Method::kFull:
      return total_params_formula(cfg);
  }
  return 0;
}

ParamReport report_params(PromptSegModel& model, const std::string& method_label,
                          std::size_t dense_total) {
  ParamReport r;
  r.method = method_label;
  r.total = dense_total;
  for (const ParamRef& p : model.params()) {
    if (p.trainable && *p.trainable) {
      r.trainable += static_cast<std::size_t>(p.size());
      r.breakdown[p.group] += static_cast<std::size_t>(p.size());
    }
  }
  r.fraction = r.total > 0 ? static_cast<double>(r.trainable) / static_cast<double>(r.total) : 0.0;
  return r;
}

ParamReport count_trainable(Method method, const ModelConfig& cfg, int lora_rank) {
  PromptSegModel model = build_pretrained(cfg, 7);
  const std::size_t dense_total = total_count(model.params());
  make_baseline(model, method, lora_rank, 7);
  ParamReport r = report_params(model, method_name(method), dense_total);
  r.total_formula = total_params_formula(cfg);
  r.trainable_formula = trainable_params_formula(method, cfg, lora_rank);
  return r;
}

}  // namespace svdseg
