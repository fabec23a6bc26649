// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "svdseg/model.hpp"

namespace svdseg {

enum class Method { kFrozen, kBiasOnly, kLora, kSvd, kFull };

Method method_from_name(const std::string& name);
std::string method_name(Method m);

// Component toggles for the svd method (ablation rows). All on by default.
struct SsamToggles {
  bool pos_embed = true;
  bool layernorm = true;
  bool tal = true;
  bool scale = true;
  bool shift = true;

  bool all_off() const { return !pos_embed && !layernorm && !tal && !scale && !shift; }
};

// Parameter accounting for one adaptation method. `total` counts the dense
// (pretrained) model so fractions are comparable across methods regardless
// of how the adapted wiring stores its factors.
struct ParamReport {
  std::string method;
  std::size_t total = 0;
  std::size_t total_formula = 0;
  std::size_t trainable = 0;
  std::size_t trainable_formula = 0;
  double fraction = 0.0;
  std::map<std::string, std::size_t> breakdown;  // trainable count per group

  nlohmann::json to_json() const;
  static ParamReport from_json(const nlohmann::json& j);
  std::string to_text() const;
};

// Rewires/flags a pretrained (densely wired) model in place:
//   frozen    - nothing trainable (zero-shot)
//   bias_only - encoder block biases + TAL
//   lora      - rank-r LoRA on the same matrix set as svd, X/Y only
//   svd       - adapt_for_ssam (scale/shift + layernorm + pos_embed + TAL)
//   full      - everything trainable
void make_baseline(PromptSegModel& model, Method method, int lora_rank, std::uint64_t seed);

// Restrict the svd trainable set to the toggled component groups.
void apply_ssam_toggles(PromptSegModel& model, const SsamToggles& toggles);

// Closed-form counts from the config alone.
std::size_t total_params_formula(const ModelConfig& cfg);
std::size_t trainable_params_formula(Method method, const ModelConfig& cfg, int lora_rank);

// Builds the model, applies the method, and reports both the closed-form and
// the enumerated counts (they must agree; tests assert it).
ParamReport count_trainable(Method method, const ModelConfig& cfg, int lora_rank = 4);

// Enumerated report for an already-wired model.
ParamReport report_params(PromptSegModel& model, const std::string& method_label,
                          std::size_t dense_total);

}  // namespace svdseg
