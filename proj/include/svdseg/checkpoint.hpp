// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "svdseg/model.hpp"

namespace svdseg {

// Single-file checkpoint container: magic + version, a JSON header carrying
// the model config / wiring and an array directory (name, shape, group,
// trainable flag), then raw little-endian float64 array data in directory
// order (column-major within each array). Stable and documented; bitwise
// comparisons of arrays are meaningful across save/load.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
  std::string name;
  std::string group;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool trainable = false;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json meta;  // config record: model config, wiring, lora rank
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// In-memory snapshot of every model array (used for checkpointing and for
// before/after training audits).
Checkpoint snapshot_model(PromptSegModel& model);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

// Rebuilds a model from a checkpoint: constructs the wiring recorded in the
// header, then fills every array by name (strict: unknown or missing names,
// or shape mismatches, are errors) and restores trainable flags.
PromptSegModel restore_model(const Checkpoint& ckpt);

// Names of non-trainable arrays in `adapted` that exist in `reference` but
// are not bit-identical to it. Empty result = audit passed. Arrays absent
// from the reference (e.g. SVD factors vs. a dense checkpoint) are ignored;
// audit those against a post-wiring snapshot instead.
std::vector<std::string> audit_frozen_bitwise(const Checkpoint& reference,
                                              const Checkpoint& adapted);

}  // namespace svdseg
