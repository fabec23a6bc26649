// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace svdseg {

// Semantic parameter groups. Adaptation methods and ablation toggles select
// what trains by group, never by array name.
inline constexpr const char* kGroupPatchEmbed = "patch_embed";
inline constexpr const char* kGroupPosEmbed = "pos_embed";
inline constexpr const char* kGroupEncoderWeight = "encoder_weight";
inline constexpr const char* kGroupEncoderBias = "encoder_bias";
inline constexpr const char* kGroupLayerNorm = "layernorm";  // encoder norms only
inline constexpr const char* kGroupAdapterScale = "adapter_scale";
inline constexpr const char* kGroupAdapterShift = "adapter_shift";
inline constexpr const char* kGroupAdapterFrozen = "adapter_frozen";
inline constexpr const char* kGroupAdapterBias = "adapter_bias";
inline constexpr const char* kGroupLora = "lora";
inline constexpr const char* kGroupTal = "tal";
inline constexpr const char* kGroupPromptEncoder = "prompt_encoder";
inline constexpr const char* kGroupDecoder = "decoder";

}  // namespace svdseg
