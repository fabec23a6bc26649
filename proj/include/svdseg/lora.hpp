// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

#include "svdseg/common.hpp"

namespace svdseg {

// Low-rank adaptation baseline: W stays frozen and a trainable rank-r update
// X*Y is added, W' = W + X Y. Trainable scalars: r*(D+K). X starts at zero so
// the layer is transparent at init; Y starts small random so X receives
// gradient from the first step.
struct LoraAdapterState {
  Matrix W;     // D x K, frozen
  Vector bias;  // D, frozen; empty when absent
  Matrix X;     // D x r, trainable, zero-init
  Matrix Y;     // r x K, trainable

  Eigen::Index out_dim() const { return W.rows(); }
  Eigen::Index in_dim() const { return W.cols(); }
  Eigen::Index rank() const { return X.cols(); }
  bool has_bias() const { return bias.size() > 0; }
};

LoraAdapterState make_lora(const Matrix& w, const std::optional<Vector>& bias, int rank,
                           std::uint64_t seed);

// y = (W + X Y) x + bias.
Vector lora_forward(const LoraAdapterState& state, const Vector& x);
Matrix lora_forward_rows(const LoraAdapterState& state, const Matrix& x);

// r * (D + K)
Eigen::Index lora_trainable_count(const LoraAdapterState& state);

}  // namespace svdseg
