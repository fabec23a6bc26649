// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <utility>

#include "svdseg/common.hpp"

namespace svdseg {

// Reparametrizes a frozen weight matrix W = U diag(sigma) Vt through a
// trainable scale/shift of its singular values:
//
//   W' = U diag(relu(scale * sigma + shift)) Vt
//
// U, sigma, Vt and the layer bias stay frozen; only `scale` (init 1) and
// `shift` (init 0) are learned, 2*min(D,K) scalars per matrix. The ReLU
// keeps the effective spectrum non-negative by construction.
struct SvdAdapterState {
  Matrix U;      // D x R, frozen left singular vectors
  Vector sigma;  // R, frozen singular values, non-increasing, >= 0
  Matrix Vt;     // R x K, frozen right singular vectors (transposed)
  Vector scale;  // R, trainable diagonal of A
  Vector shift;  // R, trainable diagonal of B
  Vector bias;   // D, frozen layer bias; empty when the layer has none

  Eigen::Index out_dim() const { return U.rows(); }
  Eigen::Index in_dim() const { return Vt.cols(); }
  Eigen::Index rank() const { return sigma.size(); }
  bool has_bias() const { return bias.size() > 0; }
};

// Thin SVD of W with scale/shift at the identity (scale=1, shift=0), so the
// adapter is transparent until trained. `id` tags error messages.
// Throws NumericalError on non-finite input or decomposition failure.
SvdAdapterState decompose(const Matrix& w, const std::optional<Vector>& bias,
                          const std::string& id = "weight");

// relu(scale * sigma + shift), the adapted singular values.
Vector effective_sigma(const SvdAdapterState& state);

// U diag(effective_sigma) Vt, the adapted weight. Pure; never called on the
// training path (forward works factor-by-factor instead).
Matrix effective_weight(const SvdAdapterState& state);

// y = W' x + bias for a single input vector of length K.
Vector adapter_forward(const SvdAdapterState& state, const Vector& x);

// Row-major batch: each row of `x` is one input, result rows are outputs.
// Cost is O(R(D+K)) per row; W' is never materialized.
Matrix adapter_forward_rows(const SvdAdapterState& state, const Matrix& x);

// Export (W', bias) so the adapted layer can run without adapter machinery.
std::pair<Matrix, std::optional<Vector>> merge(const SvdAdapterState& state);

// Number of trainable scalars: 2 * min(D, K).
Eigen::Index adapter_trainable_count(const SvdAdapterState& state);

}  // namespace svdseg
