// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/lora.hpp"

namespace svdseg {

LoraAdapterState make_lora(const Matrix& w, const std::optional<Vector>& bias, int rank,
                           std::uint64_t seed) {
  if (rank < 1) throw ConfigError("make_lora: rank must be >= 1");
  if (rank > std::min(w.rows(), w.cols())) {
    throw ConfigError("make_lora: rank exceeds min(D, K)");
  }
  if (bias && bias->size() != w.rows()) {
    throw ShapeError("make_lora: bias length does not match output dim");
  }

  LoraAdapterState state;
  state.W = w;
  if (bias) state.bias = *bias;
  state.X = Matrix::Zero(w.rows(), rank);
  state.Y.resize(rank, w.cols());
  std::mt19937_64 rng = make_rng(seed, "lora_init");
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(w.cols())));
  for (Eigen::Index i = 0; i < state.Y.rows(); ++i) {
    for (Eigen::Index j = 0; j < state.Y.cols(); ++j) state.Y(i, j) = dist(rng);
  }
  return state;
}

Vector lora_forward(const LoraAdapterState& state, const Vector& x) {
  if (x.size() != state.in_dim()) {
    throw ShapeError("lora_forward: input length does not match weight columns");
  }
  Vector y = state.W * x + state.X * (state.Y * x);
  if (state.has_bias()) y += state.bias;
  return y;
}

Matrix lora_forward_rows(const LoraAdapterState& state, const Matrix& x) {
  if (x.cols() != state.in_dim()) {
    throw ShapeError("lora_forward_rows: input width does not match weight columns");
  }
  Matrix y = x * state.W.transpose() + (x * state.Y.transpose()) * state.X.transpose();
  if (state.has_bias()) y.rowwise() += state.bias.transpose();
  return y;
}

Eigen::Index lora_trainable_count(const LoraAdapterState& state) {
  return state.rank() * (state.out_dim() + state.in_dim());
}

}  // namespace svdseg
