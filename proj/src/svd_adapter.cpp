// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/svd_adapter.hpp"

#include <Eigen/SVD>

namespace svdseg {

SvdAdapterState decompose(const Matrix& w, const std::optional<Vector>& bias,
                          const std::string& id) {
  if (w.rows() < 1 || w.cols() < 1) {
    throw ShapeError("decompose(" + id + "): weight must be at least 1x1");
  }
  if (!w.allFinite()) {
    throw NumericalError("decompose(" + id + "): weight has non-finite entries");
  }
  if (bias && bias->size() != w.rows()) {
    throw ShapeError("decompose(" + id + "): bias length does not match output dim");
  }

  Eigen::BDCSVD<Matrix> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    throw NumericalError("decompose(" + id + "): SVD did not converge");
  }

  SvdAdapterState state;
  state.U = svd.matrixU();
  state.sigma = svd.singularValues();
  state.Vt = svd.matrixV().transpose();
  state.scale = Vector::Ones(state.sigma.size());
  state.shift = Vector::Zero(state.sigma.size());
  if (bias) state.bias = *bias;

  // Factorization sanity: the reconstruction must match W well below the
  // documented 1e-5 relative tolerance.
  const double wn = w.norm();
  const double err = (state.U * state.sigma.asDiagonal() * state.Vt - w).norm();
  if (wn > 0 ? err > 1e-8 * wn : err > 1e-12) {
    throw NumericalError("decompose(" + id + "): reconstruction error " + std::to_string(err) +
                         " exceeds tolerance");
  }
  return state;
}

Vector effective_sigma(const SvdAdapterState& state) {
  return (state.scale.array() * state.sigma.array() + state.shift.array()).max(0.0).matrix();
}

Matrix effective_weight(const SvdAdapterState& state) {
  return state.U * effective_sigma(state).asDiagonal() * state.Vt;
}

Vector adapter_forward(const SvdAdapterState& state, const Vector& x) {
  if (x.size() != state.in_dim()) {
    throw ShapeError("adapter_forward: input length does not match weight columns");
  }
  Vector z = state.Vt * x;
  z.array() *= effective_sigma(state).array();
  Vector y = state.U * z;
  if (state.has_bias()) y += state.bias;
  return y;
}

Matrix adapter_forward_rows(const SvdAdapterState& state, const Matrix& x) {
  if (x.cols() != state.in_dim()) {
    throw ShapeError("adapter_forward_rows: input width does not match weight columns");
  }
  Matrix z = x * state.Vt.transpose();
  z = z * effective_sigma(state).asDiagonal();
  Matrix y = z * state.U.transpose();
  if (state.has_bias()) y.rowwise() += state.bias.transpose();
  return y;
}

std::pair<Matrix, std::optional<Vector>> merge(const SvdAdapterState& state) {
  std::optional<Vector> bias;
  if (state.has_bias()) bias = state.bias;
  return {effective_weight(state), std::move(bias)};
}

Eigen::Index adapter_trainable_count(const SvdAdapterState& state) {
  return 2 * state.rank();
}

}  // namespace svdseg
