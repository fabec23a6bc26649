// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "svdseg/common.hpp"

namespace svdseg {

// Non-owning view of one named parameter array. Layers own the storage
// (value, gradient, trainable flag); the registry built by collect() gives
// the optimizer, checkpoint writer and audits a uniform way to enumerate
// every array in a model.
//
// `value`/`grad` point at contiguous column-major storage of rows*cols
// doubles. `grad` is null for arrays that can never receive gradients.
struct ParamRef {
  std::string name;   // unique dotted path, e.g. "encoder.block0.attn.qkv.scale"
  std::string group;  // semantic group used by trainability policies
  double* value = nullptr;
  double* grad = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool* trainable = nullptr;

  Eigen::Index size() const { return rows * cols; }
};

using ParamList = std::vector<ParamRef>;

template <typename EigenObj>
ParamRef make_ref(std::string name, std::string group, EigenObj& value, EigenObj* grad,
                  bool* trainable) {
  ParamRef r;
  r.name = std::move(name);
  r.group = std::move(group);
  r.value = value.data();
  r.grad = grad ? grad->data() : nullptr;
  r.rows = value.rows();
  r.cols = value.cols();
  r.trainable = trainable;
  return r;
}

inline void zero_grads(const ParamList& params) {
  for (const ParamRef& p : params) {
    if (p.grad) {
      Eigen::Map<Vector>(p.grad, p.size()).setZero();
    }
  }
}

inline std::size_t total_count(const ParamList& params) {
  std::size_t n = 0;
  for (const ParamRef& p : params) n += static_cast<std::size_t>(p.size());
  return n;
}

inline std::size_t trainable_count(const ParamList& params) {
  std::size_t n = 0;
  for (const ParamRef& p : params) {
    if (p.trainable && *p.trainable) n += static_cast<std::size_t>(p.size());
  }
  return n;
}

}  // namespace svdseg
