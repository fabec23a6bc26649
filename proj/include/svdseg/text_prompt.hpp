// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "svdseg/common.hpp"
#include "svdseg/groups.hpp"
#include "svdseg/param.hpp"

namespace svdseg {

// Frozen deterministic text embedder. A label is lowercased, split on
// whitespace, each token hashed to a pseudo-random unit vector, and the token
// vectors are averaged and renormalized. The hash stream is seeded by a fixed
// constant, so the same string maps to the same embedding on every platform
// and in every run. Acts as the frozen text encoder in front of the prompt
// path; a real one can be swapped in behind the same call.
class TextEmbedder {
 public:
  explicit TextEmbedder(Eigen::Index dim = 64,
                        const std::vector<std::string>& known_labels = {});

  // Unit-norm embedding of a label. Throws DataError on empty input.
  Vector embed(const std::string& label) const;

  Eigen::Index dim() const { return dim_; }

  // Token -> bucket map for the labels supplied at construction.
  const std::unordered_map<std::string, std::uint64_t>& vocabulary() const { return vocab_; }

  static std::vector<std::string> tokenize(const std::string& label);

 private:
  Vector token_vector(const std::string& token) const;

  Eigen::Index dim_;
  std::unordered_map<std::string, std::uint64_t> vocab_;
};

// Trainable one-layer affine map applied to the text embedding before the
// prompt encoder. Initialized to the identity so a freshly adapted model
// reproduces the pretrained one.
class TextAffineLayer {
 public:
  explicit TextAffineLayer(Eigen::Index dim);

  Matrix forward(const Matrix& e, bool train);
  Matrix backward(const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);

  Eigen::Index dim() const { return w_.rows(); }
  Eigen::Index param_count() const { return w_.size() + b_.size(); }
  void set_trainable(bool t) { trainable_ = t; }

  Matrix& weight() { return w_; }
  Vector& bias() { return b_; }

 private:
  Matrix w_;
  Vector b_;
  Matrix w_grad_;
  Vector b_grad_;
  bool trainable_ = false;
  Matrix x_cache_;
};

// weight * e + bias for a single embedding (evaluation convenience).
Vector apply_tal(TextAffineLayer& tal, const Vector& e);

}  // namespace svdseg
