// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/text_prompt.hpp"

#include <algorithm>
#include <cctype>

namespace svdseg {

namespace {
// Fixed embedder seed. Deliberately not tied to any run seed: embeddings are
// part of the (frozen) text encoder, not of the experiment randomness.
constexpr std::uint64_t kEmbedderSeed = 0x7365676d656e7421ull;
}  // namespace

TextEmbedder::TextEmbedder(Eigen::Index dim, const std::vector<std::string>& known_labels)
    : dim_(dim) {
  if (dim < 1) throw ConfigError("TextEmbedder: dim must be positive");
  for (const std::string& label : known_labels) {
    for (const std::string& tok : tokenize(label)) {
      vocab_.emplace(tok, fnv1a64(tok));
    }
  }
}

std::vector<std::string> TextEmbedder::tokenize(const std::string& label) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : label) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Vector TextEmbedder::token_vector(const std::string& token) const {
  Vector v(dim_);
  std::uint64_t state = splitmix64(kEmbedderSeed ^ fnv1a64(token));
  for (Eigen::Index i = 0; i < dim_; ++i) {
    state = splitmix64(state);
    v[i] = 2.0 * bits_to_unit_double(state) - 1.0;
  }
  const double n = v.norm();
  if (n < 1e-12) {
    // Practically unreachable for a 64-bit hash stream; keep the contract.
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / n;
}

Vector TextEmbedder::embed(const std::string& label) const {
  const std::vector<std::string> tokens = tokenize(label);
  if (tokens.empty()) throw DataError("embed_text: empty prompt");
  Vector sum = Vector::Zero(dim_);
  for (const std::string& tok : tokens) sum += token_vector(tok);
  sum /= static_cast<double>(tokens.size());
  const double n = sum.norm();
  if (n < 1e-12) throw NumericalError("embed_text: degenerate token combination");
  return sum / n;
}

TextAffineLayer::TextAffineLayer(Eigen::Index dim)
    : w_(Matrix::Identity(dim, dim)),
      b_(Vector::Zero(dim)),
      w_grad_(Matrix::Zero(dim, dim)),
      b_grad_(Vector::Zero(dim)) {}

Matrix TextAffineLayer::forward(const Matrix& e, bool train) {
  if (e.cols() != w_.cols()) throw ShapeError("TextAffineLayer::forward: width mismatch");
  if (train) x_cache_ = e;
  Matrix y = e * w_.transpose();
  y.rowwise() += b_.transpose();
  return y;
}

Matrix TextAffineLayer::backward(const Matrix& dy) {
  w_grad_.noalias() += dy.transpose() * x_cache_;
  b_grad_ += dy.colwise().sum().transpose();
  return dy * w_;
}

void TextAffineLayer::collect(const std::string& prefix, ParamList& out) {
  out.push_back(make_ref<Matrix>(prefix + ".weight", kGroupTal, w_, &w_grad_, &trainable_));
  out.push_back(make_ref<Vector>(prefix + ".bias", kGroupTal, b_, &b_grad_, &trainable_));
}

Vector apply_tal(TextAffineLayer& tal, const Vector& e) {
  if (!e.allFinite()) throw ShapeError("apply_tal: non-finite embedding");
  Matrix y = tal.forward(e.transpose(), false);
  return y.transpose();
}

}  // namespace svdseg
