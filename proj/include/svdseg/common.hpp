// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace svdseg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these to exit codes (config 2, data 3,
// training 4); everything else is an internal contract violation.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class TrainError : public Error {
 public:
  using Error::Error;
};

// Shape/precondition violation in a numeric operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Unknown label, missing run artifact, and similar evaluation-side problems.
class EvalError : public DataError {
 public:
  using DataError::DataError;
};

class ReportError : public DataError {
 public:
  using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Deterministic randomness. Every random draw in the project flows from a
// single root seed through named substreams, so that e.g. data generation and
// weight init stay reproducible independently of each other.
// ---------------------------------------------------------------------------

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Substream rng: same (root, name) pair always yields the same stream.
inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view stream) {
  return std::mt19937_64(splitmix64(root ^ fnv1a64(stream)));
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view stream, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(root ^ fnv1a64(stream)) + index));
}

// Maps 64 random bits to a double in [0, 1). Pure integer arithmetic plus one
// exact division, so the result is identical on every platform.
constexpr double bits_to_unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace svdseg
