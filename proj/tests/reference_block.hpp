// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal hand-rolled pre-norm transformer block, written with plain loops
// and kept independent of the library's layer classes. Used as an oracle for
// the encoder path.

#pragma once

#include <cmath>
#include <vector>

#include "svdseg/common.hpp"

namespace svdseg::testref {

struct RefBlockWeights {
  Matrix w_qkv;  // 3D x D
  Vector b_qkv;
  Matrix w_proj;  // D x D
  Vector b_proj;
  Matrix w1;  // H x D
  Vector b1;
  Matrix w2;  // D x H
  Vector b2;
  Vector g1, be1, g2, be2;  // layernorm params
};

inline Matrix ref_layernorm(const Matrix& x, const Vector& gamma, const Vector& beta) {
  const Eigen::Index t = x.rows(), d = x.cols();
  Matrix out(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    double mu = 0;
    for (Eigen::Index j = 0; j < d; ++j) mu += x(i, j);
    mu /= static_cast<double>(d);
    double var = 0;
    for (Eigen::Index j = 0; j < d; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (Eigen::Index j = 0; j < d; ++j) out(i, j) = (x(i, j) - mu) * inv * gamma(j) + beta(j);
  }
  return out;
}

inline double ref_gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// One encoder block on a single sample of T tokens.
inline Matrix ref_block_forward(const RefBlockWeights& w, const Matrix& x, int heads) {
  const Eigen::Index t = x.rows(), d = x.cols();
  const Eigen::Index hd = d / heads;

  Matrix xn = ref_layernorm(x, w.g1, w.be1);
  Matrix qkv(t, 3 * d);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index o = 0; o < 3 * d; ++o) {
      double acc = w.b_qkv(o);
      for (Eigen::Index j = 0; j < d; ++j) acc += w.w_qkv(o, j) * xn(i, j);
      qkv(i, o) = acc;
    }
  }

  Matrix heads_out(t, d);
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index qi = 0; qi < t; ++qi) {
      // attention logits for this query
      std::vector<double> logits(static_cast<std::size_t>(t));
      double max_logit = -1e300;
      for (Eigen::Index ki = 0; ki < t; ++ki) {
        double s = 0;
        for (Eigen::Index j = 0; j < hd; ++j) {
          s += qkv(qi, h * hd + j) * qkv(ki, d + h * hd + j);
        }
        s /= std::sqrt(static_cast<double>(hd));
        logits[static_cast<std::size_t>(ki)] = s;
        max_logit = std::max(max_logit, s);
      }
      double denom = 0;
      for (double& l : logits) {
        l = std::exp(l - max_logit);
        denom += l;
      }
      for (Eigen::Index j = 0; j < hd; ++j) {
        double acc = 0;
        for (Eigen::Index ki = 0; ki < t; ++ki) {
          acc += logits[static_cast<std::size_t>(ki)] / denom * qkv(ki, 2 * d + h * hd + j);
        }
        heads_out(qi, h * hd + j) = acc;
      }
    }
  }

  Matrix x1 = x;
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index o = 0; o < d; ++o) {
      double acc = w.b_proj(o);
      for (Eigen::Index j = 0; j < d; ++j) acc += w.w_proj(o, j) * heads_out(i, j);
      x1(i, o) += acc;
    }
  }

  Matrix xn2 = ref_layernorm(x1, w.g2, w.be2);
  Matrix out = x1;
  const Eigen::Index hidden = w.w1.rows();
  for (Eigen::Index i = 0; i < t; ++i) {
    std::vector<double> mid(static_cast<std::size_t>(hidden));
    for (Eigen::Index o = 0; o < hidden; ++o) {
      double acc = w.b1(o);
      for (Eigen::Index j = 0; j < d; ++j) acc += w.w1(o, j) * xn2(i, j);
      mid[static_cast<std::size_t>(o)] = ref_gelu(acc);
    }
    for (Eigen::Index o = 0; o < d; ++o) {
      double acc = w.b2(o);
      for (Eigen::Index j = 0; j < hidden; ++j) {
        acc += w.w2(o, j) * mid[static_cast<std::size_t>(j)];
      }
      out(i, o) += acc;
    }
  }
  return out;
}

}  // namespace svdseg::testref
