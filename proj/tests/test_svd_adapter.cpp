// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/SVD>

#include "svdseg/layers.hpp"
#include "svdseg/svd_adapter.hpp"
#include "svdseg/train.hpp"
#include "test_util.hpp"

using namespace svdseg;
using namespace svdseg::testutil;

TEST_SUITE("svd_adapter") {

TEST_CASE("decompose of a diagonal matrix") {
  Matrix w = Matrix::Zero(2, 2);
  w(0, 0) = 3;
  w(1, 1) = 2;
  SvdAdapterState st = decompose(w, std::nullopt);
  CHECK(st.sigma(0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(st.sigma(1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(st.scale.isOnes());
  CHECK(st.shift.isZero());
  // factors are compared through the reconstruction, never directly
  CHECK(rel_err(effective_weight(st), w) < 1e-12);
  CHECK(adapter_trainable_count(st) == 4);
}

TEST_CASE("decompose of the zero matrix") {
  Matrix w = Matrix::Zero(4, 4);
  SvdAdapterState st = decompose(w, std::nullopt);
  CHECK(st.sigma.size() == 4);
  CHECK(st.sigma.isZero());
  CHECK(effective_weight(st).isZero());
}

TEST_CASE("decompose reconstructs a random 8x12 matrix") {
  Matrix w = random_matrix(8, 12, 101);
  SvdAdapterState st = decompose(w, std::nullopt);
  // oracle: multiply the factors back and compare to the stored weight
  Matrix rebuilt = st.U * st.sigma.asDiagonal() * st.Vt;
  CHECK(rel_err(rebuilt, w) < 1e-10);
  CHECK(std::is_sorted(st.sigma.data(), st.sigma.data() + st.sigma.size(),
                       [](double a, double b) { return a > b; }));
  CHECK(st.sigma.minCoeff() >= 0.0);
}

TEST_CASE("decompose input validation") {
  Matrix w = Matrix::Ones(2, 2);
  w(0, 1) = std::nan("");
  CHECK_THROWS_AS(decompose(w, std::nullopt, "bad"), NumericalError);

  Matrix ok = Matrix::Ones(3, 2);
  Vector bias = Vector::Zero(2);  // wrong length, needs 3
  CHECK_THROWS_AS(decompose(ok, bias, "bias"), ShapeError);
}

TEST_CASE("effective_weight scale/shift arithmetic on diag(3,2)") {
  Matrix w = Matrix::Zero(2, 2);
  w(0, 0) = 3;
  w(1, 1) = 2;
  SvdAdapterState st = decompose(w, std::nullopt);

  SUBCASE("identity transform") {
    Matrix expect = w;
    CHECK(rel_err(effective_weight(st), expect) < 1e-12);
  }
  SUBCASE("shift by -1") {
    st.shift.setConstant(-1.0);
    Matrix expect = Matrix::Zero(2, 2);
    expect(0, 0) = 2;
    expect(1, 1) = 1;
    CHECK(rel_err(effective_weight(st), expect) < 1e-12);
  }
  SUBCASE("full clamp") {
    st.shift.setConstant(-5.0);
    CHECK(effective_weight(st).isZero());
    CHECK(effective_sigma(st).isZero());
  }
}

TEST_CASE("adapter forward on diagonal state") {
  Matrix w = Matrix::Zero(2, 2);
  w(0, 0) = 3;
  w(1, 1) = 2;
  SvdAdapterState st = decompose(w, std::nullopt);
  Vector x = Vector::Ones(2);

  Vector y = adapter_forward(st, x);
  CHECK(y(0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(y(1) == doctest::Approx(2.0).epsilon(1e-12));

  st.shift.setConstant(-1.0);
  y = adapter_forward(st, x);
  CHECK(y(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(y(1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identity-init forward matches the dense layer") {
  Matrix w = random_matrix(8, 12, 202);
  Vector bias = random_vector(8, 203);
  SvdAdapterState st = decompose(w, bias);
  Matrix x = random_matrix(4, 12, 204);
  // oracle: dense matmul with the original weight
  Matrix want = x * w.transpose();
  want.rowwise() += bias.transpose();
  CHECK(rel_err(adapter_forward_rows(st, x), want) < 1e-6);
}

TEST_CASE("forward shape contract") {
  SvdAdapterState st = decompose(random_matrix(4, 6, 1), std::nullopt);
  CHECK_THROWS_AS(adapter_forward(st, Vector::Zero(5)), ShapeError);
  CHECK_THROWS_AS(adapter_forward_rows(st, Matrix::Zero(2, 5)), ShapeError);
}

TEST_CASE("merge exports the effective weight and bias") {
  Matrix w = random_matrix(6, 5, 301);
  Vector bias = random_vector(6, 302);
  SvdAdapterState st = decompose(w, bias);

  auto [merged, mbias] = merge(st);
  CHECK(rel_err(merged, w) < 1e-10);
  REQUIRE(mbias.has_value());
  CHECK((*mbias - bias).norm() == 0.0);

  st.shift.setConstant(-100.0);
  CHECK(merge(st).first.isZero());
}

TEST_CASE("trainable counts follow 2*min(D,K)") {
  CHECK(adapter_trainable_count(decompose(Matrix::Identity(2, 2), std::nullopt)) == 4);

  // oracle: enumerate the trainable entries of constructed adapters
  SvdAdapterState wide = decompose(random_matrix(768, 2304, 401, 0.02), std::nullopt);
  CHECK(adapter_trainable_count(wide) == 1536);
  CHECK(wide.scale.size() + wide.shift.size() == 1536);

  SvdAdapterState square = decompose(random_matrix(768, 768, 402, 0.02), std::nullopt);
  CHECK(adapter_trainable_count(square) == 1536);
  CHECK(square.scale.size() + square.shift.size() == 1536);
}

TEST_CASE("identity property across shapes") {
  for (auto [d, k, seed] : {std::tuple{5, 9, 11}, {9, 5, 12}, {7, 7, 13}}) {
    Matrix w = random_matrix(d, k, static_cast<std::uint64_t>(seed));
    Vector b = random_vector(d, static_cast<std::uint64_t>(seed) + 100);
    SvdAdapterState st = decompose(w, b);
    Matrix x = random_matrix(3, k, static_cast<std::uint64_t>(seed) + 200);
    Matrix want = x * w.transpose();
    want.rowwise() += b.transpose();
    CHECK(rel_err(adapter_forward_rows(st, x), want) < 1e-5);
  }
}

TEST_CASE("analytic scale/shift gradients match central differences") {
  for (auto [d, k] : {std::pair{8, 8}, {8, 12}}) {
    SvdLinear layer(decompose(random_matrix(d, k, 501), random_vector(d, 502)));
    // keep every effective singular value away from the ReLU kink
    layer.state().shift.setConstant(0.05);
    Matrix x = random_matrix(4, k, 503);
    Matrix target = random_matrix(4, d, 504);

    auto loss_value = [&] { return 0.5 * (layer.forward(x, false) - target).squaredNorm(); };

    ParamList params;
    layer.collect("adapter", params);
    zero_grads(params);
    Matrix y = layer.forward(x, true);
    layer.backward(y - target);

    for (const ParamRef& p : params) {
      if (p.name != "adapter.scale" && p.name != "adapter.shift") continue;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double pre = layer.state().scale(i) * layer.state().sigma(i) + layer.state().shift(i);
        REQUIRE(std::abs(pre) > 1e-4);  // kink-free point
        const double fd = central_diff(p.value + i, loss_value);
        CHECK(rel_err(p.grad[i], fd) < 1e-3);
      }
    }
  }
}

TEST_CASE("gradient flows nowhere at a fully clamped spectrum") {
  SvdLinear layer(decompose(random_matrix(6, 6, 601), std::nullopt));
  layer.state().shift.setConstant(-1e6);  // every direction clamped
  ParamList params;
  layer.collect("adapter", params);
  zero_grads(params);
  Matrix x = random_matrix(3, 6, 602);
  Matrix y = layer.forward(x, true);
  CHECK(y.isZero());
  layer.backward(Matrix::Ones(3, 6));
  for (const ParamRef& p : params) {
    if (p.name == "adapter.scale" || p.name == "adapter.shift") {
      CHECK(Eigen::Map<const Vector>(p.grad, p.size()).isZero());
    }
  }
}

TEST_CASE("effective sigma stays non-negative under arbitrary parameters") {
  SvdAdapterState st = decompose(random_matrix(8, 12, 701), std::nullopt);
  std::mt19937_64 rng(702);
  std::normal_distribution<double> dist(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    for (Eigen::Index i = 0; i < st.rank(); ++i) {
      st.scale(i) = dist(rng);
      st.shift(i) = dist(rng);
    }
    CHECK(effective_sigma(st).minCoeff() >= 0.0);
  }
}

TEST_CASE("frozen factors are bit-identical after training steps") {
  SvdLinear layer(decompose(random_matrix(8, 12, 801), random_vector(8, 802)));
  const Matrix u0 = layer.state().U;
  const Vector s0 = layer.state().sigma;
  const Matrix vt0 = layer.state().Vt;
  const Vector b0 = layer.state().bias;

  ParamList params;
  layer.collect("adapter", params);
  AdamOptimizer opt;
  Matrix x = random_matrix(4, 12, 803);
  Matrix target = random_matrix(4, 8, 804);
  for (int step = 0; step < 25; ++step) {
    zero_grads(params);
    Matrix y = layer.forward(x, true);
    layer.backward(y - target);
    opt.step(params, 1e-2);
  }

  CHECK(std::memcmp(u0.data(), layer.state().U.data(), sizeof(double) * u0.size()) == 0);
  CHECK(std::memcmp(s0.data(), layer.state().sigma.data(), sizeof(double) * s0.size()) == 0);
  CHECK(std::memcmp(vt0.data(), layer.state().Vt.data(), sizeof(double) * vt0.size()) == 0);
  CHECK(std::memcmp(b0.data(), layer.state().bias.data(), sizeof(double) * b0.size()) == 0);
  // and training did move the adapter
  CHECK(!(layer.state().scale.isOnes() && layer.state().shift.isZero()));
}

TEST_CASE("single shift entries steer single singular directions (full-rank reach)") {
  Matrix w = random_matrix(8, 12, 901);
  SvdAdapterState st = decompose(w, std::nullopt);
  const Vector base = effective_sigma(st);
  REQUIRE(base.minCoeff() > 0.1);  // generic matrix, away from the kink

  for (Eigen::Index i = 0; i < st.rank(); ++i) {
    st.shift.setZero();
    st.shift(i) = 0.25;
    Vector eff = effective_sigma(st);
    for (Eigen::Index j = 0; j < st.rank(); ++j) {
      if (j == i) {
        CHECK(eff(j) == doctest::Approx(base(j) + 0.25).epsilon(1e-12));
      } else {
        CHECK(eff(j) == doctest::Approx(base(j)).epsilon(1e-12));
      }
    }
    // oracle: the adapted weight really has those singular values
    Eigen::BDCSVD<Matrix> check(effective_weight(st));
    Vector got = check.singularValues();
    Vector want = eff;
    std::sort(want.data(), want.data() + want.size(), std::greater<double>());
    CHECK(rel_err(got, want) < 1e-10);
    CHECK((got.array() > 0.0).all());  // rank preserved
  }
}

}  // TEST_SUITE
