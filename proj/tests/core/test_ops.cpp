#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "tripcast/core/error.hpp"
#include "tripcast/core/ops.hpp"

using namespace tripcast;
using tripcast::testing::random_param;
using tripcast::testing::random_values;

TEST_CASE("matmul by the identity returns the other operand") {
  Rng rng(1);
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> a({3, 3}, random_values<double>(rng, 9));
  auto c = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(c.at(i) == a.at(i));
}

TEST_CASE("matmul flattens leading axes") {
  Tensor<double> a({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  Tensor<double> b({3, 1}, {1, 1, 1});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2, 1});
  CHECK(c.at(0) == 6);
  CHECK(c.at(3) == 33);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tensor<float> a({2, 3}), b({4, 5});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("matmul") != std::string::npos);
    CHECK(what.find("[2,3]") != std::string::npos);
    CHECK(what.find("[4,5]") != std::string::npos);
    CHECK(e.kind() == "ShapeError");
  }
  CHECK_THROWS_AS(add(Tensor<float>({2, 3}), Tensor<float>({2})), ShapeError);
  CHECK_THROWS_AS(softmax(Tensor<float>(Shape{0})), ShapeError);
}

TEST_CASE("softmax of a constant row is uniform") {
  Tensor<float> z({4}, {0, 0, 0, 0});
  auto p = softmax(z);
  for (float v : p.values()) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("softmax rows sum to one and stay positive") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng.below(4), cols = 1 + rng.below(5);
    Tensor<double> x({rows, cols}, random_values<double>(rng, rows * cols, -30, 30));
    auto p = softmax(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        CHECK(p.at(r * cols + c) > 0.0);
        total += p.at(r * cols + c);
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("layer_norm output is standardised before the affine map") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t rows = 1 + rng.below(4), cols = 2 + rng.below(6);
    Tensor<float> x({rows, cols}, random_values<float>(rng, rows * cols, -5, 5));
    Tensor<float> gamma({cols}, std::vector<float>(cols, 1.0f)), beta({cols});
    auto y = layer_norm(x, gamma, beta);
    for (std::size_t r = 0; r < rows; ++r) {
      double in_mu = 0, in_var = 0, mu = 0, var = 0;
      for (std::size_t c = 0; c < cols; ++c) in_mu += x.at(r * cols + c);
      in_mu /= double(cols);
      for (std::size_t c = 0; c < cols; ++c) in_var += std::pow(x.at(r * cols + c) - in_mu, 2);
      in_var /= double(cols);
      for (std::size_t c = 0; c < cols; ++c) mu += y.at(r * cols + c);
      mu /= double(cols);
      for (std::size_t c = 0; c < cols; ++c) var += std::pow(y.at(r * cols + c) - mu, 2);
      var /= double(cols);
      CHECK(std::abs(mu) <= 1e-5);
      // The eps term shrinks the output variance to v / (v + eps) exactly.
      CHECK(var == doctest::Approx(in_var / (in_var + 1e-5)).epsilon(1e-5));
      if (in_var >= 0.1) CHECK(std::abs(var - 1.0) <= 1e-4);
    }
  }
}

TEST_CASE("conv1d with an averaging kernel keeps a constant signal on the interior") {
  // Signal 2,2,2,2,2; kernel 1/3 each; one zero of padding per side.
  // Hand evaluation: interior outputs (1..3) sum three 2/3 terms = 2; the
  // edges see one zero and give 4/3.
  Tensor<double> x({1, 5, 1}, {2, 2, 2, 2, 2});
  Tensor<double> w({3, 1, 1}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  Tensor<double> b({1}, {0});
  auto y = conv1d(x, w, b, 1);
  REQUIRE(y.shape() == Shape{1, 5, 1});
  CHECK(y.at(0) == doctest::Approx(4.0 / 3));
  for (std::size_t i = 1; i < 4; ++i) CHECK(y.at(i) == doctest::Approx(2.0));
  CHECK(y.at(4) == doctest::Approx(4.0 / 3));

  auto valid = conv1d(x, w, b, 0);
  REQUIRE(valid.shape() == Shape{1, 3, 1});
  for (double v : valid.values()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv1d matches a direct triple-loop evaluation") {
  Rng rng(4);
  const std::size_t B = 2, L = 6, Ci = 3, Co = 2, K = 3, pad = 1;
  Tensor<double> x({B, L, Ci}, random_values<double>(rng, B * L * Ci));
  Tensor<double> w({K, Ci, Co}, random_values<double>(rng, K * Ci * Co));
  Tensor<double> bias({Co}, random_values<double>(rng, Co));
  auto y = conv1d(x, w, bias, pad);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t co = 0; co < Co; ++co) {
        double ref = bias.at(co);
        for (std::size_t k = 0; k < K; ++k) {
          const long li = long(l) + long(k) - long(pad);
          if (li < 0 || li >= long(L)) continue;
          for (std::size_t ci = 0; ci < Ci; ++ci)
            ref += x.at((b * L + std::size_t(li)) * Ci + ci) * w.at((k * Ci + ci) * Co + co);
        }
        CHECK(y.at((b * L + l) * Co + co) == doctest::Approx(ref).epsilon(1e-12));
      }
}

TEST_CASE("embedding, concat, slice, expand move the right elements") {
  Tensor<float> table({3, 2}, {0, 1, 10, 11, 20, 21});
  std::vector<std::int32_t> ids{2, 0, 2};
  auto e = embedding(table, std::span<const std::int32_t>(ids), Shape{3});
  CHECK(e.shape() == Shape{3, 2});
  CHECK(e.at(0) == 20);
  CHECK(e.at(3) == 1);
  std::vector<std::int32_t> bad{3};
  CHECK_THROWS_AS(embedding(table, std::span<const std::int32_t>(bad), Shape{1}), ShapeError);

  auto c = concat<float>({table, table}, 1);
  CHECK(c.shape() == Shape{3, 4});
  CHECK(c.at(2) == 0);
  CHECK(c.at(5) == 11);
  auto s = slice(c, 1, 1, 3);
  CHECK(s.shape() == Shape{3, 2});
  CHECK(s.at(0) == 1);
  CHECK(s.at(1) == 0);
  auto x = expand(table, 1, 2);
  CHECK(x.shape() == Shape{3, 2, 2});
  CHECK(x.at(2) == 0);
  CHECK(x.at(7) == 11);
}

TEST_CASE("attention with every key masked yields a zero context and is counted") {
  reset_empty_attention_rows();
  Tensor<double> q({1, 2, 2}, {1, 2, 3, 4}), k({1, 3, 2}, {1, 1, 1, 1, 1, 1});
  std::vector<std::uint8_t> mask(3, 0);
  auto out = multi_head_attention(q, k, k, std::span<const std::uint8_t>(mask), 1);
  for (double v : out.values()) CHECK(v == 0.0);
  CHECK(empty_attention_rows() == 2);
}

TEST_CASE("non-finite op results are rejected") {
  Tensor<float> x({2}, {1.0f, -1.0f});
  CHECK_THROWS_AS(log(x), NumericError);
}
