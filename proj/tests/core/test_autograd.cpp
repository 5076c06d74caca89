#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "tripcast/core/error.hpp"
#include "tripcast/core/ops.hpp"

using namespace tripcast;
using tripcast::testing::gradcheck;
using tripcast::testing::project;
using tripcast::testing::random_param;
using tripcast::testing::random_values;

TEST_CASE("gradient of sum(w*w) is 2w") {
  auto w = Tensor<double>::parameter({2}, {1.0, -2.0});
  backward(sum(mul(w, w)));
  auto g = w.grad();
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == doctest::Approx(-4.0));
}

TEST_CASE("softmax cross-entropy at uniform logits has a zero-mean gradient") {
  auto z = Tensor<double>::parameter({4}, {0, 0, 0, 0});
  Tensor<double> onehot({4}, {0, 0, 1, 0});
  auto loss = scale(sum(mul(log(softmax(z)), onehot)), -1.0);
  CHECK(loss.item() == doctest::Approx(std::log(4.0)));
  backward(loss);
  auto g = z.grad();
  double total = 0;
  for (double v : g) total += v;
  CHECK(std::abs(total) < 1e-12);
  CHECK(g[2] == doctest::Approx(-0.75));
  CHECK(g[0] == doctest::Approx(0.25));
}

TEST_CASE("a non-scalar loss is rejected and an unreached leaf gets a zero grad") {
  auto w = Tensor<float>::parameter({3}, {1, 2, 3});
  auto unused = Tensor<float>::parameter({2}, {1, 1});
  CHECK_THROWS_AS(backward(mul(w, w)), ShapeError);
  backward(sum(w));
  CHECK(unused.grad() == std::vector<float>{0, 0});
  CHECK_FALSE(unused.has_grad());
}

TEST_CASE("no-grad guard stops recording") {
  auto w = Tensor<float>::parameter({2}, {1, 2});
  NoGradGuard guard;
  auto y = mul(w, w);
  CHECK_FALSE(y.requires_grad());
}

namespace {

// Every differentiable primitive, as a loss over random leaves.
template <typename T>
void check_all_primitives(double tol, double h, std::uint64_t seed) {
  Rng rng(seed);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t r = 1 + rng.below(4), c = 2 + rng.below(4);
    auto a = random_param<T>(rng, {r, c});
    auto b = random_param<T>(rng, {r, c});
    auto row = random_param<T>(rng, {c});
    auto m = random_param<T>(rng, {c, 3});
    auto pos = random_param<T>(rng, {r, c}, 0.5, 2.0);
    // Keep GELU/ReLU away from the kink for the difference quotient.
    auto off = random_param<T>(rng, {r, c});
    {
      auto v = off.mutable_values();
      for (auto& x : v) x = x < 0 ? x - T(0.2) : x + T(0.2);
    }

    INFO("trial " << trial << " shape " << r << "x" << c);
    CHECK(gradcheck<T>({a, m}, [&] { return project(matmul(a, m)); }, h) <= tol);
    CHECK(gradcheck<T>({a, b}, [&] { return project(add(a, b)); }, h) <= tol);
    CHECK(gradcheck<T>({a, row}, [&] { return project(add(a, row)); }, h) <= tol);
    CHECK(gradcheck<T>({a, row}, [&] { return project(sub(row, a)); }, h) <= tol);
    CHECK(gradcheck<T>({a, b}, [&] { return project(mul(a, b)); }, h) <= tol);
    CHECK(gradcheck<T>({a, row}, [&] { return project(mul(row, a)); }, h) <= tol);
    CHECK(gradcheck<T>({a}, [&] { return project(scale(a, T(-1.7))); }, h) <= tol);
    CHECK(gradcheck<T>({off}, [&] { return project(relu(off)); }, h) <= tol);
    CHECK(gradcheck<T>({off}, [&] { return project(gelu(off)); }, h) <= tol);
    CHECK(gradcheck<T>({pos}, [&] { return project(log(pos)); }, h) <= tol);
    CHECK(gradcheck<T>({a}, [&] { return project(softmax(a)); }, h) <= tol);
    // Two columns make the normalised output a constant sign pattern, so use three or more.
    auto ln_x = random_param<T>(rng, {r, c + 1}, -2.0, 2.0);
    auto gamma = random_param<T>(rng, {c + 1}, 0.5, 1.5);
    auto beta = random_param<T>(rng, {c + 1});
    CHECK(gradcheck<T>({ln_x, gamma, beta},
                       [&] { return project(layer_norm(ln_x, gamma, beta)); }, h) <= tol);
    CHECK(gradcheck<T>({a, b}, [&] { return project(concat<T>({a, b}, 1)); }, h) <= tol);
    CHECK(gradcheck<T>({a, b}, [&] { return project(concat<T>({a, b}, 0)); }, h) <= tol);
    CHECK(gradcheck<T>({a}, [&] { return project(slice(a, 1, 1, c)); }, h) <= tol);
    CHECK(gradcheck<T>({a}, [&] { return project(reshape(a, {c, r})); }, h) <= tol);
    CHECK(gradcheck<T>({a}, [&] { return project(expand(a, 1, 3)); }, h) <= tol);
    CHECK(gradcheck<T>({a}, [&] { return project(mean(a)); }, h) <= tol);

    auto table = random_param<T>(rng, {5, c});
    std::vector<std::int32_t> ids{4, 0, 4, 2};
    CHECK(gradcheck<T>({table}, [&] {
            return project(embedding(table, std::span<const std::int32_t>(ids), Shape{2, 2}));
          }, h) <= tol);

    const std::size_t L = 5, Ci = 2, Co = 3;
    auto x = random_param<T>(rng, {2, L, Ci});
    auto w3 = random_param<T>(rng, {3, Ci, Co});
    auto w1 = random_param<T>(rng, {1, Ci, Co});
    auto bias = random_param<T>(rng, {Co});
    CHECK(gradcheck<T>({x, w3, bias}, [&] { return project(conv1d(x, w3, bias, 1)); }, h) <=
          tol);
    CHECK(gradcheck<T>({x, w1, bias}, [&] { return project(conv1d(x, w1, bias, 0)); }, h) <=
          tol);

    const std::size_t D = 4, Lq = 3, Lk = 4;
    auto q = random_param<T>(rng, {2, Lq, D});
    auto k = random_param<T>(rng, {2, Lk, D});
    auto v = random_param<T>(rng, {2, Lk, D});
    auto k1 = random_param<T>(rng, {1, Lk, D});
    auto v1 = random_param<T>(rng, {1, Lk, D});
    std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 0, 0, 0};
    std::vector<std::uint8_t> mask1{1, 0, 1, 1};
    CHECK(gradcheck<T>({q, k, v}, [&] {
            return project(multi_head_attention(q, k, v, std::span<const std::uint8_t>(mask), 2));
          }, h) <= tol);
    CHECK(gradcheck<T>({q, k1, v1}, [&] {
            return project(
                multi_head_attention(q, k1, v1, std::span<const std::uint8_t>(mask1), 1));
          }, h) <= tol);
  }
}

}  // namespace

TEST_CASE("analytic gradients match central differences (64-bit)") {
  check_all_primitives<double>(1e-5, 1e-5, 11);
}

TEST_CASE("analytic gradients match central differences (32-bit)") {
  check_all_primitives<float>(1e-3, 1e-2, 12);
}

TEST_CASE("a shared subexpression accumulates gradient from every use") {
  auto w = Tensor<double>::parameter({3}, {0.5, -1.0, 2.0});
  auto s = gelu(w);
  auto loss = sum(add(mul(s, s), s));
  CHECK(gradcheck<double>({w}, [&] {
          auto t = gelu(w);
          return sum(add(mul(t, t), t));
        }, 1e-5) <= 1e-6);
  (void)loss;
}

TEST_CASE("the same inputs give bit-identical forward and backward results") {
  auto run = [] {
    Rng rng(5);
    auto a = random_param<float>(rng, {4, 8});
    auto m = random_param<float>(rng, {8, 8});
    auto g = random_param<float>(rng, {8}, 0.5, 1.5);
    auto b = random_param<float>(rng, {8});
    std::vector<std::uint8_t> mask(4, 1);
    auto h = layer_norm(gelu(matmul(a, m)), g, b);
    auto h3 = reshape(h, {1, 4, 8});
    auto att = multi_head_attention(h3, h3, h3, std::span<const std::uint8_t>(mask), 2);
    auto loss = project(att);
    backward(loss);
    std::vector<float> out{loss.item()};
    for (auto& t : {a, m, g, b}) {
      auto gr = t.grad();
      out.insert(out.end(), gr.begin(), gr.end());
    }
    return out;
  };
  CHECK(run() == run());
}
