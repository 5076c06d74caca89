#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>

#include "support/denoiser_fixtures.hpp"
#include "support/gradcheck.hpp"
#include "tripcast/core/error.hpp"
#include "tripcast/core/ops.hpp"
#include "tripcast/model/denoiser.hpp"

using namespace tripcast;
using tripcast::testing::gradcheck;
using tripcast::testing::project;
using namespace tripcast::testing;

namespace {

// Independent count from the layer inventory.
std::size_t expected_params(const DenoiserConfig& c) {
  const std::size_t d = c.d_model, f = c.ff_dim;
  const std::size_t lin_dd = d * d + d;
  const std::size_t attn = 4 * lin_dd;
  const std::size_t ln = 2 * d;
  const std::size_t ff = (d * f + f) + (f * d + d);
  const std::size_t enc = attn + ln + ff + ln;
  const std::size_t dec = attn + ln + attn + ln + ff + ln;
  const std::size_t streams = c.topology == Topology::a ? 1 : c.n_blocks;
  return (c.num_features + 1) * d + (d + d) + c.diffusion_steps * c.step_embed_dim +
         (c.step_embed_dim * d + d) + lin_dd +
         c.n_blocks * (c.encoder_layers * enc + c.decoder_layers * dec) +
         (streams * d * d + d) + (d + 1);
}

}  // namespace

TEST_CASE("sinusoid at time 0 alternates 0 and 1") {
  std::vector<float> out(10, -7.0f);
  sinusoid(0.0, out.size(), out.data());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == (i % 2 == 0 ? 0.0f : 1.0f));
  sinusoid(2.5, out.size(), out.data());
  for (std::size_t i = 0; i < out.size() / 2; ++i) {
    const double w = std::pow(10000.0, -2.0 * double(i) / double(out.size()));
    CHECK(out[2 * i] == doctest::Approx(std::sin(2.5 * w)).epsilon(1e-6));
    CHECK(out[2 * i + 1] == doctest::Approx(std::cos(2.5 * w)).epsilon(1e-6));
  }
}

TEST_CASE("embedding is additive in feature, value and time") {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 3);
  const std::size_t d = cfg.d_model;
  const std::vector<std::int32_t> feature = {2, 2, 4};
  const std::vector<float> time = {1.0f, 7.5f, 9.0f};
  const std::vector<std::uint8_t> mask = {1, 1, 0};
  const Tensor<double> values({1, 3}, {0.4, 0.4, 123.0});
  const auto e = model.embed(feature, time, mask, values, 1, 3);
  REQUIRE(e.shape() == Shape{1, 3, d});

  SUBCASE("tokens that differ only in time differ by the time encoding") {
    std::vector<float> s1(d), s2(d);
    sinusoid(1.0, d, s1.data());
    sinusoid(7.5, d, s2.data());
    for (std::size_t c = 0; c < d; ++c)
      CHECK(e.at(c) - e.at(d + c) == doctest::Approx(double(s1[c]) - double(s2[c])).epsilon(1e-12));
  }
  SUBCASE("a padding token is the padding row plus the value bias") {
    const auto table = model.param("embed.feature");
    const auto bias = model.param("embed.value.b");
    for (std::size_t c = 0; c < d; ++c) CHECK(e.at(2 * d + c) == table.at(c) + bias.at(c));
  }
  SUBCASE("a token is the sum of its three parts") {
    const auto table = model.param("embed.feature");
    const auto w = model.param("embed.value.w");
    const auto b = model.param("embed.value.b");
    std::vector<float> s(d);
    sinusoid(1.0, d, s.data());
    for (std::size_t c = 0; c < d; ++c)
      CHECK(e.at(c) == doctest::Approx(table.at(2 * d + c) + 0.4 * w.at(c) + b.at(c) + s[c]).epsilon(1e-12));
  }
}

TEST_CASE("attention reference cases") {
  Rng rng(17);
  SUBCASE("a single unmasked key returns that key's value row") {
    const auto q = tripcast::testing::random_param<double>(rng, {1, 2, 4});
    const auto k = tripcast::testing::random_param<double>(rng, {1, 3, 4});
    const auto v = tripcast::testing::random_param<double>(rng, {1, 3, 4});
    const std::vector<std::uint8_t> mask = {0, 1, 0};
    const auto out = multi_head_attention(q, k, v, mask, 2);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(i * 4 + c) == doctest::Approx(v.at(4 + c)).epsilon(1e-12));
  }
  SUBCASE("identical keys average the values whatever the query") {
    const auto q = tripcast::testing::random_param<double>(rng, {1, 3, 4}, -5, 5);
    std::vector<double> kv(3 * 4);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < 4; ++c) kv[j * 4 + c] = 0.3 + 0.1 * double(c);
    const Tensor<double> k({1, 3, 4}, kv);
    const auto v = tripcast::testing::random_param<double>(rng, {1, 3, 4});
    const std::vector<std::uint8_t> mask = {1, 1, 1};
    const auto out = multi_head_attention(q, k, v, mask, 1);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 4; ++c) {
        const double avg = (v.at(c) + v.at(4 + c) + v.at(8 + c)) / 3.0;
        CHECK(out.at(i * 4 + c) == doctest::Approx(avg).epsilon(1e-12));
      }
  }
  SUBCASE("random 4-token case matches direct summation") {
    const std::size_t L = 4, D = 6, H = 2, dk = D / H;
    const auto q = tripcast::testing::random_param<float>(rng, {1, L, D});
    const auto k = tripcast::testing::random_param<float>(rng, {1, L, D});
    const auto v = tripcast::testing::random_param<float>(rng, {1, L, D});
    const std::vector<std::uint8_t> mask = {1, 0, 1, 1};
    const auto out = multi_head_attention(q, k, v, mask, H);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> w(L, 0.0);
        double total = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          if (!mask[j]) continue;
          double s = 0.0;
          for (std::size_t c = 0; c < dk; ++c) s += double(q.at(i * D + h * dk + c)) * k.at(j * D + h * dk + c);
          w[j] = std::exp(s / std::sqrt(double(dk)));
          total += w[j];
        }
        for (std::size_t c = 0; c < dk; ++c) {
          double ctx = 0.0;
          for (std::size_t j = 0; j < L; ++j) ctx += w[j] / total * v.at(j * D + h * dk + c);
          CHECK(std::abs(out.at(i * D + h * dk + c) - ctx) <= 1e-5);
        }
      }
  }
  SUBCASE("weights over unmasked keys sum to one") {
    const auto q = tripcast::testing::random_param<float>(rng, {3, 5, 8}, -3, 3);
    const auto k = tripcast::testing::random_param<float>(rng, {3, 7, 8}, -3, 3);
    const Tensor<float> ones({3, 7, 8}, std::vector<float>(3 * 7 * 8, 1.0f));
    std::vector<std::uint8_t> mask(21);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3 != 1) ? 1 : 0;
    const auto out = multi_head_attention(q, k, ones, mask, 4);
    for (float x : out.values()) CHECK(std::abs(x - 1.0f) <= 1e-6f);
  }
}

TEST_CASE("end-to-end gradients match finite differences on a tiny model") {
  for (Topology topo : {Topology::a, Topology::b, Topology::c}) {
    CAPTURE(std::string(to_string(topo)));
    const auto cfg = tiny_config(topo);
    Rng rng(100 + static_cast<int>(topo));
    std::vector<IcuSample> samples = {random_sample(rng, cfg, 5, 3), random_sample(rng, cfg, 2, 1)};
    const IcuSample* ptrs[] = {&samples[0], &samples[1]};
    const auto batch = make_batch(ptrs);
    const auto steps = random_steps(rng, 2, cfg.diffusion_steps);
    const auto noisy64 = noisy_values<double>(rng, batch);

    SUBCASE("64-bit") {
      Denoiser<double> model(cfg, 5);
      const auto loss = [&] { return project(model.forward(batch, noisy64, steps)); };
      const auto r = compare_gradients<double, double>(model, model, loss, loss, 1e-5);
      CAPTURE(r.name);
      MESSAGE("64-bit worst " << r.worst << " at " << r.name);
      CHECK(r.worst < 1e-5);
    }
    SUBCASE("32-bit") {
      // Analytic float gradients against central differences of the same
      // weights evaluated in double precision.
      Denoiser<float> model(cfg, 5);
      Denoiser<double> twin(cfg, 0);
      twin.load_arrays(model.to_arrays());
      const Tensor<float> noisy(noisy64.shape(), std::vector<float>(noisy64.values().begin(), noisy64.values().end()));
      const Tensor<double> noisy_twin(noisy.shape(), std::vector<double>(noisy.values().begin(), noisy.values().end()));
      const auto r = compare_gradients<float, double>(
          model, twin, [&] { return project(model.forward(batch, noisy, steps)); },
          [&] { return project(twin.forward(batch, noisy_twin, steps)); }, 1e-5);
      CAPTURE(r.name);
      MESSAGE("32-bit worst " << r.worst << " at " << r.name);
      CHECK(r.worst < 1e-3);
    }
  }
}

TEST_CASE("values behind mask 0 never reach the output") {
  const auto cfg = tiny_config();
  Denoiser<float> model(cfg, 8);
  Rng rng(21);
  std::vector<IcuSample> samples = {random_sample(rng, cfg, 4, 2), random_sample(rng, cfg, 6, 3)};
  const IcuSample* ptrs[] = {&samples[0], &samples[1]};
  const auto base = make_batch(ptrs, false);
  const auto noisy = noisy_values<float>(rng, base);
  const auto steps = random_steps(rng, 2, cfg.diffusion_steps);
  const auto ref = model.forward(base, noisy, steps);

  SUBCASE("perturbed padding values, features and times") {
    auto b = base;
    for (std::size_t i = 0; i < b.cond_mask.size(); ++i)
      if (!b.cond_mask[i]) {
        b.cond_value[i] = static_cast<float>(rng.normal() * 50);
        b.cond_time[i] = static_cast<float>(rng.uniform(0, 30));
        b.cond_feature[i] = 3;
      }
    for (std::size_t i = 0; i < b.target_mask.size(); ++i)
      if (!b.target_mask[i]) {
        b.target_value[i] = 99.0f;
        b.target_time[i] = 35.0f;
      }
    std::vector<float> n2(noisy.values().begin(), noisy.values().end());
    for (std::size_t i = 0; i < n2.size(); ++i)
      if (!b.target_mask[i]) n2[i] = -40.0f;
    const auto out = model.forward(b, Tensor<float>(noisy.shape(), n2), steps);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.at(i) == ref.at(i));
  }
  SUBCASE("swapping two padding tokens of the conditional array") {
    auto b = base;
    const std::size_t L = b.cond_len;
    b.cond_value[4] = 3.0f;
    b.cond_time[4] = 11.0f;
    b.cond_value[5] = -8.0f;
    std::swap(b.cond_value[4], b.cond_value[5]);
    std::swap(b.cond_time[4], b.cond_time[5]);
    REQUIRE(b.cond_mask[4] == 0);
    REQUIRE(b.cond_mask[5] == 0);
    REQUIRE(L == cfg.capacity);
    const auto out = model.forward(b, noisy, steps);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.at(i) == ref.at(i));
  }
  SUBCASE("padding target slots predict exactly zero") {
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (!base.target_mask[i]) CHECK(ref.at(i) == 0.0f);
  }
}

TEST_CASE("trimming the batch does not change predictions for valid slots") {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 9);
  Rng rng(4);
  std::vector<IcuSample> samples = {random_sample(rng, cfg, 3, 1), random_sample(rng, cfg, 2, 2)};
  const IcuSample* ptrs[] = {&samples[0], &samples[1]};
  const auto full = make_batch(ptrs, false);
  const auto cut = make_batch(ptrs, true);
  REQUIRE(cut.cond_len == 3);
  REQUIRE(cut.target_len == 2);
  const auto steps = random_steps(rng, 2, cfg.diffusion_steps);
  std::vector<double> nf(2 * full.target_len, 0.0), nc(2 * cut.target_len, 0.0);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < cut.target_len; ++j)
      nf[r * full.target_len + j] = nc[r * cut.target_len + j] = 0.25 * double(j + r) - 0.3;
  const auto of = model.forward(full, Tensor<double>({2, full.target_len}, nf), steps);
  const auto oc = model.forward(cut, Tensor<double>({2, cut.target_len}, nc), steps);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < cut.target_len; ++j)
      CHECK(oc.at(r * cut.target_len + j) ==
            doctest::Approx(of.at(r * full.target_len + j)).epsilon(1e-12));
}

TEST_CASE("output shape audit over random configurations") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    DenoiserConfig c;
    c.n_heads = 1 + rng.below(3);
    c.d_model = c.n_heads * (1 + rng.below(4));
    c.ff_dim = 1 + rng.below(10);
    c.step_embed_dim = 1 + rng.below(8);
    c.n_blocks = 1 + rng.below(3);
    c.encoder_layers = 1 + rng.below(2);
    c.decoder_layers = 1 + rng.below(2);
    c.num_features = 3 + rng.below(5);
    c.diffusion_steps = 2 + rng.below(6);
    c.capacity = 1 + rng.below(8);
    c.target_capacity = 1 + rng.below(5);
    c.topology = static_cast<Topology>(rng.below(3));
    CAPTURE(trial);
    Denoiser<float> model(c, static_cast<std::uint64_t>(trial));
    const std::size_t B = 1 + rng.below(4);
    std::vector<IcuSample> samples;
    for (std::size_t i = 0; i < B; ++i)
      samples.push_back(random_sample(rng, c, rng.below(c.capacity + 1), 1 + rng.below(c.target_capacity)));
    std::vector<const IcuSample*> ptrs;
    for (auto& s : samples) ptrs.push_back(&s);
    const auto batch = make_batch(ptrs, false);
    const auto out = model.forward(batch, noisy_values<float>(rng, batch), random_steps(rng, B, c.diffusion_steps));
    CHECK(out.shape() == Shape{B, c.target_capacity});
    CHECK(model.param_count() == expected_params(c));
  }
}

TEST_CASE("zeroed conv decoder gives an identically zero prediction") {
  const auto cfg = tiny_config();
  Denoiser<float> model(cfg, 2);
  for (auto* l : {&model.head_conv1(), &model.head_conv2()}) {
    for (auto& x : l->w.mutable_values()) x = 0.0f;
    for (auto& x : l->b.mutable_values()) x = 0.0f;
  }
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<IcuSample> samples = {random_sample(rng, cfg, 1 + rng.below(6), 1 + rng.below(3))};
    const IcuSample* ptrs[] = {&samples[0]};
    const auto batch = make_batch(ptrs);
    const auto out = model.forward(batch, noisy_values<float>(rng, batch), random_steps(rng, 1, cfg.diffusion_steps));
    for (float x : out.values()) CHECK(x == 0.0f);
  }
}

TEST_CASE("parameter count") {
  SUBCASE("all dimensions one, counted by hand") {
    DenoiserConfig c;
    c.d_model = c.n_heads = c.ff_dim = c.step_embed_dim = 1;
    c.n_blocks = c.encoder_layers = c.decoder_layers = 1;
    c.num_features = 1;
    c.diffusion_steps = 2;
    // feature 2, value 2, step table 2, step mlp 4, encoder 16, decoder 26, head 4
    CHECK(Denoiser<float>(c, 0).param_count() == 56);
  }
  SUBCASE("doubling d_model more than doubles the count") {
    DenoiserConfig c;
    const std::size_t base = Denoiser<float>(c, 0).param_count();
    c.d_model *= 2;
    CHECK(Denoiser<float>(c, 0).param_count() > 2 * base);
  }
  SUBCASE("default configuration against the independent inventory") {
    const DenoiserConfig c;
    const std::size_t n = Denoiser<float>(c, 0).param_count();
    CHECK(n == expected_params(c));
    MESSAGE("default parameter count: " << n);
  }
}

TEST_CASE("topologies share every parameter shape except the merge convolution") {
  const Denoiser<float> a(tiny_config(Topology::a), 1), b(tiny_config(Topology::b), 1),
      c(tiny_config(Topology::c), 1);
  REQUIRE(a.parameters().size() == c.parameters().size());
  REQUIRE(b.parameters().size() == c.parameters().size());
  for (std::size_t i = 0; i < c.parameters().size(); ++i) {
    const auto& pc = c.parameters()[i];
    CHECK(a.parameters()[i].name == pc.name);
    CHECK(b.parameters()[i].name == pc.name);
    CHECK(b.parameters()[i].tensor.shape() == pc.tensor.shape());
    if (pc.name == "head.conv1.w") {
      CHECK(a.parameters()[i].tensor.shape() == Shape{8, 8});
      CHECK(pc.tensor.shape() == Shape{24, 8});
    } else {
      CHECK(a.parameters()[i].tensor.shape() == pc.tensor.shape());
    }
  }
}

TEST_CASE("topologies differ in wiring") {
  Rng rng(3);
  const auto cfg = tiny_config();
  std::vector<IcuSample> samples = {random_sample(rng, cfg, 4, 3)};
  const IcuSample* ptrs[] = {&samples[0]};
  const auto batch = make_batch(ptrs);
  const auto noisy = noisy_values<double>(rng, batch);
  const std::vector<int> steps = {2};
  Denoiser<double> b(tiny_config(Topology::b), 1), c(tiny_config(Topology::c), 1);
  // Same weights everywhere, yet the parallel wiring feeds blocks 2 and 3 the
  // embeddings instead of the previous block's output.
  const auto ob = b.forward(batch, noisy, steps), oc = c.forward(batch, noisy, steps);
  double diff = 0.0;
  for (std::size_t i = 0; i < ob.size(); ++i) diff += std::abs(ob.at(i) - oc.at(i));
  CHECK(diff > 1e-6);
}

TEST_CASE("forward passes are deterministic") {
  const auto cfg = tiny_config();
  Rng rng(12);
  std::vector<IcuSample> samples = {random_sample(rng, cfg, 6, 3), random_sample(rng, cfg, 1, 1)};
  const IcuSample* ptrs[] = {&samples[0], &samples[1]};
  const auto batch = make_batch(ptrs);
  const auto noisy = noisy_values<float>(rng, batch);
  const std::vector<int> steps = {1, 4};
  Denoiser<float> m1(cfg, 44), m2(cfg, 44), m3(cfg, 45);
  const auto o1 = m1.forward(batch, noisy, steps), o2 = m2.forward(batch, noisy, steps),
             o3 = m3.forward(batch, noisy, steps);
  bool differs = false;
  for (std::size_t i = 0; i < o1.size(); ++i) {
    CHECK(o1.at(i) == o2.at(i));
    differs = differs || o1.at(i) != o3.at(i);
  }
  CHECK(differs);
}

TEST_CASE("configuration validation and manifest round trip") {
  DenoiserConfig c;
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(Denoiser<float>(c, 0), ConfigError);
  c = tiny_config(Topology::b);
  const auto back = DenoiserConfig::from_manifest(c.to_manifest());
  CHECK(back.to_manifest() == c.to_manifest());
  CHECK_THROWS_AS(parse_topology("d"), ConfigError);
}

TEST_CASE("parameter arrays round trip and reject wrong shapes") {
  Denoiser<float> a(tiny_config(), 1), b(tiny_config(), 2);
  b.load_arrays(a.to_arrays());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto va = a.parameters()[i].tensor.values(), vb = b.parameters()[i].tensor.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin()));
  }
  Denoiser<float> wide(tiny_config(Topology::a), 1);
  CHECK_THROWS_AS(wide.load_arrays(a.to_arrays()), ShapeError);
  auto partial = a.to_arrays();
  partial.pop_back();
  CHECK_THROWS_AS(b.load_arrays(partial), IoError);
  CHECK(b.load_arrays(partial, false) == partial.size());
}

TEST_CASE("step embedding rejects steps outside the table") {
  Denoiser<float> m(tiny_config(), 1);
  const std::vector<int> bad = {0};
  CHECK_THROWS_AS(m.step_embedding(bad), ShapeError);
  const std::vector<int> good = {1, 4};
  CHECK(m.step_embedding(good).shape() == Shape{2, 8});
}
