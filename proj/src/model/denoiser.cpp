#include "tripcast/model/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "tripcast/core/error.hpp"
#include "tripcast/core/ops.hpp"

namespace tripcast {

Topology parse_topology(const std::string& text) {
  if (text == "a") return Topology::a;
  if (text == "b") return Topology::b;
  if (text == "c") return Topology::c;
  throw ConfigError("unknown topology '" + text + "' (expected a, b or c)");
}

const char* to_string(Topology t) noexcept {
  switch (t) {
    case Topology::a: return "a";
    case Topology::b: return "b";
    case Topology::c: return "c";
  }
  return "?";
}

void DenoiserConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model: " + what);
  };
  need(d_model > 0 && n_heads > 0, "d_model and n_heads must be positive");
  need(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) +
                                   ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  need(ff_dim > 0 && step_embed_dim > 0, "ff_dim and step_embed_dim must be positive");
  need(n_blocks > 0 && encoder_layers > 0 && decoder_layers > 0, "need at least one block and layer");
  need(num_features > 0, "num_features must be positive");
  need(diffusion_steps >= 2, "diffusion_steps must be at least 2");
  need(capacity > 0 && target_capacity > 0, "capacities must be positive");
}

Manifest DenoiserConfig::to_manifest() const {
  return {{"model.d_model", std::to_string(d_model)},
          {"model.n_heads", std::to_string(n_heads)},
          {"model.ff_dim", std::to_string(ff_dim)},
          {"model.step_embed_dim", std::to_string(step_embed_dim)},
          {"model.n_blocks", std::to_string(n_blocks)},
          {"model.encoder_layers", std::to_string(encoder_layers)},
          {"model.decoder_layers", std::to_string(decoder_layers)},
          {"model.num_features", std::to_string(num_features)},
          {"model.diffusion_steps", std::to_string(diffusion_steps)},
          {"model.capacity", std::to_string(capacity)},
          {"model.target_capacity", std::to_string(target_capacity)},
          {"model.topology", to_string(topology)}};
}

DenoiserConfig DenoiserConfig::from_manifest(const Manifest& m) {
  auto num = [&](const char* key) -> std::size_t {
    const auto it = m.find(key);
    if (it == m.end()) throw ConfigError(std::string("checkpoint manifest lacks ") + key);
    return static_cast<std::size_t>(std::stoull(it->second));
  };
  DenoiserConfig c;
  c.d_model = num("model.d_model");
  c.n_heads = num("model.n_heads");
  c.ff_dim = num("model.ff_dim");
  c.step_embed_dim = num("model.step_embed_dim");
  c.n_blocks = num("model.n_blocks");
  c.encoder_layers = num("model.encoder_layers");
  c.decoder_layers = num("model.decoder_layers");
  c.num_features = num("model.num_features");
  c.diffusion_steps = num("model.diffusion_steps");
  c.capacity = num("model.capacity");
  c.target_capacity = num("model.target_capacity");
  const auto it = m.find("model.topology");
  if (it == m.end()) throw ConfigError("checkpoint manifest lacks model.topology");
  c.topology = parse_topology(it->second);
  c.validate();
  return c;
}

std::size_t DenoiserBatch::target_valid() const {
  return static_cast<std::size_t>(std::count(target_mask.begin(), target_mask.end(), 1));
}

DenoiserBatch make_batch(std::span<const IcuSample* const> samples, bool trim) {
  if (samples.empty()) throw DataError("make_batch: empty batch");
  DenoiserBatch b;
  b.batch = samples.size();
  const std::size_t cap = samples[0]->conditional.size();
  const std::size_t tcap = samples[0]->target.size();
  for (const IcuSample* s : samples) {
    if (s->conditional.size() != cap || s->target.size() != tcap)
      throw ShapeError("make_batch: samples with different capacities in one batch");
    if (trim) {
      b.cond_len = std::max(b.cond_len, s->conditional_count());
      b.target_len = std::max(b.target_len, s->target_count());
    }
  }
  if (!trim) {
    b.cond_len = cap;
    b.target_len = tcap;
  }
  b.cond_len = std::max<std::size_t>(b.cond_len, 1);
  b.target_len = std::max<std::size_t>(b.target_len, 1);
  auto fill = [](const std::vector<Triplet>& slots, std::size_t len, std::vector<std::int32_t>& f,
                 std::vector<float>& t, std::vector<float>& v, std::vector<std::uint8_t>& m) {
    std::size_t written = 0;
    for (const Triplet& x : slots) {
      if (written == len) break;
      // Valid slots lead the array, so a prefix of length len keeps them all.
      f.push_back(x.mask ? x.feature_id : kPaddingFeature);
      t.push_back(x.mask ? x.time : 0.0f);
      v.push_back(x.mask ? x.value : 0.0f);
      m.push_back(x.mask);
      ++written;
    }
  };
  for (const IcuSample* s : samples) {
    fill(s->conditional, b.cond_len, b.cond_feature, b.cond_time, b.cond_value, b.cond_mask);
    fill(s->target, b.target_len, b.target_feature, b.target_time, b.target_value, b.target_mask);
  }
  return b;
}

void sinusoid(double t, std::size_t dim, float* out) {
  thread_local std::size_t cached_dim = 0;
  thread_local std::vector<double> freq;
  if (cached_dim != dim) {
    freq.assign((dim + 1) / 2, 0.0);
    for (std::size_t i = 0; i < freq.size(); ++i)
      freq[i] = std::pow(10000.0, -2.0 * double(i) / double(dim));
    cached_dim = dim;
  }
  for (std::size_t i = 0; 2 * i < dim; ++i) {
    const double w = freq[i];
    out[2 * i] = static_cast<float>(std::sin(t * w));
    if (2 * i + 1 < dim) out[2 * i + 1] = static_cast<float>(std::cos(t * w));
  }
}

template <typename T>
Tensor<T> Denoiser<T>::add_param(const std::string& name, Shape shape, std::vector<T> values) {
  if (index_.count(name)) throw Error("StateError", "duplicate parameter name " + name);
  auto t = Tensor<T>::parameter(std::move(shape), std::move(values));
  index_[name] = params_.size();
  params_.push_back({name, t});
  return t;
}

template <typename T>
typename Denoiser<T>::Linear Denoiser<T>::make_linear(const std::string& name, std::size_t in,
                                                      std::size_t out) {
  const double bound = 1.0 / std::sqrt(double(in));
  std::vector<T> w(in * out);
  for (auto& x : w) x = static_cast<T>(rng_.uniform(-bound, bound));
  Linear l;
  l.w = add_param(name + ".w", {in, out}, std::move(w));
  l.b = add_param(name + ".b", {out}, std::vector<T>(out, T(0)));
  return l;
}

template <typename T>
typename Denoiser<T>::Attention Denoiser<T>::make_attention(const std::string& name) {
  const std::size_t d = config_.d_model;
  return {make_linear(name + ".q", d, d), make_linear(name + ".k", d, d),
          make_linear(name + ".v", d, d), make_linear(name + ".o", d, d)};
}

template <typename T>
typename Denoiser<T>::Norm Denoiser<T>::make_norm(const std::string& name) {
  const std::size_t d = config_.d_model;
  return {add_param(name + ".g", {d}, std::vector<T>(d, T(1))),
          add_param(name + ".b", {d}, std::vector<T>(d, T(0)))};
}

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, std::uint64_t seed)
    : config_(config), rng_(Rng(seed).fork(fnv1a64("denoiser.init"))) {
  config_.validate();
  const std::size_t d = config_.d_model;
  {
    std::vector<T> table((config_.num_features + 1) * d);
    for (auto& x : table) x = static_cast<T>(rng_.uniform(-1.0, 1.0));
    feature_table_ = add_param("embed.feature", {config_.num_features + 1, d}, std::move(table));
  }
  value_proj_ = make_linear("embed.value", 1, d);
  {
    const std::size_t T_ = config_.diffusion_steps, e = config_.step_embed_dim;
    std::vector<float> row(e);
    std::vector<T> table(T_ * e);
    for (std::size_t t = 0; t < T_; ++t) {
      sinusoid(double(t + 1), e, row.data());
      std::copy(row.begin(), row.end(), table.begin() + static_cast<std::ptrdiff_t>(t * e));
    }
    step_table_ = add_param("step.table", {T_, e}, std::move(table));
  }
  step_fc1_ = make_linear("step.fc1", config_.step_embed_dim, d);
  step_fc2_ = make_linear("step.fc2", d, d);
  for (std::size_t k = 0; k < config_.n_blocks; ++k) {
    Block blk;
    const std::string bn = "block" + std::to_string(k + 1);
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
      const std::string n = bn + ".enc" + std::to_string(l + 1);
      EncoderLayer e;
      e.self = make_attention(n + ".self");
      e.ln1 = make_norm(n + ".ln1");
      e.ff1 = make_linear(n + ".ff1", d, config_.ff_dim);
      e.ff2 = make_linear(n + ".ff2", config_.ff_dim, d);
      e.ln2 = make_norm(n + ".ln2");
      blk.enc.push_back(std::move(e));
    }
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
      const std::string n = bn + ".dec" + std::to_string(l + 1);
      DecoderLayer dl;
      dl.self = make_attention(n + ".self");
      dl.ln1 = make_norm(n + ".ln1");
      dl.cross = make_attention(n + ".cross");
      dl.ln2 = make_norm(n + ".ln2");
      dl.ff1 = make_linear(n + ".ff1", d, config_.ff_dim);
      dl.ff2 = make_linear(n + ".ff2", config_.ff_dim, d);
      dl.ln3 = make_norm(n + ".ln3");
      blk.dec.push_back(std::move(dl));
    }
    blocks_.push_back(std::move(blk));
  }
  head1_ = make_linear("head.conv1", config_.streams() * d, d);
  head2_ = make_linear("head.conv2", d, 1);
}

template <typename T>
Tensor<T>& Denoiser<T>::param(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error("StateError", "no parameter named " + name);
  return params_[it->second].tensor;
}

template <typename T>
std::size_t Denoiser<T>::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <typename T>
Tensor<T> Denoiser<T>::linear(const Tensor<T>& x, const Linear& l) const {
  return add(matmul(x, l.w), l.b);
}

template <typename T>
Tensor<T> Denoiser<T>::attend(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& v,
                              std::span<const std::uint8_t> mask, const Attention& a) const {
  return linear(multi_head_attention(linear(x, a.q), k, v, mask, config_.n_heads), a.o);
}

template <typename T>
Tensor<T> Denoiser<T>::norm(const Tensor<T>& x, const Norm& n) const {
  return layer_norm(x, n.gamma, n.beta);
}

template <typename T>
Tensor<T> Denoiser<T>::feed_forward(const Tensor<T>& x, const Linear& a, const Linear& b) const {
  return linear(gelu(linear(x, a)), b);
}

template <typename T>
Tensor<T> Denoiser<T>::embed(std::span<const std::int32_t> feature, std::span<const float> time,
                             std::span<const std::uint8_t> mask, const Tensor<T>& values,
                             std::size_t batch, std::size_t length) const {
  const std::size_t d = config_.d_model, n = batch * length;
  if (feature.size() != n || time.size() != n || mask.size() != n || values.size() != n)
    throw ShapeError("embed: token arrays do not match batch " + std::to_string(batch) + " x " +
                     std::to_string(length));
  std::vector<T> m(n), enc(n * d, T(0));
  std::vector<float> row(d);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = mask[i] ? T(1) : T(0);
    if (!mask[i]) continue;
    sinusoid(time[i], d, row.data());
    std::copy(row.begin(), row.end(), enc.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::int32_t> ids(feature.begin(), feature.end());
  for (std::size_t i = 0; i < n; ++i)
    if (!mask[i]) ids[i] = kPaddingFeature;
  const Tensor<T> masked = mul(reshape(values, {batch, length, 1}), Tensor<T>({batch, length, 1}, m));
  const Tensor<T> feat = embedding(feature_table_, std::span<const std::int32_t>(ids), Shape{batch, length});
  return add(add(feat, linear(masked, value_proj_)), Tensor<T>({batch, length, d}, std::move(enc)));
}

template <typename T>
Tensor<T> Denoiser<T>::step_embedding(std::span<const int> steps) const {
  std::vector<std::int32_t> rows(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] < 1 || static_cast<std::size_t>(steps[i]) > config_.diffusion_steps)
      throw ShapeError("step_embedding: step " + std::to_string(steps[i]) + " outside 1.." +
                       std::to_string(config_.diffusion_steps));
    rows[i] = steps[i] - 1;
  }
  const auto e = embedding(step_table_, std::span<const std::int32_t>(rows), Shape{steps.size()});
  return linear(gelu(linear(e, step_fc1_)), step_fc2_);
}

template <typename T>
typename Denoiser<T>::Memory Denoiser<T>::encode(const DenoiserBatch& b) const {
  const std::size_t B = b.batch, L = b.cond_len;
  Memory mem;
  mem.batch = B;
  mem.length = L;
  mem.key_mask = b.cond_mask;
  const Tensor<T> values({B, L}, std::vector<T>(b.cond_value.begin(), b.cond_value.end()));
  const Tensor<T> tokens = embed(b.cond_feature, b.cond_time, b.cond_mask, values, B, L);
  const std::span<const std::uint8_t> mask(mem.key_mask);
  Tensor<T> x = tokens;
  for (const Block& blk : blocks_) {
    if (config_.topology == Topology::b) x = tokens;
    for (const EncoderLayer& e : blk.enc) {
      x = norm(add(x, attend(x, linear(x, e.self.k), linear(x, e.self.v), mask, e.self)), e.ln1);
      x = norm(add(x, feed_forward(x, e.ff1, e.ff2)), e.ln2);
    }
    std::vector<std::pair<Tensor<T>, Tensor<T>>> kv;
    for (const DecoderLayer& dl : blk.dec) kv.emplace_back(linear(x, dl.cross.k), linear(x, dl.cross.v));
    mem.cross_kv.push_back(std::move(kv));
  }
  return mem;
}

template <typename T>
Tensor<T> Denoiser<T>::decode(const Memory& mem, const DenoiserBatch& b, const Tensor<T>& noisy,
                              std::span<const int> steps) const {
  const std::size_t B = b.batch, L = b.target_len;
  if (noisy.shape() != Shape{B, L})
    throw ShapeError("decode: noisy values " + to_string(noisy.shape()) + " vs target slots " +
                     to_string(Shape{B, L}));
  if (steps.size() != B) throw ShapeError("decode: one diffusion step per batch row required");
  if (mem.batch != B && mem.batch != 1)
    throw ShapeError("decode: memory batch " + std::to_string(mem.batch) + " vs " + std::to_string(B));
  const std::span<const std::uint8_t> self_mask(b.target_mask);
  const std::span<const std::uint8_t> cross_mask(mem.key_mask);

  const Tensor<T> tokens = add(embed(b.target_feature, b.target_time, b.target_mask, noisy, B, L),
                               expand(step_embedding(steps), 1, L));
  std::vector<Tensor<T>> streams;
  Tensor<T> x = tokens;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const Block& blk = blocks_[k];
    if (config_.topology == Topology::b) x = tokens;
    for (std::size_t l = 0; l < blk.dec.size(); ++l) {
      const DecoderLayer& dl = blk.dec[l];
      const auto& [ck, cv] = mem.cross_kv[k][l];
      x = norm(add(x, attend(x, linear(x, dl.self.k), linear(x, dl.self.v), self_mask, dl.self)), dl.ln1);
      x = norm(add(x, attend(x, ck, cv, cross_mask, dl.cross)), dl.ln2);
      x = norm(add(x, feed_forward(x, dl.ff1, dl.ff2)), dl.ln3);
    }
    if (config_.topology != Topology::a || k + 1 == blocks_.size()) streams.push_back(x);
  }
  const Tensor<T> merged = streams.size() == 1 ? streams[0] : concat(streams, 2);
  // Two width-1 convolutions over the target axis.
  const auto conv = [](const Tensor<T>& in, const Linear& l) {
    return conv1d(in, reshape(l.w, {1, l.w.dim(0), l.w.dim(1)}), l.b, 0);
  };
  const Tensor<T> h = gelu(conv(merged, head1_));
  const Tensor<T> out = reshape(conv(h, head2_), {B, L});
  std::vector<T> m(B * L);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = b.target_mask[i] ? T(1) : T(0);
  return mul(out, Tensor<T>({B, L}, std::move(m)));
}

template <typename T>
std::vector<StoredArray> Denoiser<T>::to_arrays() const {
  std::vector<StoredArray> out;
  for (const auto& p : params_) out.push_back(to_stored(p.name, p.tensor));
  return out;
}

template <typename T>
std::size_t Denoiser<T>::load_arrays(const std::vector<StoredArray>& arrays, bool require_all) {
  std::map<std::string, const StoredArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  std::size_t loaded = 0;
  for (auto& p : params_) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      if (require_all) throw IoError("checkpoint lacks parameter " + p.name);
      continue;
    }
    if (it->second->shape != p.tensor.shape())
      throw ShapeError("checkpoint parameter " + p.name + " has shape " +
                       tripcast::to_string(it->second->shape) + ", model expects " +
                       tripcast::to_string(p.tensor.shape()));
    auto dst = p.tensor.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    ++loaded;
  }
  return loaded;
}

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace tripcast
