#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tripcast/core/adam.hpp"
#include "tripcast/core/checkpoint.hpp"
#include "tripcast/core/tensor.hpp"
#include "tripcast/data/triplet.hpp"

namespace tripcast {

/// Backbone wiring for the ablation study.
///   a: blocks in sequence; only the last block's decoder output reaches the
///      conv decoder.
///   b: blocks in parallel, each fed the embeddings directly; all three
///      decoder outputs reach the conv decoder.
///   c: blocks in sequence; all three decoder outputs reach the conv decoder
///      (the first two through skip connections).
enum class Topology : std::uint8_t { a, b, c };

Topology parse_topology(const std::string& text);
const char* to_string(Topology t) noexcept;

struct DenoiserConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 8;
  std::size_t ff_dim = 256;
  std::size_t step_embed_dim = 128;
  std::size_t n_blocks = 3;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  /// Rows of the feature table are num_features + 1 (id 0 is padding).
  std::size_t num_features = 129;
  /// Rows of the diffusion-step table.
  std::size_t diffusion_steps = 50;
  std::size_t capacity = kConditionalCapacity;
  std::size_t target_capacity = kTargetCapacity;
  Topology topology = Topology::c;

  std::size_t d_k() const { return d_model / n_heads; }
  std::size_t streams() const { return topology == Topology::a ? 1 : n_blocks; }
  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  Manifest to_manifest() const;
  static DenoiserConfig from_manifest(const Manifest& m);
};

/// Model inputs for a batch, cut to the longest valid prefix in the batch.
/// Padding slots beyond a sample's valid count keep mask 0.
struct DenoiserBatch {
  std::size_t batch = 0;
  std::size_t cond_len = 0;
  std::size_t target_len = 0;
  std::vector<std::int32_t> cond_feature, target_feature;
  std::vector<float> cond_time, cond_value, target_time, target_value;
  std::vector<std::uint8_t> cond_mask, target_mask;
  std::size_t target_valid() const;
};

/// Builds a batch. With `trim` false the full capacities are kept.
DenoiserBatch make_batch(std::span<const IcuSample* const> samples, bool trim = true);

/// Sinusoidal encoding of a scalar time into `dim` channels:
/// [sin(t w_0), cos(t w_0), sin(t w_1), ...] with w_i = 10000^(-2i/dim).
void sinusoid(double t, std::size_t dim, float* out);

template <typename T>
class Denoiser {
 public:
  struct Linear {
    Tensor<T> w, b;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct Norm {
    Tensor<T> gamma, beta;
  };
  struct EncoderLayer {
    Attention self;
    Norm ln1;
    Linear ff1, ff2;
    Norm ln2;
  };
  struct DecoderLayer {
    Attention self;
    Norm ln1;
    Attention cross;
    Norm ln2;
    Linear ff1, ff2;
    Norm ln3;
  };
  struct Block {
    std::vector<EncoderLayer> enc;
    std::vector<DecoderLayer> dec;
  };

  /// Encoder output of every block with the cross-attention keys and values
  /// of every decoder layer precomputed. A memory of batch 1 may be shared by
  /// any number of decoder rows.
  struct Memory {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<std::uint8_t> key_mask;
    std::vector<std::vector<std::pair<Tensor<T>, Tensor<T>>>> cross_kv;  // [block][layer]
  };

  Denoiser(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const noexcept { return config_; }
  std::vector<NamedParameter<T>>& parameters() noexcept { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const noexcept { return params_; }
  Tensor<T>& param(const std::string& name);
  std::size_t param_count() const noexcept;

  /// Token matrix [B, L, d_model]: feature embedding + value projection of
  /// value * mask + sinusoidal time encoding * mask.
  Tensor<T> embed(std::span<const std::int32_t> feature, std::span<const float> time,
                  std::span<const std::uint8_t> mask, const Tensor<T>& values, std::size_t batch,
                  std::size_t length) const;

  /// [B, d_model] diffusion-step embedding for steps in 1..T.
  Tensor<T> step_embedding(std::span<const int> steps) const;

  Memory encode(const DenoiserBatch& batch) const;
  /// eps prediction [B, target_len] for noisy target values [B, target_len];
  /// zero at padding slots. `memory` may have batch 1 or B.
  Tensor<T> decode(const Memory& memory, const DenoiserBatch& batch, const Tensor<T>& noisy,
                   std::span<const int> steps) const;
  Tensor<T> forward(const DenoiserBatch& batch, const Tensor<T>& noisy,
                    std::span<const int> steps) const {
    return decode(encode(batch), batch, noisy, steps);
  }

  std::vector<StoredArray> to_arrays() const;
  /// Copies every stored array whose name matches a parameter. Shapes must
  /// agree. With `require_all`, a missing parameter throws. Returns the
  /// number of parameters loaded.
  std::size_t load_arrays(const std::vector<StoredArray>& arrays, bool require_all = true);

  Block& block(std::size_t k) { return blocks_.at(k); }
  Linear& head_conv1() { return head1_; }
  Linear& head_conv2() { return head2_; }

 private:
  Tensor<T> add_param(const std::string& name, Shape shape, std::vector<T> values);
  Linear make_linear(const std::string& name, std::size_t in, std::size_t out);
  Attention make_attention(const std::string& name);
  Norm make_norm(const std::string& name);

  Tensor<T> linear(const Tensor<T>& x, const Linear& l) const;
  Tensor<T> attend(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& v,
                   std::span<const std::uint8_t> mask, const Attention& a) const;
  Tensor<T> norm(const Tensor<T>& x, const Norm& n) const;
  Tensor<T> feed_forward(const Tensor<T>& x, const Linear& a, const Linear& b) const;

  DenoiserConfig config_;
  Rng rng_;
  std::vector<NamedParameter<T>> params_;
  std::map<std::string, std::size_t> index_;
  Tensor<T> feature_table_;
  Linear value_proj_;
  Tensor<T> step_table_;
  Linear step_fc1_, step_fc2_;
  std::vector<Block> blocks_;
  Linear head1_, head2_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace tripcast
