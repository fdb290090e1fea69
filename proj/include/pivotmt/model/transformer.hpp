#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "pivotmt/corpus/batching.hpp"
#include "pivotmt/model/params.hpp"
#include "pivotmt/rng.hpp"
#include "pivotmt/tensor/autodiff.hpp"

namespace pivotmt::model {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t model_dim = 128;
  std::size_t ff_dim = 256;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  bool tied_output_embedding = true;

  // 6-layer base configuration.
  static ModelConfig base(std::size_t src_vocab, std::size_t tgt_vocab);

  // Throws ConfigError on an invalid configuration.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Seeded initialization. Weight matrices are Xavier-uniform,
// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); embeddings are
// U(-sqrt(3/d), sqrt(3/d)) so that the sqrt(d)-scaled lookup has unit
// variance; biases and layer-norm shifts are 0, layer-norm gains 1. Each
// tensor draws from its own stream keyed by name, so the values do not
// depend on creation order.
template <typename T>
ParamStore<T> init_params(const ModelConfig& config, std::uint64_t seed);

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

// Encoder output for a padded batch.
template <typename T>
struct Encoded {
  tensor::Var<T> states;  // [rows * src_len, d]
  std::size_t rows = 0;
  std::size_t src_len = 0;
  std::vector<std::uint8_t> src_pad;  // rows * src_len, 1 at padding
};

// Pre-norm encoder-decoder. The model borrows its parameters; the store
// must outlive it. An adapter M (d x d) maps every encoder state s to M s
// after the encoder's final layer norm. Output logits are (h W) / sqrt(d) + b,
// with W the target embedding table when tied.
template <typename T>
class Transformer {
 public:
  Transformer(ModelConfig config, ParamStore<T>& params);

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore<T>& params() noexcept { return *params_; }

  // src is rows x src_len, padded with <pad>.
  Encoded<T> encode(std::span<const std::int32_t> src, std::size_t rows, std::size_t src_len,
                    const tensor::Tensor<T>* adapter, const ForwardOptions& opt) const;

  // Logits [rows * tgt_len, tgt_vocab] for decoder input tgt_in.
  tensor::Var<T> decode(const Encoded<T>& memory, std::span<const std::int32_t> tgt_in, std::size_t tgt_len,
                        const ForwardOptions& opt) const;

  // Mean label-smoothed cross-entropy over non-pad target positions.
  tensor::Var<T> forward_loss(const corpus::Batch& batch, const tensor::Tensor<T>* adapter, T smoothing,
                              const ForwardOptions& opt) const;

 private:
  tensor::Var<T> embed(const char* table, std::span<const std::int32_t> ids, std::size_t rows, std::size_t len,
                       const ForwardOptions& opt) const;
  tensor::Var<T> attention(const std::string& prefix, const tensor::Var<T>& q_in, const tensor::Var<T>& kv_in,
                           std::size_t rows, std::size_t q_len, std::size_t k_len,
                           const std::vector<std::uint8_t>& mask) const;
  tensor::Var<T> feed_forward(const std::string& prefix, const tensor::Var<T>& x) const;
  tensor::Var<T> norm(const std::string& prefix, const tensor::Var<T>& x) const;
  tensor::Var<T> residual_dropout(const tensor::Var<T>& x, const ForwardOptions& opt) const;
  const tensor::Var<T>& p(const std::string& name) const { return params_->get(name); }

  ModelConfig config_;
  ParamStore<T>* params_;
};

// Sinusoidal position table [len, d].
template <typename T>
tensor::Tensor<T> positional_encoding(std::size_t len, std::size_t d);

}  // namespace pivotmt::model
