#include "pivotmt/model/transformer.hpp"

#include <cmath>
#include <string>

#include "pivotmt/error.hpp"
#include "pivotmt/hash.hpp"
#include "pivotmt/text/vocab.hpp"

namespace pivotmt::model {

using tensor::Shape;
using tensor::Tensor;
using tensor::Var;

namespace {

constexpr double kMaskFill = -1e9;

std::string layer_prefix(const char* side, std::size_t i) { return std::string(side) + ".layer" + std::to_string(i); }

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, double bound, std::uint64_t seed, const std::string& name) {
  Fnv1a h;
  h.update(name);
  Rng rng(seed * 0x9E3779B97F4A7C15ULL ^ h.digest());
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

ModelConfig ModelConfig::base(std::size_t src_vocab, std::size_t tgt_vocab) {
  ModelConfig c;
  c.layers = 6;
  c.model_dim = 512;
  c.ff_dim = 2048;
  c.heads = 8;
  c.dropout = 0.1;
  c.src_vocab_size = src_vocab;
  c.tgt_vocab_size = tgt_vocab;
  return c;
}

void ModelConfig::validate() const {
  if (layers == 0 || model_dim == 0 || ff_dim == 0 || heads == 0) {
    throw ConfigError("model: layers, model_dim, ff_dim and heads must be positive");
  }
  if (model_dim % heads != 0) {
    throw ConfigError("model: model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout outside [0,1)");
  if (src_vocab_size <= text::Vocabulary::kUnkId || tgt_vocab_size <= text::Vocabulary::kUnkId) {
    throw ConfigError("model: vocabulary sizes must cover the special tokens");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"model_dim", c.model_dim},
                     {"ff_dim", c.ff_dim},
                     {"heads", c.heads},
                     {"dropout", c.dropout},
                     {"src_vocab_size", c.src_vocab_size},
                     {"tgt_vocab_size", c.tgt_vocab_size},
                     {"tied_output_embedding", c.tied_output_embedding}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.layers = j.value("layers", d.layers);
  c.model_dim = j.value("model_dim", d.model_dim);
  c.ff_dim = j.value("ff_dim", d.ff_dim);
  c.heads = j.value("heads", d.heads);
  c.dropout = j.value("dropout", d.dropout);
  c.src_vocab_size = j.value("src_vocab_size", d.src_vocab_size);
  c.tgt_vocab_size = j.value("tgt_vocab_size", d.tgt_vocab_size);
  c.tied_output_embedding = j.value("tied_output_embedding", d.tied_output_embedding);
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.model_dim;
  const std::size_t ff = config.ff_dim;
  ParamStore<T> ps;
  auto matrix = [&](const std::string& name, Group g, std::size_t in, std::size_t out) {
    ps.add(name, g, uniform_tensor<T>({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), seed, name));
  };
  auto vec = [&](const std::string& name, Group g, std::size_t n, T value) {
    ps.add(name, g, Tensor<T>::full({n}, value));
  };
  auto layer_norm = [&](const std::string& name, Group g) {
    vec(name + ".gain", g, d, T(1));
    vec(name + ".shift", g, d, T(0));
  };
  auto attention = [&](const std::string& name, Group g) {
    for (const char* w : {"q", "k", "v", "o"}) {
      matrix(name + ".w" + w, g, d, d);
      vec(name + ".b" + w, g, d, T(0));
    }
  };
  auto feed_forward = [&](const std::string& name, Group g) {
    matrix(name + ".w1", g, d, ff);
    vec(name + ".b1", g, ff, T(0));
    matrix(name + ".w2", g, ff, d);
    vec(name + ".b2", g, d, T(0));
  };
  const double embed_bound = std::sqrt(3.0 / static_cast<double>(d));

  ps.add("src_embed.table", Group::src_embed,
         uniform_tensor<T>({config.src_vocab_size, d}, embed_bound, seed, "src_embed.table"));
  for (std::size_t i = 0; i < config.layers; ++i) {
    const auto pre = layer_prefix("encoder", i);
    layer_norm(pre + ".ln_attn", Group::encoder);
    attention(pre + ".self_attn", Group::encoder);
    layer_norm(pre + ".ln_ff", Group::encoder);
    feed_forward(pre + ".ff", Group::encoder);
  }
  layer_norm("encoder.ln_final", Group::encoder);

  ps.add("tgt_embed.table", Group::tgt_embed,
         uniform_tensor<T>({config.tgt_vocab_size, d}, embed_bound, seed, "tgt_embed.table"));
  for (std::size_t i = 0; i < config.layers; ++i) {
    const auto pre = layer_prefix("decoder", i);
    layer_norm(pre + ".ln_self", Group::decoder);
    attention(pre + ".self_attn", Group::decoder);
    layer_norm(pre + ".ln_cross", Group::decoder);
    attention(pre + ".cross_attn", Group::decoder);
    layer_norm(pre + ".ln_ff", Group::decoder);
    feed_forward(pre + ".ff", Group::decoder);
  }
  layer_norm("decoder.ln_final", Group::decoder);

  if (!config.tied_output_embedding) matrix("output_proj.weight", Group::output_proj, d, config.tgt_vocab_size);
  vec("output_proj.bias", Group::output_proj, config.tgt_vocab_size, T(0));
  return ps;
}

template <typename T>
Tensor<T> positional_encoding(std::size_t len, std::size_t d) {
  Tensor<T> pe({len, d});
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe.at(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe.at(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
Transformer<T>::Transformer(ModelConfig config, ParamStore<T>& params) : config_(std::move(config)), params_(&params) {
  config_.validate();
  const auto& src = p("src_embed.table");
  const auto& tgt = p("tgt_embed.table");
  if (src.shape() != Shape{config_.src_vocab_size, config_.model_dim} ||
      tgt.shape() != Shape{config_.tgt_vocab_size, config_.model_dim}) {
    throw ShapeError("model: embedding tables do not match the configuration");
  }
}

template <typename T>
Var<T> Transformer<T>::embed(const char* table, std::span<const std::int32_t> ids, std::size_t rows, std::size_t len,
                             const ForwardOptions& opt) const {
  const std::size_t d = config_.model_dim;
  auto x = tensor::scale(tensor::embedding(p(table), ids), static_cast<T>(std::sqrt(static_cast<double>(d))));
  const auto pe = positional_encoding<T>(len, d);
  Tensor<T> pos({rows * len, d});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(pe.data().begin(), pe.data().end(), pos.data().begin() + static_cast<long>(r * len * d));
  }
  return residual_dropout(tensor::add(x, Var<T>::constant(std::move(pos))), opt);
}

template <typename T>
Var<T> Transformer<T>::norm(const std::string& prefix, const Var<T>& x) const {
  return tensor::layer_norm(x, p(prefix + ".gain"), p(prefix + ".shift"));
}

template <typename T>
Var<T> Transformer<T>::residual_dropout(const Var<T>& x, const ForwardOptions& opt) const {
  if (!opt.training || config_.dropout <= 0.0) return x;
  if (opt.rng == nullptr) throw ConfigError("model: training with dropout needs a random generator");
  return tensor::dropout(x, config_.dropout, *opt.rng);
}

template <typename T>
Var<T> Transformer<T>::attention(const std::string& prefix, const Var<T>& q_in, const Var<T>& kv_in, std::size_t rows,
                                 std::size_t q_len, std::size_t k_len, const std::vector<std::uint8_t>& mask) const {
  const std::size_t d = config_.model_dim;
  const std::size_t h = config_.heads;
  const std::size_t dh = d / h;
  auto project = [&](const Var<T>& x, const char* w) {
    return tensor::add_bias(tensor::matmul(x, p(prefix + ".w" + w)), p(prefix + ".b" + w));
  };
  auto split = [&](const Var<T>& x, std::size_t len) {
    return tensor::reshape(tensor::permute(tensor::reshape(x, {rows, len, h, dh}), {0, 2, 1, 3}), {rows * h, len, dh});
  };
  const auto q = split(tensor::scale(project(q_in, "q"), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)))), q_len);
  const auto k = split(project(kv_in, "k"), k_len);
  const auto v = split(project(kv_in, "v"), k_len);
  auto scores = tensor::bmm(q, k, true);
  scores = tensor::softmax(tensor::masked_fill(scores, mask, static_cast<T>(kMaskFill)));
  auto ctx = tensor::bmm(scores, v);
  ctx = tensor::reshape(tensor::permute(tensor::reshape(ctx, {rows, h, q_len, dh}), {0, 2, 1, 3}), {rows * q_len, d});
  return project(ctx, "o");
}

template <typename T>
Var<T> Transformer<T>::feed_forward(const std::string& prefix, const Var<T>& x) const {
  auto hidden = tensor::relu(tensor::add_bias(tensor::matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
  return tensor::add_bias(tensor::matmul(hidden, p(prefix + ".w2")), p(prefix + ".b2"));
}

template <typename T>
Encoded<T> Transformer<T>::encode(std::span<const std::int32_t> src, std::size_t rows, std::size_t src_len,
                                  const Tensor<T>* adapter, const ForwardOptions& opt) const {
  if (src.size() != rows * src_len || rows == 0 || src_len == 0) {
    throw ShapeError("encode: " + std::to_string(src.size()) + " ids for a " + std::to_string(rows) + "x" +
                     std::to_string(src_len) + " batch");
  }
  const std::size_t d = config_.model_dim;
  const std::size_t h = config_.heads;
  Encoded<T> out;
  out.rows = rows;
  out.src_len = src_len;
  out.src_pad.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out.src_pad[i] = src[i] == text::Vocabulary::kPadId;

  std::vector<std::uint8_t> mask(rows * h * src_len * src_len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t i = 0; i < src_len; ++i) {
        auto* row = mask.data() + ((r * h + hh) * src_len + i) * src_len;
        for (std::size_t j = 0; j < src_len; ++j) row[j] = out.src_pad[r * src_len + j];
      }
    }
  }

  auto x = embed("src_embed.table", src, rows, src_len, opt);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const auto pre = layer_prefix("encoder", l);
    const auto a = norm(pre + ".ln_attn", x);
    x = tensor::add(x, residual_dropout(attention(pre + ".self_attn", a, a, rows, src_len, src_len, mask), opt));
    x = tensor::add(x, residual_dropout(feed_forward(pre + ".ff", norm(pre + ".ln_ff", x)), opt));
  }
  x = norm("encoder.ln_final", x);
  if (adapter != nullptr) {
    if (adapter->shape() != Shape{d, d}) {
      throw ShapeError("encode: adapter " + tensor::shape_str(adapter->shape()) + " does not match model_dim " +
                       std::to_string(d));
    }
    // Row-vector states: (M s)^T = s^T M^T.
    Tensor<T> mt({d, d});
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) mt.at(j, i) = adapter->at(i, j);
    }
    x = tensor::matmul(x, Var<T>::constant(std::move(mt)));
  }
  out.states = x;
  return out;
}

template <typename T>
Var<T> Transformer<T>::decode(const Encoded<T>& memory, std::span<const std::int32_t> tgt_in, std::size_t tgt_len,
                              const ForwardOptions& opt) const {
  const std::size_t rows = memory.rows;
  const std::size_t s_len = memory.src_len;
  const std::size_t h = config_.heads;
  if (tgt_in.size() != rows * tgt_len || tgt_len == 0) {
    throw ShapeError("decode: " + std::to_string(tgt_in.size()) + " ids for a " + std::to_string(rows) + "x" +
                     std::to_string(tgt_len) + " batch");
  }
  // Causal masking alone suffices for self-attention: padding only follows
  // real tokens, and padded query rows are never scored.
  std::vector<std::uint8_t> self_mask(rows * h * tgt_len * tgt_len);
  std::vector<std::uint8_t> cross_mask(rows * h * tgt_len * s_len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t i = 0; i < tgt_len; ++i) {
        auto* srow = self_mask.data() + ((r * h + hh) * tgt_len + i) * tgt_len;
        for (std::size_t j = i + 1; j < tgt_len; ++j) srow[j] = 1;
        auto* crow = cross_mask.data() + ((r * h + hh) * tgt_len + i) * s_len;
        for (std::size_t j = 0; j < s_len; ++j) crow[j] = memory.src_pad[r * s_len + j];
      }
    }
  }

  auto x = embed("tgt_embed.table", tgt_in, rows, tgt_len, opt);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const auto pre = layer_prefix("decoder", l);
    const auto a = norm(pre + ".ln_self", x);
    x = tensor::add(x, residual_dropout(attention(pre + ".self_attn", a, a, rows, tgt_len, tgt_len, self_mask), opt));
    const auto c = norm(pre + ".ln_cross", x);
    x = tensor::add(
        x, residual_dropout(attention(pre + ".cross_attn", c, memory.states, rows, tgt_len, s_len, cross_mask), opt));
    x = tensor::add(x, residual_dropout(feed_forward(pre + ".ff", norm(pre + ".ln_ff", x)), opt));
  }
  x = norm("decoder.ln_final", x);

  const std::size_t n = rows * tgt_len;
  const std::size_t d = config_.model_dim;
  const std::size_t v = config_.tgt_vocab_size;
  Var<T> logits;
  if (config_.tied_output_embedding) {
    logits = tensor::bmm(tensor::reshape(x, {1, n, d}), tensor::reshape(p("tgt_embed.table"), {1, v, d}), true);
    logits = tensor::reshape(logits, {n, v});
  } else {
    logits = tensor::matmul(x, p("output_proj.weight"));
  }
  // 1/sqrt(d) keeps initial logits near zero, so an untrained model starts
  // close to the uniform distribution.
  logits = tensor::scale(logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  return tensor::add_bias(logits, p("output_proj.bias"));
}

template <typename T>
Var<T> Transformer<T>::forward_loss(const corpus::Batch& batch, const Tensor<T>* adapter, T smoothing,
                                    const ForwardOptions& opt) const {
  const auto memory = encode(batch.src, batch.rows, batch.src_len, adapter, opt);
  const auto logits = decode(memory, batch.tgt_in, batch.tgt_len, opt);
  std::vector<std::int32_t> targets(batch.tgt_out.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    targets[i] = batch.tgt_out[i] == text::Vocabulary::kPadId ? -1 : batch.tgt_out[i];
  }
  return tensor::cross_entropy(logits, targets, -1, smoothing);
}

template ParamStore<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ParamStore<double> init_params<double>(const ModelConfig&, std::uint64_t);
template Tensor<float> positional_encoding<float>(std::size_t, std::size_t);
template Tensor<double> positional_encoding<double>(std::size_t, std::size_t);
template class Transformer<float>;
template class Transformer<double>;

}  // namespace pivotmt::model
