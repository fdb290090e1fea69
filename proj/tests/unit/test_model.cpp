#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "pivotmt/corpus/batching.hpp"
#include "pivotmt/error.hpp"
#include "pivotmt/model/transformer.hpp"

using namespace pivotmt;
using namespace pivotmt::model;
using tensor::Tensor;
using tensor::Var;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.model_dim = 8;
  c.ff_dim = 12;
  c.heads = 2;
  c.dropout = 0.0;
  c.src_vocab_size = 11;
  c.tgt_vocab_size = 13;
  return c;
}

std::vector<corpus::SentencePair> random_pairs(std::size_t n, std::size_t max_len, std::size_t vs, std::size_t vt,
                                               Rng& rng) {
  std::vector<corpus::SentencePair> out(n);
  for (auto& p : out) {
    const std::size_t ls = 1 + rng.below(max_len);
    const std::size_t lt = 1 + rng.below(max_len);
    for (std::size_t i = 0; i < ls; ++i) p.src.push_back(static_cast<std::int32_t>(4 + rng.below(vs - 4)));
    for (std::size_t i = 0; i < lt; ++i) p.tgt.push_back(static_cast<std::int32_t>(4 + rng.below(vt - 4)));
  }
  return out;
}

corpus::Batch batch_of(const std::vector<corpus::SentencePair>& pairs) {
  std::vector<const corpus::SentencePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  return corpus::make_batch(ptrs);
}

// Summed token cross-entropy of one batch row, computed from raw logits.
double row_loss(const Tensor<double>& logits, const corpus::Batch& b, std::size_t row, std::size_t v) {
  double total = 0.0;
  for (std::size_t t = 0; t < b.tgt_len; ++t) {
    const auto target = b.tgt_out[row * b.tgt_len + t];
    if (target == 0) continue;
    const double* z = logits.storage().data() + (row * b.tgt_len + t) * v;
    double mx = z[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(z[j] - mx);
    total += mx + std::log(s) - z[target];
  }
  return total;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.model_dim, ff = c.ff_dim;
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t ffn = d * ff + ff + ff * d + d;
  const std::size_t enc_layer = 2 * 2 * d + attn + ffn;
  const std::size_t dec_layer = 3 * 2 * d + 2 * attn + ffn;
  std::size_t n = c.src_vocab_size * d + c.layers * enc_layer + 2 * d;
  n += c.tgt_vocab_size * d + c.layers * dec_layer + 2 * d;
  n += c.tgt_vocab_size;
  if (!c.tied_output_embedding) n += d * c.tgt_vocab_size;
  return n;
}

}  // namespace

TEST_CASE("initialization is seeded") {
  const auto c = tiny_config();
  const auto a = init_params<float>(c, 5);
  const auto b = init_params<float>(c, 5);
  const auto other = init_params<float>(c, 6);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    CHECK(a.entries()[i].name == b.entries()[i].name);
    CHECK(a.entries()[i].var.value() == b.entries()[i].var.value());
    any_diff = any_diff || !(a.entries()[i].var.value() == other.entries()[i].var.value());
  }
  CHECK(any_diff);
}

TEST_CASE("desk-scale parameter count") {
  ModelConfig c;
  c.src_vocab_size = 100;
  c.tgt_vocab_size = 120;
  const auto ps = init_params<float>(c, 1);
  CHECK(ps.parameter_count() == expected_parameter_count(c));
  CHECK(ps.parameter_count() == 691320);
  c.tied_output_embedding = false;
  CHECK(init_params<float>(c, 1).parameter_count() == 691320 + 128 * 120);
}

TEST_CASE("every parameter belongs to one named group") {
  auto ps = init_params<float>(tiny_config(), 1);
  std::size_t total = 0;
  for (auto g : kAllGroups) {
    CHECK(ps.group_parameter_count(g) > 0);
    total += ps.group_parameter_count(g);
  }
  CHECK(total == ps.parameter_count());
  CHECK(ps.get("encoder.layer0.self_attn.wq").shape() == tensor::Shape{8, 8});
  CHECK_THROWS_AS(ps.get("encoder.nothing"), ConfigError);
  CHECK(group_from_string("decoder") == Group::decoder);
  CHECK_THROWS_AS(group_from_string("cross"), ConfigError);
}

TEST_CASE("invalid configuration") {
  auto c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(init_params<float>(c, 1), ConfigError);
}

TEST_CASE("encoder output shape and unknown ids") {
  auto ps = init_params<double>(tiny_config(), 1);
  Transformer<double> m(tiny_config(), ps);
  const std::vector<std::int32_t> src{5, 6, 7, 8, 9, 0};
  const auto enc = m.encode(src, 2, 3, nullptr, {});
  CHECK(enc.states.shape() == tensor::Shape{6, 8});
  const std::vector<std::int32_t> bad{5, 60};
  CHECK_THROWS_AS(m.encode(bad, 1, 2, nullptr, {}), VocabError);
}

TEST_CASE("adapter multiplies every encoder state") {
  auto ps = init_params<double>(tiny_config(), 2);
  Transformer<double> m(tiny_config(), ps);
  const std::vector<std::int32_t> src{5, 6, 7, 8, 9, 0};
  const auto plain = m.encode(src, 2, 3, nullptr, {}).states.value();

  const auto eye = Tensor<double>::identity(8);
  CHECK(m.encode(src, 2, 3, &eye, {}).states.value() == plain);

  Rng rng(3);
  const auto mtx = testing::random_tensor({8, 8}, rng);
  const auto mapped = m.encode(src, 2, 3, &mtx, {}).states.value();
  for (std::size_t pos = 0; pos < 6; ++pos) {
    for (std::size_t i = 0; i < 8; ++i) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 8; ++j) expect += mtx.at(i, j) * plain.at(pos, j);
      CHECK(mapped.at(pos, i) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  const auto wrong = Tensor<double>::identity(4);
  CHECK_THROWS_AS(m.encode(src, 2, 3, &wrong, {}), ShapeError);
}

TEST_CASE("untrained loss is near ln V") {
  ModelConfig c;
  c.src_vocab_size = 200;
  c.tgt_vocab_size = 200;
  c.model_dim = 64;
  c.ff_dim = 128;
  auto ps = init_params<float>(c, 4);
  Transformer<float> m(c, ps);
  Rng rng(8);
  const auto pairs = random_pairs(32, 12, 200, 200, rng);
  const auto loss = m.forward_loss(batch_of(pairs), nullptr, 0.0f, {}).value()[0];
  CHECK(std::abs(loss - std::log(200.0)) <= 0.1 * std::log(200.0));
}

TEST_CASE("all-padding target is rejected") {
  auto ps = init_params<double>(tiny_config(), 1);
  Transformer<double> m(tiny_config(), ps);
  corpus::Batch b;
  b.rows = 1;
  b.src_len = 2;
  b.tgt_len = 2;
  b.src = {5, 6};
  b.tgt_in = {1, 0};
  b.tgt_out = {0, 0};
  CHECK_THROWS_AS(m.forward_loss(b, nullptr, 0.0, {}), ShapeError);
}

TEST_CASE("decoder is causal") {
  auto ps = init_params<double>(tiny_config(), 9);
  Transformer<double> m(tiny_config(), ps);
  const std::vector<std::int32_t> src{5, 6, 7};
  const auto enc = m.encode(src, 1, 3, nullptr, {});
  std::vector<std::int32_t> tgt{1, 5, 6, 7, 8};
  const auto base = m.decode(enc, tgt, 5, {}).value();
  const std::size_t v = 13;
  for (std::size_t t = 1; t < 5; ++t) {
    auto changed = tgt;
    for (std::size_t k = t; k < 5; ++k) changed[k] = 12;
    const auto out = m.decode(enc, changed, 5, {}).value();
    for (std::size_t pos = 0; pos < t; ++pos) {
      for (std::size_t j = 0; j < v; ++j) CHECK(out[pos * v + j] == base[pos * v + j]);
    }
    bool moved = false;
    for (std::size_t j = 0; j < v; ++j) moved = moved || out[t * v + j] != base[t * v + j];
    CHECK(moved);
  }
}

TEST_CASE("padding does not change per-sentence losses") {
  auto ps = init_params<double>(tiny_config(), 10);
  Transformer<double> m(tiny_config(), ps);
  Rng rng(11);
  std::vector<corpus::SentencePair> alone{{{5, 6, 7}, {8, 9}}};
  std::vector<corpus::SentencePair> padded{alone[0], {{5, 6, 7, 8, 9, 10, 5}, {8, 9, 10, 11, 12, 4}}};
  const auto b1 = batch_of(alone);
  const auto b2 = batch_of(padded);
  auto logits = [&](const corpus::Batch& b) {
    return m.decode(m.encode(b.src, b.rows, b.src_len, nullptr, {}), b.tgt_in, b.tgt_len, {}).value();
  };
  const double l1 = row_loss(logits(b1), b1, 0, 13);
  const double l2 = row_loss(logits(b2), b2, 0, 13);
  CHECK(std::abs(l1 - l2) <= 1e-6);
}

TEST_CASE("dropout needs a generator only when training") {
  auto c = tiny_config();
  c.dropout = 0.2;
  auto ps = init_params<float>(c, 1);
  Transformer<float> m(c, ps);
  Rng rng(1);
  const auto b = batch_of(random_pairs(3, 5, 11, 13, rng));
  CHECK_NOTHROW(m.forward_loss(b, nullptr, 0.1f, {}));
  CHECK_THROWS_AS(m.forward_loss(b, nullptr, 0.1f, {true, nullptr}), ConfigError);
  Rng a(4), a2(4);
  const auto x = m.forward_loss(b, nullptr, 0.1f, {true, &a}).value()[0];
  const auto y = m.forward_loss(b, nullptr, 0.1f, {true, &a2}).value()[0];
  CHECK(x == y);
}

TEST_CASE("freezing a group stops its gradients") {
  auto ps = init_params<float>(tiny_config(), 3);
  ps.set_frozen(Group::encoder, true);
  Transformer<float> m(tiny_config(), ps);
  Rng rng(2);
  const auto b = batch_of(random_pairs(4, 5, 11, 13, rng));
  tensor::backward(m.forward_loss(b, nullptr, 0.1f, {}));
  for (const auto& e : ps.entries()) {
    if (e.group == Group::encoder) CHECK_FALSE(e.var.has_grad());
  }
  CHECK(ps.get("decoder.layer0.cross_attn.wk").has_grad());
  CHECK(ps.get("src_embed.table").has_grad());
}

TEST_CASE("full-model gradient matches finite differences") {
  for (const bool tied : {true, false}) {
    auto c = tiny_config();
    c.tied_output_embedding = tied;
    auto ps = init_params<double>(c, 21);
    Transformer<double> m(c, ps);
    Rng rng(5);
    const auto b = batch_of(random_pairs(3, 5, 11, 13, rng));
    // An adapter keeps the post-encoder multiply on the checked path.
    const auto adapter = testing::random_tensor({8, 8}, rng, -0.5, 0.5);
    std::vector<Var<double>> inputs;
    for (const auto& e : ps.entries()) inputs.push_back(e.var);
    const auto r = testing::gradcheck(inputs, [&](const std::vector<Var<double>>&) {
      return m.forward_loss(b, &adapter, 0.1, {});
    });
    CHECK(r.checked == ps.parameter_count());
    CHECK(r.max_rel_error < 1e-4);
  }
}
