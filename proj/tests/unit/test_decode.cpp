#include <doctest.h>

#include <chrono>

#include "pivotmt/decode/bleu.hpp"
#include "pivotmt/decode/pivot.hpp"
#include "pivotmt/decode/search.hpp"
#include "pivotmt/error.hpp"
#include "pivotmt/training/trainer.hpp"

using namespace pivotmt;
using namespace pivotmt::decode;
using training::Checkpoint;

namespace {

constexpr std::size_t kVocab = 14;

// Bijection on ordinary ids [4, 14).
std::int32_t relabel(std::int32_t t) { return 4 + ((t - 4) * 3 + 1) % 10; }

corpus::ParallelCorpus toy_corpus(std::size_t n, std::uint64_t seed, const std::string& src_hash,
                                  const std::string& tgt_hash, bool relabeled) {
  Rng rng(seed);
  corpus::ParallelCorpus c;
  c.src_vocab_hash = src_hash;
  c.tgt_vocab_hash = tgt_hash;
  for (std::size_t i = 0; i < n; ++i) {
    corpus::SentencePair p;
    const std::size_t len = 2 + rng.below(4);
    for (std::size_t k = 0; k < len; ++k) p.src.push_back(static_cast<std::int32_t>(4 + rng.below(kVocab - 4)));
    p.tgt = p.src;
    if (relabeled) {
      for (auto& t : p.tgt) t = relabel(t);
    }
    c.pairs.push_back(std::move(p));
  }
  return c;
}

Checkpoint train_toy(bool relabeled, const std::string& tgt_hash) {
  model::ModelConfig c;
  c.layers = 1;
  c.model_dim = 32;
  c.ff_dim = 64;
  c.heads = 2;
  c.dropout = 0.0;
  c.src_vocab_size = c.tgt_vocab_size = kVocab;
  training::TrainOptions o;
  o.schedule.initial_lr = 3e-3;
  o.schedule.checkpoint_interval = 100;
  o.max_updates = 800;
  o.max_tokens = 512;
  o.log_interval = 0;
  o.label_smoothing = 0.0;
  const auto data = toy_corpus(2000, relabeled ? 11 : 12, "j", tgt_hash, relabeled);
  const auto dev = toy_corpus(50, 13, "j", tgt_hash, relabeled);
  return training::train(Checkpoint::initialize(c, 5, "j", tgt_hash), training::TrainingData::fixed(data), dev, o)
      .checkpoint;
}

Checkpoint& copy_model() {
  static Checkpoint m = train_toy(false, "j");
  return m;
}

Checkpoint& relabel_model() {
  static Checkpoint m = train_toy(true, "t");
  return m;
}

std::vector<std::vector<std::int32_t>> sources_of(const corpus::ParallelCorpus& c) {
  std::vector<std::vector<std::int32_t>> out;
  for (const auto& p : c.pairs) out.push_back(p.src);
  return out;
}

// Test-side arg-max decoding straight from the network.
std::vector<std::int32_t> oracle_greedy(Checkpoint& ckpt, const std::vector<std::int32_t>& src, std::size_t cap) {
  tensor::NoGradGuard ng;
  model::Transformer<float> net(ckpt.config, ckpt.params);
  const auto enc = net.encode(src, 1, src.size(), nullptr, {});
  std::vector<std::int32_t> tgt_in{text::Vocabulary::kBosId};
  std::vector<std::int32_t> out;
  while (out.size() <= cap) {
    const auto logits = net.decode(enc, tgt_in, tgt_in.size(), {});
    const float* row = logits.value().storage().data() + (tgt_in.size() - 1) * kVocab;
    std::int32_t best = 2;
    for (std::int32_t v = 2; v < static_cast<std::int32_t>(kVocab); ++v) {
      if (row[v] > row[best]) best = v;
    }
    if (best == text::Vocabulary::kEosId || out.size() == cap) break;
    out.push_back(best);
    tgt_in.push_back(best);
  }
  return out;
}

}  // namespace

TEST_CASE("BLEU of an identical corpus is 100") {
  const std::vector<std::string> x{"a b c d e", "the cat sat on the mat", "x y z w"};
  const auto r = bleu(x, x);
  CHECK(r.score == doctest::Approx(100.0));
  CHECK(r.str().rfind("score=100.00 ", 0) == 0);
  CHECK(r.brevity_penalty == 1.0);
}

TEST_CASE("BLEU brevity penalty example") {
  const std::vector<std::string> h{"a b c d"};
  const std::vector<std::string> r{"a b c d e"};
  const auto rep = bleu(h, r);
  for (double p : rep.precisions) CHECK(p == 1.0);
  CHECK(rep.brevity_penalty == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)));
  CHECK(rep.score == doctest::Approx(77.88).epsilon(1e-4));
  CHECK(rep.hyp_length == 4);
  CHECK(rep.ref_length == 5);
}

TEST_CASE("BLEU is unsmoothed and order-free") {
  const std::vector<std::string> h{"a b c x"};
  const std::vector<std::string> r{"a b c d"};
  CHECK(bleu(h, r).score == 0.0);
  CHECK(sentence_bleu_smoothed(h[0], r[0]) > 0.0);
  const std::vector<std::string> hs{"a b c d e f", "g h i j k", "l m n"};
  const std::vector<std::string> rs{"a b c d e g", "g h i j k l", "l m n o"};
  const std::vector<std::string> hs2{hs[2], hs[0], hs[1]};
  const std::vector<std::string> rs2{rs[2], rs[0], rs[1]};
  const double s = bleu(hs, rs).score;
  CHECK(s > 0.0);
  CHECK(s <= 100.0);
  CHECK(bleu(hs2, rs2).score == s);
  // Clipping: repeated words count at most as often as in the reference.
  const std::vector<std::string> rep{"the the the the"};
  const std::vector<std::string> ref{"the cat"};
  CHECK(bleu(rep, ref).precisions[0] == doctest::Approx(0.25));
  CHECK_THROWS_AS(bleu(std::vector<std::string>{}, std::vector<std::string>{}), ConfigError);
  CHECK_THROWS_AS(bleu(hs, rep), ConfigError);
}

TEST_CASE("beam configuration") {
  BeamConfig c;
  CHECK(c.beam_size == 4);
  CHECK(c.max_length(7) == 24);
  c.beam_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  BeamConfig d;
  d.alpha = 0.6;
  nlohmann::json j = d;
  CHECK(j.get<BeamConfig>().alpha == 0.6);
}

TEST_CASE("a converged toy model reproduces its training sentences") {
  auto& m = copy_model();
  const auto train_like = toy_corpus(2000, 12, "j", "j", false);
  std::vector<std::vector<std::int32_t>> srcs;
  for (std::size_t i = 0; i < 40; ++i) srcs.push_back(train_like.pairs[i].src);
  const auto hyps = beam_search(m, srcs, BeamConfig{});
  std::size_t exact = 0;
  for (std::size_t i = 0; i < srcs.size(); ++i) exact += hyps[i].tokens == train_like.pairs[i].tgt;
  CHECK(exact == srcs.size());
}

TEST_CASE("beam size one is greedy decoding") {
  auto& m = relabel_model();
  const auto srcs = sources_of(toy_corpus(30, 77, "j", "t", true));
  BeamConfig one;
  one.beam_size = 1;
  const auto a = beam_search(m, srcs, one);
  const auto b = greedy_decode(m, srcs, one);
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].tokens == oracle_greedy(m, srcs[i], one.max_length(srcs[i].size())));
  }
}

TEST_CASE("wider beams never score lower") {
  // A barely trained model keeps the search non-trivial.
  model::ModelConfig c;
  c.layers = 1;
  c.model_dim = 16;
  c.ff_dim = 32;
  c.heads = 2;
  c.src_vocab_size = c.tgt_vocab_size = kVocab;
  auto m = Checkpoint::initialize(c, 9, "j", "j");
  const auto srcs = sources_of(toy_corpus(40, 5, "j", "j", false));
  BeamConfig one;
  one.beam_size = 1;
  BeamConfig four;
  const auto a = beam_search(m, srcs, one);
  const auto b = beam_search(m, srcs, four);
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    if (a[i].completed && b[i].completed) CHECK(b[i].score >= a[i].score - 1e-12);
    if (b[i].completed) CHECK(score_output(m, srcs[i], b[i].tokens, four.alpha) == doctest::Approx(b[i].score).epsilon(1e-4));
    if (!b[i].completed) CHECK(b[i].tokens.size() == four.max_length(srcs[i].size()));
  }
}

TEST_CASE("decoding does not depend on batching") {
  auto& m = relabel_model();
  const auto srcs = sources_of(toy_corpus(25, 8, "j", "t", true));
  BeamConfig big;
  BeamConfig small;
  small.batch_sentences = 3;
  const auto a = beam_search(m, srcs, big);
  const auto b = beam_search(m, srcs, small);
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].score == doctest::Approx(b[i].score).epsilon(1e-5));
    CHECK(a[i].tokens == beam_search(m, srcs[i], big).tokens);
  }
}

TEST_CASE("length cap and empty input") {
  auto& m = copy_model();
  const std::vector<std::vector<std::int32_t>> srcs{{}, {4, 5, 6, 7, 8}};
  BeamConfig tight;
  tight.length_factor = 0.0;
  tight.length_constant = 2;
  const auto h = beam_search(m, srcs, tight);
  CHECK(h[0].tokens.empty());
  CHECK(h[0].completed);
  CHECK(h[1].tokens.size() <= 2);
  // Greedy cannot end a copy early, so it returns the flagged partial.
  tight.beam_size = 1;
  const auto g = beam_search(m, srcs, tight);
  CHECK_FALSE(g[1].completed);
  CHECK(g[1].tokens == std::vector<std::int32_t>{4, 5});
}

TEST_CASE("pivot translation composes the two models") {
  auto& a = copy_model();
  auto& b = relabel_model();
  const auto data = toy_corpus(40, 21, "j", "t", true);
  const auto srcs = sources_of(data);
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = pivot_translate(a, b, srcs, BeamConfig{});
  const auto t1 = std::chrono::steady_clock::now();
  (void)beam_search(b, srcs, BeamConfig{});
  const auto t2 = std::chrono::steady_clock::now();
  std::size_t exact = 0;
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    exact += out[i].tokens == data.pairs[i].tgt;
  }
  CHECK(exact == srcs.size());
  MESSAGE("pivot " << std::chrono::duration<double>(t1 - t0).count() << "s vs single "
                   << std::chrono::duration<double>(t2 - t1).count() << "s");
  // Identity composition.
  const auto same = pivot_translate(a, a, srcs, BeamConfig{});
  for (std::size_t i = 0; i < srcs.size(); ++i) CHECK(same[i].tokens == srcs[i]);
  CHECK_THROWS_AS(pivot_translate(b, b, srcs, BeamConfig{}), VocabError);
}

TEST_CASE("teacher-student distillation and back-translation") {
  auto& copy = copy_model();
  auto& rev = relabel_model();
  // (s, p) with p = s; the teacher relabels p.
  auto src_piv = toy_corpus(30, 31, "j", "j", false);
  src_piv.src_lang = "src";
  const auto distilled = distill_teacher_student(src_piv, rev, BeamConfig{});
  CHECK(distilled.corpus.size() + distilled.dropped == src_piv.size());
  CHECK(distilled.corpus.tgt_vocab_hash == "t");
  std::size_t exact = 0;
  for (std::size_t i = 0; i < distilled.corpus.size(); ++i) {
    auto expect = distilled.corpus.pairs[i].src;
    for (auto& t : expect) t = relabel(t);
    exact += distilled.corpus.pairs[i].tgt == expect;
  }
  CHECK(exact == distilled.corpus.size());
  CHECK_THROWS_AS(distill_teacher_student(toy_corpus(3, 1, "j", "x", false), rev, BeamConfig{}), VocabError);

  // (p, t) pairs; the pivot->source model is the copy model.
  const auto piv_tgt = toy_corpus(30, 32, "j", "t", true);
  const auto bt = backtranslate(piv_tgt, copy, BeamConfig{});
  CHECK(bt.corpus.size() + bt.dropped == piv_tgt.size());
  CHECK(bt.corpus.src_vocab_hash == "j");
  CHECK(bt.corpus.tgt_vocab_hash == "t");
  for (std::size_t i = 0; i < bt.corpus.size(); ++i) CHECK(bt.corpus.pairs[i].src == piv_tgt.pairs[i].src);
  CHECK_THROWS_AS(backtranslate(toy_corpus(3, 1, "x", "t", false), copy, BeamConfig{}), VocabError);
}
