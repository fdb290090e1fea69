#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "pivotmt/corpus/batching.hpp"
#include "pivotmt/corpus/mixture.hpp"
#include "pivotmt/corpus/noise.hpp"
#include "pivotmt/corpus/parallel.hpp"
#include "pivotmt/corpus/toy_world.hpp"
#include "pivotmt/error.hpp"
#include "pivotmt/text/bpe.hpp"

using namespace pivotmt;
using namespace pivotmt::corpus;

namespace {

ToyWorldSpec small_spec() {
  ToyWorldSpec s;
  s.src_piv_pairs = 300;
  s.piv_tgt_pairs = 300;
  s.src_tgt_pairs = 50;
  s.mono_piv_lines = 100;
  s.dev_pairs = 20;
  s.test_pairs = 30;
  return s;
}

ParallelCorpus uniform_corpus(std::size_t n, std::size_t len) {
  ParallelCorpus c;
  c.src_lang = "a";
  c.tgt_lang = "b";
  for (std::size_t i = 0; i < n; ++i) {
    SentencePair p;
    p.src.assign(len, static_cast<std::int32_t>(10 + i));
    p.tgt.assign(len, static_cast<std::int32_t>(10 + i));
    c.pairs.push_back(p);
  }
  return c;
}

std::size_t total_rows(const BatchPlan& plan) {
  std::size_t n = 0;
  for (const auto& b : plan.batches) n += b.rows;
  return n;
}

text::Tokenizer joint_tokenizer(const std::vector<std::string>& lines, bool blank) {
  auto bpe = text::learn_bpe(lines, 20);
  std::vector<std::vector<std::string>> seg;
  for (const auto& l : lines) seg.push_back(bpe.segment(l));
  auto vocab = text::Vocabulary::build(seg, text::SpecialTokens{blank, {}});
  return text::Tokenizer(std::move(bpe), std::move(vocab));
}

}  // namespace

TEST_CASE("toy world reference translations") {
  ToyWorld world(small_spec());
  CHECK(world.translate("s3 s9", "src", "piv") == "p3 p9");
  CHECK(world.translate("s3 s9 s1 s4", "src", "tgt") == "t9 t3 t4 t1");
  CHECK(world.translate("s3 s9 s1", "src", "tgt") == "t9 t3 t1");
  CHECK(world.is_cognate(39));
  CHECK_FALSE(world.is_cognate(0));
  CHECK(world.translate("s3 c25", "src", "piv") == "p3 c25");
  CHECK(world.translate("c25 s3", "src", "tgt") == "t3 t25");
  CHECK_THROWS_AS(world.translate("p3", "src", "piv"), ConfigError);
  CHECK_THROWS_AS(world.translate("s25", "src", "piv"), ConfigError);
}

TEST_CASE("toy world without cognates keeps language prefixes") {
  auto spec = small_spec();
  spec.cognate_fraction = 0.0;
  ToyWorld world(spec);
  CHECK(world.translate("s30 s31", "src", "piv") == "p30 p31");
}

TEST_CASE("toy corpora are reproducible and compose") {
  const auto a = generate_toy_corpora(small_spec());
  const auto b = generate_toy_corpora(small_spec());
  CHECK(a.src_piv.src == b.src_piv.src);
  CHECK(a.piv_tgt.tgt == b.piv_tgt.tgt);
  CHECK(a.mono_piv == b.mono_piv);
  CHECK(a.src_tgt_test.tgt == b.src_tgt_test.tgt);

  auto other = small_spec();
  other.seed = 2;
  CHECK(generate_toy_corpora(other).src_piv.src != a.src_piv.src);

  ToyWorld world(small_spec());
  for (std::size_t i = 0; i < a.src_tgt_test.size(); ++i) {
    const auto& s = a.src_tgt_test.src[i];
    const auto pivot = world.translate(s, "src", "piv");
    CHECK(pivot == a.test_pivot[i]);
    CHECK(world.translate(pivot, "piv", "tgt") == a.src_tgt_test.tgt[i]);
    CHECK(world.translate(a.src_tgt_test.tgt[i], "tgt", "src") == s);
  }
  for (const auto& line : a.src_piv.src) {
    const auto n = text::split_words(line).size();
    CHECK(n >= 3);
    CHECK(n <= 12);
  }
  CHECK(a.src_piv.size() == 300);
  CHECK(a.src_tgt.size() == 50);
}

TEST_CASE("invalid toy spec") {
  auto s = small_spec();
  s.max_length = 2;
  CHECK_THROWS_AS(ToyWorld{s}, ConfigError);
  s = small_spec();
  s.piv_lang = "src";
  CHECK_THROWS_AS(ToyWorld{s}, ConfigError);
  s = small_spec();
  s.tgt_lang = "cat";
  CHECK_THROWS_AS(ToyWorld{s}, ConfigError);
}

TEST_CASE("toy spec json round trip") {
  auto s = small_spec();
  s.target_order = Reorder::identity;
  s.seed = 77;
  const nlohmann::json j = s;
  const auto back = j.get<ToyWorldSpec>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.seed == 77);
  CHECK(back.target_order == Reorder::identity);
}

TEST_CASE("text corpus files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "pivotmt_test_corpus";
  std::filesystem::create_directories(dir);
  const auto c = generate_toy_corpora(small_spec()).src_tgt;
  write_text_corpus(c, dir / "train");
  const auto back = read_text_corpus(dir / "train", "src", "tgt");
  CHECK(back.src == c.src);
  CHECK(back.tgt == c.tgt);
  CHECK_THROWS_AS(read_text_corpus(dir / "missing", "src", "tgt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("batches respect the token budget") {
  const auto c = uniform_corpus(10, 5);
  const auto plan = make_batches(c, 25, 1);
  CHECK(total_rows(plan) == 10);
  for (const auto& b : plan.batches) {
    // Target length 5 plus </s> gives 6 columns.
    CHECK(b.tgt_len == 6);
    CHECK(b.rows * b.tgt_len <= 25);
    CHECK(b.rows <= 5);
  }
}

TEST_CASE("batch padding and decoder shift") {
  ParallelCorpus c;
  c.pairs = {{{5, 6, 7}, {8, 9}}, {{5}, {8, 9, 10}}};
  const auto b = make_batch({&c.pairs[0], &c.pairs[1]});
  CHECK(b.src == std::vector<std::int32_t>{5, 6, 7, 5, 0, 0});
  CHECK(b.tgt_in == std::vector<std::int32_t>{1, 8, 9, 0, 1, 8, 9, 10});
  CHECK(b.tgt_out == std::vector<std::int32_t>{8, 9, 2, 0, 8, 9, 10, 2});
  CHECK(b.target_tokens() == 7);
}

TEST_CASE("oversampling weight duplicates pairs") {
  auto c = uniform_corpus(3, 4);
  c.weight = 4;
  const auto plan = make_batches(c, 1000, 3);
  std::map<std::int32_t, int> seen;
  for (const auto& b : plan.batches) {
    for (std::size_t r = 0; r < b.rows; ++r) seen[b.src[r * b.src_len]]++;
  }
  CHECK(total_rows(plan) == 12);
  CHECK(seen.size() == 3);
  for (const auto& [id, n] : seen) CHECK(n == 4);
}

TEST_CASE("real to synthetic 1:2 via oversampling") {
  const std::size_t w = oversample_factor(50, 100, 1.0, 2.0);
  CHECK(w == 1);
  auto real = uniform_corpus(50, 3);
  auto syn = uniform_corpus(100, 3);
  CorpusMixture mix(5);
  mix.add({"real", real, 1.0, std::nullopt, -1});
  mix.add({"synthetic", syn, 2.0, std::nullopt, -1});
  const auto counts = mix.epoch_counts();
  CHECK(counts[1] == 2 * counts[0]);
  CHECK(oversample_factor(10, 100, 1.0, 2.0) == 5);
}

TEST_CASE("over-length pairs are skipped and counted") {
  auto c = uniform_corpus(4, 3);
  c.pairs[1].tgt.assign(20, 7);
  c.weight = 2;
  const auto plan = make_batches(c, 10, 1);
  CHECK(plan.skipped == 2);
  CHECK(total_rows(plan) == 6);
}

TEST_CASE("batch order depends only on the seed") {
  const auto c = uniform_corpus(40, 6);
  const auto a = make_batches(c, 30, 9);
  const auto b = make_batches(c, 30, 9);
  REQUIRE(a.batches.size() == b.batches.size());
  for (std::size_t i = 0; i < a.batches.size(); ++i) CHECK(a.batches[i].src == b.batches[i].src);
}

TEST_CASE("noise edge cases") {
  Rng rng(1);
  const std::vector<std::int32_t> x{11, 12, 13};
  CHECK(apply_noise(x, {0.0, 0.0, 0, 0}, 4, rng) == x);
  for (int i = 0; i < 20; ++i) {
    const auto y = apply_noise(x, {1.0, 0.0, 0, 0}, 4, rng);
    REQUIRE(y.size() == 1);
    CHECK(std::find(x.begin(), x.end(), y[0]) != x.end());
  }
  CHECK_THROWS_AS(apply_noise(x, {0.7, 0.5, 0, 0}, 4, rng), ConfigError);
}

TEST_CASE("noise rates (Monte Carlo)") {
  const NoiseConfig cfg{0.1, 0.1, 3, 0};
  Rng rng(2024);
  const std::int32_t blank = 4;
  const std::vector<std::int32_t> x(20, 7);
  std::size_t total = 0;
  std::size_t deleted = 0;
  std::size_t blanked = 0;
  while (total < 100000) {
    const auto y = apply_noise(x, cfg, blank, rng);
    total += x.size();
    deleted += x.size() - y.size();
    blanked += static_cast<std::size_t>(std::count(y.begin(), y.end(), blank));
  }
  CHECK(std::abs(static_cast<double>(deleted) / static_cast<double>(total) - 0.10) <= 0.01);
  CHECK(std::abs(static_cast<double>(blanked) / static_cast<double>(total) - 0.10) <= 0.01);
}

TEST_CASE("noise displacement bound (Monte Carlo)") {
  // Without replacement every survivor is traceable by its distinct id;
  // its post-deletion index is its rank among survivors.
  const NoiseConfig cfg{0.1, 0.0, 3, 0};
  Rng rng(7);
  std::vector<std::int32_t> x(20);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<std::int32_t>(100 + i);
  std::size_t max_shift = 0;
  for (int trial = 0; trial < 5000; ++trial) {
    const auto y = apply_noise(x, cfg, 4, rng);
    auto sorted = y;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < y.size(); ++j) {
      const auto r = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), y[j]) - sorted.begin());
      max_shift = std::max(max_shift, j > r ? j - r : r - j);
    }
  }
  CHECK(max_shift <= 3);
  CHECK(max_shift >= 2);
}

TEST_CASE("mixture counts honour shares") {
  auto a = uniform_corpus(30, 3);
  auto b = uniform_corpus(7, 3);
  CorpusMixture mix(1);
  mix.add({"translation", a, 1.0, std::nullopt, -1});
  mix.add({"autoencoding", b, 1.0, std::nullopt, -1});
  const auto counts = mix.epoch_counts();
  CHECK(counts[0] == 30);
  CHECK(counts[1] == 30);
  const auto epoch = mix.materialize(0);
  CHECK(epoch.size() == 60);

  auto mismatched = b;
  mismatched.tgt_vocab_hash = "deadbeef";
  CHECK_THROWS_AS(mix.add({"bad", mismatched, 1.0, std::nullopt, -1}), VocabError);
  CHECK_THROWS_AS(mix.add({"noblank", b, 1.0, NoiseConfig{}, -1}), VocabError);
}

TEST_CASE("pivot-side autoencoding gives one output two inputs") {
  const auto toy = generate_toy_corpora(small_spec());
  std::vector<std::string> lines = toy.src_piv.src;
  lines.insert(lines.end(), toy.src_piv.tgt.begin(), toy.src_piv.tgt.end());
  const auto tok = joint_tokenizer(lines, true);
  const auto translation = encode_corpus(toy.src_piv, tok, tok);
  const auto ae = autoencoding_corpus(toy.src_piv.tgt, tok, "piv");
  const auto blank = tok.vocab().blank_id();

  for (const bool noisy : {true, false}) {
    CorpusMixture mix(3);
    mix.add({"translation", translation, 1.0, std::nullopt, blank});
    std::optional<NoiseConfig> noise;
    if (noisy) noise = NoiseConfig{0.1, 0.1, 3, 11};
    mix.add({"autoencoding", ae, 1.0, noise, blank});
    const auto epoch = mix.materialize(0);
    std::map<std::vector<std::int32_t>, std::set<std::vector<std::int32_t>>> inputs;
    for (const auto& p : epoch.pairs) inputs[p.tgt].insert(p.src);
    const auto& out = translation.pairs[0].tgt;
    REQUIRE(inputs.count(out) == 1);
    CHECK(inputs[out].count(translation.pairs[0].src) == 1);
    CHECK(inputs[out].size() >= 2);
    if (!noisy) CHECK(inputs[out].count(out) == 1);
  }

  CorpusMixture mix(3);
  mix.add({"autoencoding", ae, 1.0, NoiseConfig{0.1, 0.1, 3, 11}, blank});
  CHECK(mix.materialize(0).pairs != mix.materialize(1).pairs);
  CHECK(mix.materialize(4).pairs == mix.materialize(4).pairs);
}
