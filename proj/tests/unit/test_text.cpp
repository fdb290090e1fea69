#include <doctest.h>

#include <filesystem>

#include "pivotmt/error.hpp"
#include "pivotmt/rng.hpp"
#include "pivotmt/text/bpe.hpp"
#include "pivotmt/text/tokenizer.hpp"
#include "pivotmt/text/vocab.hpp"

using namespace pivotmt;
using namespace pivotmt::text;

TEST_CASE("learn_bpe picks the most frequent pair") {
  std::vector<std::string> corpus{"low low lower"};
  auto model = learn_bpe(corpus, 1);
  REQUIRE(model.merge_count() == 1);
  CHECK(model.merges()[0] == BpeModel::Merge{"l", "o"});
}

TEST_CASE("lexicographic tie-break") {
  // (a,b) and (c,d) both occur twice.
  std::vector<std::string> corpus{"cd ab", "ab cd"};
  auto model = learn_bpe(corpus, 1);
  CHECK(model.merges()[0] == BpeModel::Merge{"a", "b</w>"});
}

TEST_CASE("zero merges gives characters with end-of-word marker") {
  std::vector<std::string> corpus{"low"};
  auto model = learn_bpe(corpus, 0);
  CHECK(model.segment("low") == std::vector<std::string>{"l", "o", "w</w>"});
}

TEST_CASE("apply_bpe replays merges") {
  std::vector<std::string> corpus{"low low lower"};
  CHECK(apply_bpe(learn_bpe(corpus, 1), "low") == std::vector<std::string>{"lo", "w</w>"});
  CHECK(apply_bpe(learn_bpe(corpus, 100), "low") == std::vector<std::string>{"low</w>"});
  CHECK(apply_bpe(learn_bpe(corpus, 100), "").empty());
}

TEST_CASE("learning stops when nothing is left to merge") {
  std::vector<std::string> corpus{"ab"};
  CHECK(learn_bpe(corpus, 50).merge_count() == 1);
}

TEST_CASE("empty corpus is an error") {
  std::vector<std::string> corpus{"   ", ""};
  CHECK_THROWS_AS(learn_bpe(corpus, 3), ConfigError);
}

TEST_CASE("unseen characters pass through") {
  std::vector<std::string> corpus{"aaa"};
  auto model = learn_bpe(corpus, 5);
  CHECK(model.segment("xyz") == std::vector<std::string>{"x", "y", "z</w>"});
  // Multi-byte code points stay whole.
  CHECK(model.segment("\xc3\xa9t\xc3\xa9") == std::vector<std::string>{"\xc3\xa9", "t", "\xc3\xa9</w>"});
}

TEST_CASE("segmentation is idempotent through detokenization") {
  Rng rng(4);
  std::vector<std::string> corpus;
  const std::string alphabet = "abcde";
  for (int i = 0; i < 200; ++i) {
    std::string line;
    for (int w = 0; w < 5; ++w) {
      if (w) line += ' ';
      const auto len = 1 + rng.below(6);
      for (std::uint64_t c = 0; c < len; ++c) line += alphabet[rng.below(alphabet.size())];
    }
    corpus.push_back(line);
  }
  auto model = learn_bpe(corpus, 40);
  for (const auto& line : corpus) {
    const auto once = model.segment(line);
    CHECK(detokenize(once) == line);
    CHECK(model.segment(detokenize(once)) == once);
  }
}

TEST_CASE("joint BPE segments pivot text identically from either side") {
  std::vector<std::string> src{"s1 s2 c5 s3", "c5 s1"};
  std::vector<std::string> piv{"p1 p2 c5 p3", "c5 p1"};
  std::vector<std::string> joint = src;
  joint.insert(joint.end(), piv.begin(), piv.end());
  auto model = learn_bpe(joint, 20, {"src", "piv"});
  std::vector<std::vector<std::string>> seg;
  for (const auto& l : joint) seg.push_back(model.segment(l));
  auto vocab = Vocabulary::build(seg, {});
  Tokenizer source_side(model, vocab), pivot_side(model, vocab);
  for (const auto& l : piv) CHECK(source_side.encode(l) == pivot_side.encode(l));
  // The joint vocabulary holds tokens of both languages.
  CHECK(vocab.find("s1</w>").has_value());
  CHECK(vocab.find("p1</w>").has_value());
}

TEST_CASE("bpe file round trip") {
  std::vector<std::string> corpus{"low low lower newest widest"};
  auto model = learn_bpe(corpus, 10);
  const auto text = model.serialize();
  CHECK(text.rfind("bpe-v1 10\n", 0) == 0);
  CHECK(BpeModel::parse(text).serialize() == text);
  CHECK_THROWS_AS(BpeModel::parse("bpe-v2 1\na b\n"), IoError);
  CHECK_THROWS_AS(BpeModel::parse("bpe-v1 2\na b\n"), IoError);
}

TEST_CASE("vocabulary orders specials then frequency") {
  std::vector<std::vector<std::string>> seg{{"a", "b", "a"}, {"a"}};
  auto v = Vocabulary::build(seg, {});
  CHECK(v.special_count() == 4);
  CHECK(v.token(4) == "a");
  CHECK(v.token(5) == "b");
  CHECK(v.id("zzz") == Vocabulary::kUnkId);
  CHECK_FALSE(v.has_blank());
  CHECK_THROWS_AS(v.blank_id(), VocabError);
}

TEST_CASE("vocabulary specials with blank and tags") {
  std::vector<std::vector<std::string>> seg{{"x"}};
  auto v = Vocabulary::build(seg, {true, {"tgt", "piv"}});
  CHECK(v.blank_id() == 4);
  CHECK(v.tag_id("tgt") == 5);
  CHECK(v.tag_id("piv") == 6);
  CHECK_FALSE(v.tag_id("src").has_value());
  CHECK(v.token(7) == "x");
}

TEST_CASE("encode/decode round trip and file round trip") {
  std::vector<std::vector<std::string>> seg{{"a", "b", "c"}, {"c", "d"}};
  auto v = Vocabulary::build(seg, {true, {"tgt"}});
  for (std::int32_t id = static_cast<std::int32_t>(v.special_count()); id < static_cast<std::int32_t>(v.size()); ++id) {
    std::vector<std::int32_t> ids{id};
    CHECK(v.encode(v.decode(ids)) == ids);
  }
  const auto text = v.serialize();
  auto loaded = Vocabulary::parse(text);
  CHECK(loaded == v);
  CHECK(loaded.serialize() == text);
  CHECK(loaded.content_hash() == v.content_hash());
  CHECK(loaded.blank_id() == v.blank_id());
}

TEST_CASE("separate vocabularies are independent id spaces") {
  std::vector<std::vector<std::string>> a{{"s1</w>"}}, b{{"t1</w>", "t2</w>"}};
  auto va = Vocabulary::build(a, {});
  auto vb = Vocabulary::build(b, {});
  CHECK(va.content_hash() != vb.content_hash());
  CHECK(va.id("t1</w>") == Vocabulary::kUnkId);
}
