#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pivotmt/corpus/parallel.hpp"
#include "pivotmt/rng.hpp"

namespace pivotmt::corpus {

enum class Reorder { identity, swap_adjacent };

// Deterministic three-language world. Every sentence is a sequence of
// concept ids; a language renders concept k as "<prefix><k>" and orders the
// concepts by its reorder rule. Cognate concepts are spelled "c<k>" in both
// the source and the pivot language, so the two share part of a joint
// vocabulary. Concept frequencies follow a Zipf law over a seeded ranking.
struct ToyWorldSpec {
  std::size_t base_vocab_size = 40;
  std::string src_lang = "src";
  std::string piv_lang = "piv";
  std::string tgt_lang = "tgt";
  std::size_t min_length = 3;
  std::size_t max_length = 12;
  Reorder pivot_order = Reorder::identity;
  Reorder target_order = Reorder::swap_adjacent;
  double cognate_fraction = 0.5;
  double zipf_exponent = 1.0;
  std::size_t src_piv_pairs = 20000;
  std::size_t piv_tgt_pairs = 20000;
  std::size_t src_tgt_pairs = 500;
  std::size_t mono_piv_lines = 5000;
  std::size_t dev_pairs = 200;
  std::size_t test_pairs = 500;
  // Held-out source-pivot pairs for fitting the pivot adapter.
  std::size_t adapter_pairs = 2000;
  std::uint64_t seed = 1;

  // Throws ConfigError on an inconsistent spec.
  void validate() const;
};

void to_json(nlohmann::json& j, const ToyWorldSpec& s);
void from_json(const nlohmann::json& j, ToyWorldSpec& s);

struct ToyCorpora {
  TextCorpus src_piv;
  TextCorpus piv_tgt;
  TextCorpus src_tgt;
  std::vector<std::string> mono_piv;
  TextCorpus src_piv_dev;
  TextCorpus piv_tgt_dev;
  TextCorpus src_tgt_dev;
  TextCorpus src_tgt_test;
  TextCorpus src_piv_adapter;
  // Pivot rendering of each test sentence, aligned with src_tgt_test.
  std::vector<std::string> test_pivot;
};

class ToyWorld {
 public:
  explicit ToyWorld(ToyWorldSpec spec);

  const ToyWorldSpec& spec() const noexcept { return spec_; }

  bool is_cognate(std::size_t concept_id) const;
  std::string word(std::size_t concept_id, const std::string& lang) const;

  // Reference translation of a whitespace-tokenized sentence. Throws
  // ConfigError on a word that does not belong to `from`.
  std::string translate(const std::string& line, const std::string& from, const std::string& to) const;

  std::vector<std::size_t> sample_concepts(Rng& rng) const;
  std::string render(const std::vector<std::size_t>& concepts, const std::string& lang) const;

  ToyCorpora generate() const;

 private:
  Reorder order_of(const std::string& lang) const;
  char prefix_of(const std::string& lang) const;

  ToyWorldSpec spec_;
  std::vector<double> cumulative_;
};

inline ToyCorpora generate_toy_corpora(const ToyWorldSpec& spec) { return ToyWorld(spec).generate(); }

}  // namespace pivotmt::corpus
