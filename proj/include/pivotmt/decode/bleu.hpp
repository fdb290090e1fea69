#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace pivotmt::decode {

struct BleuReport {
  double score = 0.0;                // percent
  std::array<double, 4> precisions{};  // clipped n-gram precisions
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  // "score=<.2f> p1=<.4f> p2=.. p3=.. p4=.. bp=<.4f> hyp_len=<n> ref_len=<n>"
  std::string str() const;
};

void to_json(nlohmann::json& j, const BleuReport& r);
void from_json(const nlohmann::json& j, BleuReport& r);

// Corpus-level BLEU-4 over whitespace tokens: clipped n-gram counts summed
// over the corpus, geometric mean of the four precisions, brevity penalty
// exp(1 - r/c) when c < r. Unsmoothed: any zero precision gives 0. Throws
// ConfigError on an empty corpus or unequal list lengths.
BleuReport bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

// Sentence-level BLEU with add-one smoothing on n > 1; diagnostics only.
double sentence_bleu_smoothed(const std::string& hypothesis, const std::string& reference);

}  // namespace pivotmt::decode
