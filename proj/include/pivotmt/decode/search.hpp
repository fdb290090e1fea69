#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "pivotmt/training/checkpoint.hpp"

namespace pivotmt::decode {

struct BeamConfig {
  std::size_t beam_size = 4;
  // Output cap in tokens: length_factor * |source| + length_constant.
  double length_factor = 2.0;
  std::size_t length_constant = 10;
  // Completed hypotheses are ranked by log p / length^alpha, length
  // counting the end-of-sentence token.
  double alpha = 1.0;
  std::size_t batch_sentences = 64;

  // Throws ConfigError on beam_size 0, negative factors or batch size 0.
  void validate() const;
  std::size_t max_length(std::size_t source_length) const;
};

void to_json(nlohmann::json& j, const BeamConfig& c);
void from_json(const nlohmann::json& j, BeamConfig& c);

struct Hypothesis {
  std::vector<std::int32_t> tokens;  // without </s>
  double log_prob = 0.0;              // sum over tokens and </s> when completed
  double score = 0.0;                 // length-normalized log_prob
  bool completed = false;             // false: cap reached, best partial returned
};

// Length-normalized score as used for ranking.
double normalized_score(double log_prob, std::size_t length, double alpha);

// Decodes every source sequence with the checkpoint's adapter, batching
// sentences. Results follow input order and do not depend on batching.
// Empty sources give empty completed hypotheses. Beam search keeps the
// greedy path as a candidate, so a wider beam never returns a hypothesis
// the model scores lower than greedy decoding's.
std::vector<Hypothesis> beam_search(training::Checkpoint& ckpt, std::span<const std::vector<std::int32_t>> sources,
                                    const BeamConfig& cfg);
Hypothesis beam_search(training::Checkpoint& ckpt, std::span<const std::int32_t> source, const BeamConfig& cfg);

// Arg-max decoding with the same cap and scoring as beam search.
std::vector<Hypothesis> greedy_decode(training::Checkpoint& ckpt, std::span<const std::vector<std::int32_t>> sources,
                                      const BeamConfig& cfg);

// Model log-probability of a full output (</s> appended), length-normalized.
double score_output(training::Checkpoint& ckpt, std::span<const std::int32_t> source,
                    std::span<const std::int32_t> output, double alpha);

}  // namespace pivotmt::decode
