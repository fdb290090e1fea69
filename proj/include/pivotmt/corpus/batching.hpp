#pragma once

#include <cstdint>
#include <vector>

#include "pivotmt/corpus/parallel.hpp"

namespace pivotmt::corpus {

// Padded id matrices for one update. Decoder input is <s> y, decoder output
// is y </s>; both have tgt_len = max |y| + 1 columns.
struct Batch {
  std::size_t rows = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<std::int32_t> src;      // rows x src_len, padded with <pad>
  std::vector<std::int32_t> tgt_in;   // rows x tgt_len
  std::vector<std::int32_t> tgt_out;  // rows x tgt_len
  std::vector<std::size_t> pair_index;

  std::size_t target_tokens() const;  // non-pad entries of tgt_out
};

Batch make_batch(const std::vector<const SentencePair*>& pairs);

struct BatchPlan {
  std::vector<Batch> batches;
  std::size_t skipped = 0;  // over-length pair occurrences
};

// One epoch: every pair occurs `weight` times, order is a seeded shuffle,
// pairs of similar target length are grouped, and each batch satisfies
// rows * tgt_len <= max_tokens. Pairs with |y| + 1 > max_tokens are skipped
// and counted.
BatchPlan make_batches(const ParallelCorpus& corpus, std::size_t max_tokens, std::uint64_t seed);

}  // namespace pivotmt::corpus
