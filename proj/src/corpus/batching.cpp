#include "pivotmt/corpus/batching.hpp"

#include <algorithm>

#include "pivotmt/error.hpp"
#include "pivotmt/rng.hpp"
#include "pivotmt/text/vocab.hpp"

namespace pivotmt::corpus {

using text::Vocabulary;

std::size_t Batch::target_tokens() const {
  return static_cast<std::size_t>(
      std::count_if(tgt_out.begin(), tgt_out.end(), [](std::int32_t id) { return id != Vocabulary::kPadId; }));
}

Batch make_batch(const std::vector<const SentencePair*>& pairs) {
  Batch b;
  b.rows = pairs.size();
  for (const auto* p : pairs) {
    b.src_len = std::max(b.src_len, p->src.size());
    b.tgt_len = std::max(b.tgt_len, p->tgt.size() + 1);
  }
  b.src.assign(b.rows * b.src_len, Vocabulary::kPadId);
  b.tgt_in.assign(b.rows * b.tgt_len, Vocabulary::kPadId);
  b.tgt_out.assign(b.rows * b.tgt_len, Vocabulary::kPadId);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto& p = *pairs[r];
    std::copy(p.src.begin(), p.src.end(), b.src.begin() + static_cast<long>(r * b.src_len));
    b.tgt_in[r * b.tgt_len] = Vocabulary::kBosId;
    std::copy(p.tgt.begin(), p.tgt.end(), b.tgt_in.begin() + static_cast<long>(r * b.tgt_len + 1));
    std::copy(p.tgt.begin(), p.tgt.end(), b.tgt_out.begin() + static_cast<long>(r * b.tgt_len));
    b.tgt_out[r * b.tgt_len + p.tgt.size()] = Vocabulary::kEosId;
  }
  return b;
}

BatchPlan make_batches(const ParallelCorpus& corpus, std::size_t max_tokens, std::uint64_t seed) {
  corpus.validate();
  if (max_tokens == 0) throw ConfigError("make_batches: max_tokens must be positive");
  BatchPlan plan;
  std::vector<std::size_t> order;
  order.reserve(corpus.size() * corpus.weight);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus.pairs[i].tgt.size() + 1 > max_tokens) {
      plan.skipped += corpus.weight;
      continue;
    }
    for (std::size_t w = 0; w < corpus.weight; ++w) order.push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = corpus.pairs[a];
    const auto& pb = corpus.pairs[b];
    if (pa.tgt.size() != pb.tgt.size()) return pa.tgt.size() < pb.tgt.size();
    return pa.src.size() < pb.src.size();
  });

  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> current;
  std::size_t longest = 0;
  for (auto idx : order) {
    const std::size_t len = corpus.pairs[idx].tgt.size() + 1;
    const std::size_t new_longest = std::max(longest, len);
    if (!current.empty() && (current.size() + 1) * new_longest > max_tokens) {
      groups.push_back(std::move(current));
      current.clear();
      longest = 0;
    }
    current.push_back(idx);
    longest = std::max(longest, len);
  }
  if (!current.empty()) groups.push_back(std::move(current));
  rng.shuffle(groups);

  plan.batches.reserve(groups.size());
  for (const auto& g : groups) {
    std::vector<const SentencePair*> ptrs;
    ptrs.reserve(g.size());
    for (auto idx : g) ptrs.push_back(&corpus.pairs[idx]);
    auto b = make_batch(ptrs);
    b.pair_index = g;
    plan.batches.push_back(std::move(b));
  }
  return plan;
}

}  // namespace pivotmt::corpus
