#include "pivotmt/corpus/mixture.hpp"

#include <cmath>
#include <numeric>

#include "pivotmt/error.hpp"

namespace pivotmt::corpus {

void CorpusMixture::add(MixtureComponent c) {
  c.corpus.validate();
  if (c.corpus.pairs.empty()) throw ConfigError("mixture: component '" + c.name + "' is empty");
  if (!(c.share > 0.0)) throw ConfigError("mixture: component '" + c.name + "' needs a positive share");
  if (!components_.empty()) {
    const auto& first = components_.front().corpus;
    if (c.corpus.tgt_vocab_hash != first.tgt_vocab_hash) {
      throw VocabError("mixture: component '" + c.name + "' uses a different output vocabulary");
    }
    if (c.corpus.src_vocab_hash != first.src_vocab_hash) {
      throw VocabError("mixture: component '" + c.name + "' uses a different input vocabulary");
    }
  }
  if (c.noise) {
    c.noise->validate();
    if (c.noise->p_rep > 0.0 && c.blank_id < 0) {
      throw VocabError("mixture: component '" + c.name + "' replaces tokens but the vocabulary has no <BLANK>");
    }
  }
  components_.push_back(std::move(c));
}

std::vector<std::size_t> CorpusMixture::epoch_counts() const {
  std::vector<std::size_t> counts;
  if (components_.empty()) return counts;
  const auto& anchor = components_.front();
  const double base = static_cast<double>(anchor.corpus.size() * anchor.corpus.weight);
  counts.push_back(anchor.corpus.size() * anchor.corpus.weight);
  for (std::size_t i = 1; i < components_.size(); ++i) {
    counts.push_back(static_cast<std::size_t>(std::llround(base * components_[i].share / anchor.share)));
  }
  return counts;
}

ParallelCorpus CorpusMixture::materialize(std::uint64_t epoch) const {
  if (components_.empty()) throw ConfigError("mixture: no components");
  const auto counts = epoch_counts();
  ParallelCorpus out;
  out.src_lang = components_.front().corpus.src_lang;
  out.tgt_lang = components_.front().corpus.tgt_lang;
  out.src_vocab_hash = components_.front().corpus.src_vocab_hash;
  out.tgt_vocab_hash = components_.front().corpus.tgt_vocab_hash;
  out.pairs.reserve(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));

  for (std::size_t ci = 0; ci < components_.size(); ++ci) {
    const auto& comp = components_[ci];
    const auto& pairs = comp.corpus.pairs;
    Rng rng = Rng(seed_ ^ (0xA24BAED4963EE407ULL * (ci + 1))).fork(epoch);
    std::vector<std::size_t> picks;
    picks.reserve(counts[ci]);
    while (picks.size() + pairs.size() <= counts[ci]) {
      for (std::size_t i = 0; i < pairs.size(); ++i) picks.push_back(i);
    }
    if (picks.size() < counts[ci]) {
      std::vector<std::size_t> rest(pairs.size());
      std::iota(rest.begin(), rest.end(), 0);
      rng.shuffle(rest);
      rest.resize(counts[ci] - picks.size());
      picks.insert(picks.end(), rest.begin(), rest.end());
    }
    Rng noise_rng = Rng(comp.noise ? comp.noise->seed : 0).fork(epoch * 1315423911ULL + ci);
    for (auto idx : picks) {
      SentencePair p = pairs[idx];
      if (comp.noise && comp.noise->enabled()) p.src = apply_noise(p.src, *comp.noise, comp.blank_id, noise_rng);
      out.pairs.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace pivotmt::corpus
