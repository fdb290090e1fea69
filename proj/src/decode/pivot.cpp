#include "pivotmt/decode/pivot.hpp"

#include "pivotmt/error.hpp"

namespace pivotmt::decode {

namespace {

std::vector<std::vector<std::int32_t>> side(const corpus::ParallelCorpus& c, bool source) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(c.size());
  for (const auto& p : c.pairs) out.push_back(source ? p.src : p.tgt);
  return out;
}

bool usable(const Hypothesis& h) { return h.completed && !h.tokens.empty(); }

}  // namespace

std::vector<Hypothesis> pivot_translate(training::Checkpoint& src_piv, training::Checkpoint& piv_tgt,
                                        std::span<const std::vector<std::int32_t>> sources, const BeamConfig& cfg) {
  if (src_piv.tgt_vocab_hash != piv_tgt.src_vocab_hash) {
    throw VocabError("pivot: first model emits vocabulary " + src_piv.tgt_vocab_hash + " but the second reads " +
                     piv_tgt.src_vocab_hash);
  }
  const auto pivots = beam_search(src_piv, sources, cfg);
  std::vector<std::vector<std::int32_t>> middle;
  middle.reserve(pivots.size());
  for (const auto& h : pivots) middle.push_back(h.tokens);
  return beam_search(piv_tgt, middle, cfg);
}

SyntheticCorpus distill_teacher_student(const corpus::ParallelCorpus& src_piv, training::Checkpoint& teacher,
                                        const BeamConfig& cfg) {
  if (teacher.src_vocab_hash != src_piv.tgt_vocab_hash) {
    throw VocabError("distill: teacher reads vocabulary " + teacher.src_vocab_hash + " but the pivot side uses " +
                     src_piv.tgt_vocab_hash);
  }
  const auto hyps = beam_search(teacher, side(src_piv, false), cfg);
  SyntheticCorpus out;
  out.corpus.src_lang = src_piv.src_lang;
  out.corpus.src_vocab_hash = src_piv.src_vocab_hash;
  out.corpus.tgt_vocab_hash = teacher.tgt_vocab_hash;
  out.corpus.tgt_lang = "synthetic";
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (!usable(hyps[i]) || src_piv.pairs[i].src.empty()) {
      ++out.dropped;
      continue;
    }
    out.corpus.pairs.push_back({src_piv.pairs[i].src, hyps[i].tokens});
  }
  return out;
}

SyntheticCorpus backtranslate(const corpus::ParallelCorpus& piv_tgt, training::Checkpoint& piv_src,
                              const BeamConfig& cfg) {
  if (piv_src.src_vocab_hash != piv_tgt.src_vocab_hash) {
    throw VocabError("backtranslate: model reads vocabulary " + piv_src.src_vocab_hash + " but the pivot side uses " +
                     piv_tgt.src_vocab_hash);
  }
  const auto hyps = beam_search(piv_src, side(piv_tgt, true), cfg);
  SyntheticCorpus out;
  out.corpus.src_lang = "synthetic";
  out.corpus.tgt_lang = piv_tgt.tgt_lang;
  out.corpus.src_vocab_hash = piv_src.tgt_vocab_hash;
  out.corpus.tgt_vocab_hash = piv_tgt.tgt_vocab_hash;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (!usable(hyps[i]) || piv_tgt.pairs[i].tgt.empty()) {
      ++out.dropped;
      continue;
    }
    out.corpus.pairs.push_back({hyps[i].tokens, piv_tgt.pairs[i].tgt});
  }
  return out;
}

}  // namespace pivotmt::decode
