#pragma once

#include <vector>

#include "pivotmt/corpus/parallel.hpp"
#include "pivotmt/decode/search.hpp"

namespace pivotmt::decode {

// Two decoding passes: source->pivot 1-best, then pivot->target. Throws
// VocabError when the pivot vocabularies of the two models differ.
std::vector<Hypothesis> pivot_translate(training::Checkpoint& src_piv, training::Checkpoint& piv_tgt,
                                        std::span<const std::vector<std::int32_t>> sources, const BeamConfig& cfg);

struct SyntheticCorpus {
  corpus::ParallelCorpus corpus;
  std::size_t dropped = 0;  // pairs whose decoding was empty or hit the length cap
};

// Teacher-student: each (s, p) becomes (s, teacher(p)).
SyntheticCorpus distill_teacher_student(const corpus::ParallelCorpus& src_piv, training::Checkpoint& teacher,
                                        const BeamConfig& cfg);

// Back-translation: each (p, t) becomes (piv_src(p), t).
SyntheticCorpus backtranslate(const corpus::ParallelCorpus& piv_tgt, training::Checkpoint& piv_src,
                              const BeamConfig& cfg);

}  // namespace pivotmt::decode
