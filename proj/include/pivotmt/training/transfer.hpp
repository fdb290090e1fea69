#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pivotmt/adapter/adapter.hpp"
#include "pivotmt/corpus/noise.hpp"
#include "pivotmt/training/trainer.hpp"

namespace pivotmt::training {

// Source-side groups come from the source->pivot parent and target-side
// groups from the pivot->target parent; together they cover every
// parameter once. Throws ShapeError naming the group when architectures
// differ, and VocabError naming the group when an expected vocabulary hash
// (empty = unchecked) differs from the parent's.
Checkpoint plain_transfer_init(const Checkpoint& src_piv, const Checkpoint& piv_tgt, const std::string& recipe = "plain",
                               const std::string& expected_src_hash = "", const std::string& expected_tgt_hash = "");

inline constexpr model::Group kSourceGroups[] = {model::Group::src_embed, model::Group::encoder};
inline constexpr model::Group kTargetGroups[] = {model::Group::tgt_embed, model::Group::decoder,
                                                 model::Group::output_proj};

// Stage 2 of step-wise pre-training: keeps the stage-1 source embedding and
// encoder, draws fresh target-side groups for the target vocabulary, and
// trains pivot->target with the source groups frozen. The pivot side of
// `piv_tgt` must use the stage-1 encoder vocabulary; more than 1% <unk>
// source tokens is treated as a foreign vocabulary. Throws VocabError.
TrainResult stepwise_stage2(const Checkpoint& stage1, const corpus::ParallelCorpus& piv_tgt,
                            const corpus::ParallelCorpus& piv_tgt_dev, std::size_t tgt_vocab_size,
                            std::uint64_t init_seed, TrainOptions opt);

struct StepwiseResult {
  TrainResult stage1;
  TrainResult stage2;
};

// Stage 1 trains src->piv from scratch on the joint source+pivot encoder
// vocabulary; stage 2 as above.
StepwiseResult stepwise_pretrain(const model::ModelConfig& stage1_config, const corpus::ParallelCorpus& src_piv,
                                 const corpus::ParallelCorpus& src_piv_dev, const corpus::ParallelCorpus& piv_tgt,
                                 const corpus::ParallelCorpus& piv_tgt_dev, std::size_t tgt_vocab_size,
                                 std::uint64_t init_seed, const TrainOptions& stage1_opt, const TrainOptions& stage2_opt);

// Translation plus pivot autoencoding. `autoencoding` pairs each pivot
// sentence with itself under the same vocabularies as `src_piv`; noise, when
// enabled, is applied to its source side with fresh draws every epoch.
// Throws VocabError when noise replaces tokens and the encoder vocabulary
// has no <BLANK>.
TrainingData crosslingual_mixture(corpus::ParallelCorpus src_piv, corpus::ParallelCorpus autoencoding,
                                  const std::optional<corpus::NoiseConfig>& noise, const text::Vocabulary& encoder_vocab,
                                  double autoencoding_share = 1.0, std::uint64_t seed = 0);

TrainResult crosslingual_pretrain(const model::ModelConfig& config, corpus::ParallelCorpus src_piv,
                                  corpus::ParallelCorpus autoencoding, const std::optional<corpus::NoiseConfig>& noise,
                                  const text::Vocabulary& encoder_vocab, const corpus::ParallelCorpus& src_piv_dev,
                                  std::uint64_t init_seed, TrainOptions opt, double autoencoding_share = 1.0);

enum class MultilingualKind { many2many, many2one };

// Concatenation of direction corpora under one shared tokenizer, every
// source prefixed by its target-language tag. many2one keeps only
// directions into `target_lang`; exclude_pairs drops directions between the
// two listed languages (both ways), as in the zero-shot setting. Throws
// VocabError when a needed tag is missing.
corpus::ParallelCorpus multilingual_corpus(std::span<const corpus::TextCorpus> directions,
                                           const text::Tokenizer& shared, MultilingualKind kind,
                                           const std::string& target_lang,
                                           const std::vector<std::pair<std::string, std::string>>& exclude_pairs = {});

TrainResult train_multilingual(const model::ModelConfig& config, const corpus::ParallelCorpus& mixed,
                               const corpus::ParallelCorpus& dev, std::uint64_t init_seed, TrainOptions opt);

struct FinetuneOptions {
  TrainOptions train = [] {
    TrainOptions o;
    o.schedule = TrainSchedule::finetuning();
    return o;
  }();
  // An adapter on a step-wise checkpoint is refused unless this is set.
  bool allow_adapter_after_stepwise = false;
  std::ostream* warnings = nullptr;
};

// Continues training on source->target data with every group trainable.
// The adapter, when given, is fixed, stored in the result and applied during
// training and decoding. Throws ConfigError on an empty corpus or a refused
// adapter, ShapeError when the adapter size differs from the model width.
TrainResult finetune(const Checkpoint& start, corpus::ParallelCorpus src_tgt, const corpus::ParallelCorpus& dev,
                     std::optional<adapter::AdapterMatrix> adapter, FinetuneOptions opt);
TrainResult finetune(const Checkpoint& start, const TrainingData& data, const corpus::ParallelCorpus& dev,
                     std::optional<adapter::AdapterMatrix> adapter, FinetuneOptions opt);

}  // namespace pivotmt::training
