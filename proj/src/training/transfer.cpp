#include "pivotmt/training/transfer.hpp"

#include <algorithm>
#include <set>

#include "pivotmt/corpus/mixture.hpp"
#include "pivotmt/error.hpp"

namespace pivotmt::training {

using model::Group;

namespace {

void require_same_architecture(const model::ModelConfig& a, const model::ModelConfig& b, Group g) {
  if (a.model_dim != b.model_dim || a.layers != b.layers || a.ff_dim != b.ff_dim || a.heads != b.heads) {
    throw ShapeError("transfer: group " + std::string(model::to_string(g)) + " has architecture d=" +
                     std::to_string(b.model_dim) + " layers=" + std::to_string(b.layers) + " ff=" +
                     std::to_string(b.ff_dim) + " heads=" + std::to_string(b.heads) + ", child expects d=" +
                     std::to_string(a.model_dim) + " layers=" + std::to_string(a.layers) + " ff=" +
                     std::to_string(a.ff_dim) + " heads=" + std::to_string(a.heads));
  }
}

double unk_rate(const corpus::ParallelCorpus& c) {
  std::size_t unk = 0, total = 0;
  for (const auto& p : c.pairs) {
    total += p.src.size();
    unk += static_cast<std::size_t>(std::count(p.src.begin(), p.src.end(), text::Vocabulary::kUnkId));
  }
  return total ? static_cast<double>(unk) / static_cast<double>(total) : 0.0;
}

}  // namespace

Checkpoint plain_transfer_init(const Checkpoint& src_piv, const Checkpoint& piv_tgt, const std::string& recipe,
                               const std::string& expected_src_hash, const std::string& expected_tgt_hash) {
  if (!expected_src_hash.empty() && expected_src_hash != src_piv.src_vocab_hash) {
    throw VocabError("transfer: group src_embed has vocabulary " + src_piv.src_vocab_hash + ", expected " +
                     expected_src_hash);
  }
  if (!expected_tgt_hash.empty() && expected_tgt_hash != piv_tgt.tgt_vocab_hash) {
    throw VocabError("transfer: group tgt_embed has vocabulary " + piv_tgt.tgt_vocab_hash + ", expected " +
                     expected_tgt_hash);
  }
  model::ModelConfig cfg = src_piv.config;
  cfg.tgt_vocab_size = piv_tgt.config.tgt_vocab_size;
  cfg.tied_output_embedding = piv_tgt.config.tied_output_embedding;
  for (auto g : kTargetGroups) require_same_architecture(cfg, piv_tgt.config, g);

  Checkpoint child;
  child.config = cfg;
  child.params = model::init_params<float>(cfg, 0);
  for (auto g : kSourceGroups) child.params.copy_group_from(src_piv.params, g);
  for (auto g : kTargetGroups) child.params.copy_group_from(piv_tgt.params, g);
  child.src_vocab_hash = src_piv.src_vocab_hash;
  child.tgt_vocab_hash = piv_tgt.tgt_vocab_hash;
  child.provenance.recipe = recipe;
  child.provenance.stage = "plain-transfer-init";
  child.provenance.parents = {src_piv.provenance, piv_tgt.provenance};
  return child;
}

TrainResult stepwise_stage2(const Checkpoint& stage1, const corpus::ParallelCorpus& piv_tgt,
                            const corpus::ParallelCorpus& piv_tgt_dev, std::size_t tgt_vocab_size,
                            std::uint64_t init_seed, TrainOptions opt) {
  if (piv_tgt.src_vocab_hash != stage1.src_vocab_hash) {
    throw VocabError("stepwise: pivot side uses vocabulary " + piv_tgt.src_vocab_hash +
                     ", not the stage-1 encoder vocabulary " + stage1.src_vocab_hash);
  }
  if (const double rate = unk_rate(piv_tgt); rate > 0.01) {
    throw VocabError("stepwise: " + std::to_string(rate * 100.0) +
                     "% of pivot tokens are <unk> under the stage-1 encoder vocabulary");
  }
  model::ModelConfig cfg = stage1.config;
  cfg.tgt_vocab_size = tgt_vocab_size;
  Checkpoint start = Checkpoint::initialize(cfg, init_seed, stage1.src_vocab_hash, piv_tgt.tgt_vocab_hash,
                                            opt.recipe, "stepwise-stage2-init");
  for (auto g : kSourceGroups) start.params.copy_group_from(stage1.params, g);
  // Fresh target side plus the stage-1 encoder.
  start.provenance.parents = {stage1.provenance};
  start.provenance.init_seed.reset();
  ProvenanceRecord fresh;
  fresh.recipe = opt.recipe;
  fresh.stage = "init";
  fresh.init_seed = init_seed;
  start.provenance.parents.push_back(std::move(fresh));

  opt.stage = std::string(kStepwiseStage2);
  opt.frozen = {kSourceGroups[0], kSourceGroups[1]};
  return train(std::move(start), TrainingData::fixed(piv_tgt), piv_tgt_dev, std::move(opt));
}

StepwiseResult stepwise_pretrain(const model::ModelConfig& stage1_config, const corpus::ParallelCorpus& src_piv,
                                 const corpus::ParallelCorpus& src_piv_dev, const corpus::ParallelCorpus& piv_tgt,
                                 const corpus::ParallelCorpus& piv_tgt_dev, std::size_t tgt_vocab_size,
                                 std::uint64_t init_seed, const TrainOptions& stage1_opt,
                                 const TrainOptions& stage2_opt) {
  auto start = Checkpoint::initialize(stage1_config, init_seed, src_piv.src_vocab_hash, src_piv.tgt_vocab_hash,
                                      stage1_opt.recipe);
  auto opt1 = stage1_opt;
  if (opt1.stage.empty()) opt1.stage = "stepwise-stage1";
  StepwiseResult out;
  out.stage1 = train(std::move(start), TrainingData::fixed(src_piv), src_piv_dev, std::move(opt1));
  out.stage2 = stepwise_stage2(out.stage1.checkpoint, piv_tgt, piv_tgt_dev, tgt_vocab_size, init_seed + 1, stage2_opt);
  return out;
}

TrainingData crosslingual_mixture(corpus::ParallelCorpus src_piv, corpus::ParallelCorpus autoencoding,
                                  const std::optional<corpus::NoiseConfig>& noise, const text::Vocabulary& encoder_vocab,
                                  double autoencoding_share, std::uint64_t seed) {
  if (encoder_vocab.content_hash() != src_piv.src_vocab_hash) {
    throw VocabError("cross-lingual: encoder vocabulary differs from the source side of the translation data");
  }
  const bool noisy = noise && noise->enabled();
  if (noisy && !encoder_vocab.has_blank()) {
    throw VocabError("cross-lingual: noise is enabled but the encoder vocabulary has no <BLANK>");
  }
  corpus::CorpusMixture mix(seed);
  mix.add({"translation", std::move(src_piv), 1.0, std::nullopt, -1});
  mix.add({"autoencoding", std::move(autoencoding), autoencoding_share, noisy ? noise : std::nullopt,
           encoder_vocab.has_blank() ? encoder_vocab.blank_id() : -1});
  return TrainingData::mixture(std::move(mix));
}

TrainResult crosslingual_pretrain(const model::ModelConfig& config, corpus::ParallelCorpus src_piv,
                                  corpus::ParallelCorpus autoencoding, const std::optional<corpus::NoiseConfig>& noise,
                                  const text::Vocabulary& encoder_vocab, const corpus::ParallelCorpus& src_piv_dev,
                                  std::uint64_t init_seed, TrainOptions opt, double autoencoding_share) {
  auto start = Checkpoint::initialize(config, init_seed, src_piv.src_vocab_hash, src_piv.tgt_vocab_hash, opt.recipe);
  auto data = crosslingual_mixture(std::move(src_piv), std::move(autoencoding), noise, encoder_vocab,
                                   autoencoding_share, opt.seed);
  if (opt.stage.empty()) opt.stage = (noise && noise->enabled()) ? "xenc-noisy" : "xenc-clean";
  return train(std::move(start), data, src_piv_dev, std::move(opt));
}

corpus::ParallelCorpus multilingual_corpus(std::span<const corpus::TextCorpus> directions,
                                           const text::Tokenizer& shared, MultilingualKind kind,
                                           const std::string& target_lang,
                                           const std::vector<std::pair<std::string, std::string>>& exclude_pairs) {
  auto excluded = [&](const corpus::TextCorpus& d) {
    for (const auto& [a, b] : exclude_pairs) {
      if ((d.src_lang == a && d.tgt_lang == b) || (d.src_lang == b && d.tgt_lang == a)) return true;
    }
    return false;
  };
  corpus::ParallelCorpus out;
  out.src_lang = "multi";
  out.tgt_lang = kind == MultilingualKind::many2one ? target_lang : "multi";
  out.src_vocab_hash = out.tgt_vocab_hash = shared.vocab().content_hash();
  for (const auto& d : directions) {
    if (excluded(d)) continue;
    if (kind == MultilingualKind::many2one && d.tgt_lang != target_lang) continue;
    const auto tag = shared.vocab().tag_id(d.tgt_lang);
    if (!tag) throw VocabError("multilingual: vocabulary has no tag " + text::language_tag(d.tgt_lang));
    auto enc = corpus::encode_corpus(d, shared, shared, *tag);
    for (auto& p : enc.pairs) out.pairs.push_back(std::move(p));
  }
  if (out.pairs.empty()) throw ConfigError("multilingual: no direction left after filtering");
  return out;
}

TrainResult train_multilingual(const model::ModelConfig& config, const corpus::ParallelCorpus& mixed,
                               const corpus::ParallelCorpus& dev, std::uint64_t init_seed, TrainOptions opt) {
  if (config.src_vocab_size != config.tgt_vocab_size) {
    throw ConfigError("multilingual: a shared vocabulary needs equal source and target sizes");
  }
  auto start = Checkpoint::initialize(config, init_seed, mixed.src_vocab_hash, mixed.tgt_vocab_hash, opt.recipe);
  if (opt.stage.empty()) opt.stage = "multilingual";
  return train(std::move(start), TrainingData::fixed(mixed), dev, std::move(opt));
}

TrainResult finetune(const Checkpoint& start, corpus::ParallelCorpus src_tgt, const corpus::ParallelCorpus& dev,
                     std::optional<adapter::AdapterMatrix> adapter, FinetuneOptions opt) {
  if (src_tgt.size() == 0) {
    throw ConfigError("finetune: empty source-target corpus; zero-shot models are decoded directly");
  }
  return finetune(start, TrainingData::fixed(std::move(src_tgt)), dev, std::move(adapter), std::move(opt));
}

TrainResult finetune(const Checkpoint& start, const TrainingData& data, const corpus::ParallelCorpus& dev,
                     std::optional<adapter::AdapterMatrix> adapter, FinetuneOptions opt) {
  if (adapter) {
    if (adapter->dim() != start.config.model_dim) {
      throw ShapeError("finetune: adapter is " + std::to_string(adapter->dim()) + "x" +
                       std::to_string(adapter->dim()) + " but the encoder width is " +
                       std::to_string(start.config.model_dim));
    }
    if (start.provenance.has_stage(kStepwiseStage2)) {
      const std::string warning =
          "finetune: a pivot adapter on a step-wise pre-trained checkpoint usually hurts; the encoder already "
          "serves both languages";
      if (!opt.allow_adapter_after_stepwise) throw ConfigError(warning + " (pass the override to proceed)");
      if (opt.warnings) *opt.warnings << "warning: " << warning << "\n";
    }
  }
  auto ckpt = start.clone();
  if (adapter) ckpt.adapter = std::move(adapter);
  if (opt.train.stage.empty()) opt.train.stage = ckpt.adapter ? "finetune+adapter" : "finetune";
  opt.train.frozen.clear();
  return train(std::move(ckpt), data, dev, std::move(opt.train));
}

}  // namespace pivotmt::training
