#include "pivotmt/training/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include "pivotmt/corpus/batching.hpp"
#include "pivotmt/error.hpp"
#include "pivotmt/tensor/allocator.hpp"

namespace pivotmt::training {

using model::Group;

TrainingData TrainingData::fixed(corpus::ParallelCorpus corpus) {
  corpus.validate();
  TrainingData d;
  d.src_vocab_hash = corpus.src_vocab_hash;
  d.tgt_vocab_hash = corpus.tgt_vocab_hash;
  auto shared = std::make_shared<const corpus::ParallelCorpus>(std::move(corpus));
  d.epoch = [shared](std::uint64_t) { return *shared; };
  return d;
}

TrainingData TrainingData::mixture(corpus::CorpusMixture mixture) {
  if (mixture.component_count() == 0) throw ConfigError("training data: empty mixture");
  TrainingData d;
  d.src_vocab_hash = mixture.component(0).corpus.src_vocab_hash;
  d.tgt_vocab_hash = mixture.component(0).corpus.tgt_vocab_hash;
  auto shared = std::make_shared<const corpus::CorpusMixture>(std::move(mixture));
  d.epoch = [shared](std::uint64_t e) { return shared->materialize(e); };
  return d;
}

namespace {

void check_vocab(const Checkpoint& c, const std::string& src, const std::string& tgt, const std::string& what) {
  if (src != c.src_vocab_hash) {
    throw VocabError(what + ": source vocabulary " + src + " differs from the checkpoint's " + c.src_vocab_hash);
  }
  if (tgt != c.tgt_vocab_hash) {
    throw VocabError(what + ": target vocabulary " + tgt + " differs from the checkpoint's " + c.tgt_vocab_hash);
  }
}

const tensor::Tensor<float>* adapter_of(const Checkpoint& c) { return c.adapter ? &c.adapter->m32 : nullptr; }

std::vector<tensor::Tensor<float>> snapshot(const model::ParamStore<float>& ps) {
  std::vector<tensor::Tensor<float>> out;
  out.reserve(ps.entries().size());
  for (const auto& e : ps.entries()) out.push_back(e.var.value());
  return out;
}

void restore(model::ParamStore<float>& ps, const std::vector<tensor::Tensor<float>>& values) {
  auto& entries = ps.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].var.mutable_value() = values[i];
}

void log_line(std::ostream* log, std::size_t step, double lr, double loss, const double* ppl) {
  if (!log) return;
  char buf[160];
  if (ppl) {
    std::snprintf(buf, sizeof buf, "step=%zu lr=%.6g train_loss=%.4f val_ppl=%.4f\n", step, lr, loss, *ppl);
  } else {
    std::snprintf(buf, sizeof buf, "step=%zu lr=%.6g train_loss=%.4f\n", step, lr, loss);
  }
  *log << buf << std::flush;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) { return seed * 0x9E3779B97F4A7C15ULL + epoch + 1; }

}  // namespace

double validation_perplexity(Checkpoint& ckpt, const corpus::ParallelCorpus& dev, std::size_t max_tokens) {
  if (dev.size() == 0) throw ConfigError("validation: empty dev corpus");
  tensor::NoGradGuard no_grad;
  model::Transformer<float> net(ckpt.config, ckpt.params);
  const auto plan = corpus::make_batches(dev, max_tokens, 0);
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : plan.batches) {
    const auto loss = net.forward_loss(b, adapter_of(ckpt), 0.0F, {});
    const auto n = b.target_tokens();
    total += static_cast<double>(loss.value()[0]) * static_cast<double>(n);
    tokens += n;
  }
  if (tokens == 0) throw ConfigError("validation: every dev pair exceeds the batch budget");
  return std::exp(total / static_cast<double>(tokens));
}

TrainResult train(Checkpoint start, const TrainingData& data, const corpus::ParallelCorpus& dev, TrainOptions opt) {
  tensor::tune_allocator();
  opt.schedule.validate();
  opt.schedule.reset();
  if (!data.epoch) throw ConfigError("train: no training data");
  check_vocab(start, data.src_vocab_hash, data.tgt_vocab_hash, "train");
  check_vocab(start, dev.src_vocab_hash, dev.tgt_vocab_hash, "train (dev)");
  start.config.validate();

  TrainResult result;
  Checkpoint ckpt = std::move(start);
  auto& params = ckpt.params;
  for (auto g : model::kAllGroups) params.set_frozen(g, false);
  for (auto g : opt.frozen) {
    params.set_frozen(g, true);
    result.frozen_hashes[g] = group_hash(params, g);
  }

  model::Transformer<float> net(ckpt.config, params);
  tensor::AdamState<float> adam;
  Rng dropout_rng(opt.seed ^ 0xD1B54A32D192ED03ULL);
  auto& schedule = opt.schedule;
  auto best = snapshot(params);

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::size_t step = 0;
  std::size_t last_checkpoint = 0;
  auto checkpoint_now = [&] {
    const double ppl = validation_perplexity(ckpt, dev, opt.max_tokens);
    result.val_ppl.push_back(ppl);
    const double lr_used = schedule.lr;
    const auto outcome = schedule.observe(ppl);
    if (outcome.improved) best = snapshot(params);
    log_line(opt.log, step, lr_used, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, &ppl);
    loss_sum = 0.0;
    loss_count = 0;
    last_checkpoint = step;
    result.stopped_by_schedule = outcome.stop;
  };

  bool done = false;
  for (std::uint64_t epoch = 0; !done; ++epoch) {
    const auto plan = corpus::make_batches(data.epoch(epoch), opt.max_tokens, epoch_seed(opt.seed, epoch));
    if (plan.batches.empty()) throw ConfigError("train: no pair fits the batch budget");
    for (const auto& batch : plan.batches) {
      adam.learning_rate = schedule.lr;
      try {
        model::ForwardOptions fo{true, &dropout_rng};
        const auto loss = net.forward_loss(batch, adapter_of(ckpt), static_cast<float>(opt.label_smoothing), fo);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) throw NumericError("train: non-finite loss");
        tensor::backward(loss);
        const auto view = params.adam_view();
        tensor::adam_step<float>(view, adam);
        params.zero_grad();
        loss_sum += value;
        ++loss_count;
      } catch (const NumericError& e) {
        params.zero_grad();
        result.diverged = true;
        result.divergence = "step " + std::to_string(step + 1) + ": " + e.what();
        done = true;
        break;
      }
      ++step;
      if (step % schedule.checkpoint_interval == 0) {
        checkpoint_now();
        if (schedule.stopped) done = true;
      } else if (opt.log_interval && step % opt.log_interval == 0) {
        log_line(opt.log, step, schedule.lr, loss_sum / static_cast<double>(loss_count), nullptr);
      }
      if (opt.max_updates && step >= opt.max_updates) done = true;
      if (done) break;
    }
  }
  if (!result.diverged && !schedule.stopped && step > last_checkpoint) checkpoint_now();

  // The best snapshot is the last good state: a diverged run never
  // improved after its final successful checkpoint.
  restore(params, best);
  for (const auto& [g, before] : result.frozen_hashes) {
    if (group_hash(params, g) != before) {
      throw StateError("train: frozen group " + std::string(model::to_string(g)) + " changed");
    }
  }
  for (auto g : model::kAllGroups) params.set_frozen(g, false);

  ProvenanceRecord prov;
  prov.recipe = opt.recipe;
  prov.stage = opt.stage;
  prov.train_seed = opt.seed;
  prov.lr_reset = true;
  for (auto g : opt.frozen) prov.frozen_groups.emplace_back(model::to_string(g));
  prov.parents.push_back(std::move(ckpt.provenance));
  ckpt.provenance = std::move(prov);
  ckpt.schedule = schedule;
  ckpt.steps += step;
  result.updates = step;
  result.checkpoint = std::move(ckpt);
  return result;
}

}  // namespace pivotmt::training
