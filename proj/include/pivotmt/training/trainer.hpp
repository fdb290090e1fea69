#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "pivotmt/corpus/mixture.hpp"
#include "pivotmt/corpus/parallel.hpp"
#include "pivotmt/training/checkpoint.hpp"

namespace pivotmt::training {

// Source of per-epoch training examples. All epochs share one pair of
// vocabulary hashes.
struct TrainingData {
  std::function<corpus::ParallelCorpus(std::uint64_t epoch)> epoch;
  std::string src_vocab_hash;
  std::string tgt_vocab_hash;

  static TrainingData fixed(corpus::ParallelCorpus corpus);
  static TrainingData mixture(corpus::CorpusMixture mixture);
};

struct TrainOptions {
  TrainSchedule schedule = TrainSchedule::pretraining();
  std::size_t max_tokens = 4096;  // target tokens per batch
  std::size_t max_updates = 0;    // 0: run until the schedule stops
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;
  std::vector<model::Group> frozen;
  std::size_t log_interval = 50;
  std::ostream* log = nullptr;  // receives "step=<n> lr=<f> train_loss=<f> [val_ppl=<f>]"
  std::string recipe;
  std::string stage;
};

struct TrainResult {
  Checkpoint checkpoint;  // best validation perplexity
  std::size_t updates = 0;
  bool stopped_by_schedule = false;
  bool diverged = false;
  std::string divergence;  // message of the failure when diverged
  std::vector<double> val_ppl;
  std::map<model::Group, std::string> frozen_hashes;  // identical before and after
};

// Exponentiated mean token cross-entropy (no smoothing, no dropout).
double validation_perplexity(Checkpoint& ckpt, const corpus::ParallelCorpus& dev, std::size_t max_tokens = 4096);

// Adam updates on `data` starting from `start`, with validation every
// schedule.checkpoint_interval updates and once more at the end. The
// schedule restarts at its initial learning rate. Frozen groups are
// verified unchanged by hash. A non-finite loss aborts the run and returns
// the last good checkpoint with diverged set. Throws VocabError when the
// data or dev vocabularies differ from the checkpoint's.
TrainResult train(Checkpoint start, const TrainingData& data, const corpus::ParallelCorpus& dev, TrainOptions opt);

}  // namespace pivotmt::training
