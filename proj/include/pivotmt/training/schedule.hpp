#pragma once

#include <cstddef>
#include <limits>

#include <json.hpp>

namespace pivotmt::training {

// Plateau decay on validation perplexity. "Not improved" means not strictly
// below the best value so far. The decay counter resets on improvement and
// on every decay; the stop counter resets only on improvement.
struct TrainSchedule {
  double initial_lr = 1e-4;
  double decay_factor = 0.7;
  std::size_t decay_patience = 3;
  std::size_t stop_patience = 8;
  std::size_t checkpoint_interval = 200;

  // Mutable state.
  double lr = 1e-4;
  double best_ppl = std::numeric_limits<double>::infinity();
  std::size_t since_decay = 0;
  std::size_t since_improvement = 0;
  std::size_t checkpoints = 0;
  std::size_t decays = 0;
  bool stopped = false;

  static TrainSchedule pretraining();  // interval 200
  static TrainSchedule finetuning();   // interval 100

  // Throws ConfigError on non-positive rates, factor outside (0,1], zero
  // patience or interval.
  void validate() const;
  // Restores the learning rate and counters to their initial values.
  void reset();

  struct Outcome {
    bool improved = false;
    bool decayed = false;
    bool stop = false;
  };
  // Records one checkpoint. Non-finite perplexity counts as no improvement.
  // Throws StateError after the schedule has stopped.
  Outcome observe(double val_ppl);

  bool operator==(const TrainSchedule&) const = default;
};

void to_json(nlohmann::json& j, const TrainSchedule& s);
void from_json(const nlohmann::json& j, TrainSchedule& s);

}  // namespace pivotmt::training
