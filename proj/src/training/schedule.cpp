#include "pivotmt/training/schedule.hpp"

#include <cmath>

#include "pivotmt/error.hpp"

namespace pivotmt::training {

TrainSchedule TrainSchedule::pretraining() {
  TrainSchedule s;
  s.checkpoint_interval = 200;
  return s;
}

TrainSchedule TrainSchedule::finetuning() {
  TrainSchedule s;
  s.checkpoint_interval = 100;
  return s;
}

void TrainSchedule::validate() const {
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw ConfigError("schedule: initial_lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("schedule: decay_factor must lie in (0,1]");
  if (decay_patience == 0 || stop_patience == 0) throw ConfigError("schedule: patience must be positive");
  if (checkpoint_interval == 0) throw ConfigError("schedule: checkpoint_interval must be positive");
}

void TrainSchedule::reset() {
  lr = initial_lr;
  best_ppl = std::numeric_limits<double>::infinity();
  since_decay = since_improvement = checkpoints = decays = 0;
  stopped = false;
}

TrainSchedule::Outcome TrainSchedule::observe(double val_ppl) {
  if (stopped) throw StateError("schedule: observe after stop");
  Outcome out;
  ++checkpoints;
  if (std::isfinite(val_ppl) && val_ppl < best_ppl) {
    best_ppl = val_ppl;
    since_decay = since_improvement = 0;
    out.improved = true;
    return out;
  }
  ++since_decay;
  ++since_improvement;
  if (since_improvement >= stop_patience) {
    stopped = out.stop = true;
    return out;
  }
  if (since_decay >= decay_patience) {
    lr *= decay_factor;
    since_decay = 0;
    ++decays;
    out.decayed = true;
  }
  return out;
}

namespace {

// JSON has no infinity; an unset best is stored as null.
nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void to_json(nlohmann::json& j, const TrainSchedule& s) {
  j = nlohmann::json{{"initial_lr", s.initial_lr},
                     {"decay_factor", s.decay_factor},
                     {"decay_patience", s.decay_patience},
                     {"stop_patience", s.stop_patience},
                     {"checkpoint_interval", s.checkpoint_interval},
                     {"lr", s.lr},
                     {"best_ppl", finite_or_null(s.best_ppl)},
                     {"since_decay", s.since_decay},
                     {"since_improvement", s.since_improvement},
                     {"checkpoints", s.checkpoints},
                     {"decays", s.decays},
                     {"stopped", s.stopped}};
}

void from_json(const nlohmann::json& j, TrainSchedule& s) {
  TrainSchedule d;
  s.initial_lr = j.value("initial_lr", d.initial_lr);
  s.decay_factor = j.value("decay_factor", d.decay_factor);
  s.decay_patience = j.value("decay_patience", d.decay_patience);
  s.stop_patience = j.value("stop_patience", d.stop_patience);
  s.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  s.lr = j.value("lr", s.initial_lr);
  const auto best = j.find("best_ppl");
  s.best_ppl = (best == j.end() || best->is_null()) ? std::numeric_limits<double>::infinity() : best->get<double>();
  s.since_decay = j.value("since_decay", std::size_t{0});
  s.since_improvement = j.value("since_improvement", std::size_t{0});
  s.checkpoints = j.value("checkpoints", std::size_t{0});
  s.decays = j.value("decays", std::size_t{0});
  s.stopped = j.value("stopped", false);
}

}  // namespace pivotmt::training
