#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pivotmt/adapter/adapter.hpp"
#include "pivotmt/cli/manifest.hpp"
#include "pivotmt/corpus/noise.hpp"
#include "pivotmt/corpus/toy_world.hpp"
#include "pivotmt/decode/bleu.hpp"
#include "pivotmt/decode/search.hpp"
#include "pivotmt/training/trainer.hpp"

namespace pivotmt::cli {

struct Budget {
  training::TrainSchedule schedule;
  std::size_t max_updates = 0;
  std::size_t max_tokens = 4096;
  double label_smoothing = 0.1;
};

// Everything a recipe run depends on. Serialized as JSON with one section
// per module; the text is embedded verbatim in manifests and reports.
struct ExperimentConfig {
  corpus::ToyWorldSpec world;
  std::size_t joint_merges = 300;   // source+pivot BPE
  std::size_t target_merges = 300;
  std::size_t multi_merges = 400;   // all three languages, multilingual baselines
  model::ModelConfig model;         // vocabulary sizes are filled in per model
  Budget pretrain;
  Budget finetune;
  Budget multilingual;              // one model for every direction
  corpus::NoiseConfig noise;
  double autoencoding_share = 1.0;  // autoencoding : translation examples
  adapter::Pooling pooling = adapter::Pooling::average;
  decode::BeamConfig beam;
  std::size_t synthetic_pairs = 5000;  // pivot-side pairs translated for synthetic data
  double synthetic_ratio = 2.0;        // synthetic : real
  std::size_t multilingual_src_tgt_weight = 1;

  static ExperimentConfig desk();
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
// Throws ConfigError on malformed text.
ExperimentConfig parse_experiment_config(const std::string& text);

struct Tokenizers {
  text::Tokenizer joint;   // source + pivot, with <BLANK>
  text::Tokenizer target;
  text::Tokenizer multi;   // all languages, with target tags
};

struct RecipeResult {
  std::string recipe;
  std::uint64_t seed = 0;
  decode::BleuReport dev;
  decode::BleuReport test;
  double seconds = 0.0;  // summed over every stage the recipe depends on
  std::string checkpoint_hash;
  std::vector<std::string> stages;
};

void to_json(nlohmann::json& j, const RecipeResult& r);
void from_json(const nlohmann::json& j, RecipeResult& r);

// Names of every runnable recipe, and the recipes of a named grid
// ("transfer", "pooling", "autoencoding", "zeroshot", "synthetic", "all").
const std::vector<std::string>& recipe_names();
std::vector<std::string> grid_recipes(const std::string& grid);

struct LabOptions {
  bool force = false;
  std::ostream* log = nullptr;
};

// One seed of the toy world in one run directory. Stages are computed on
// demand, written under the run directory, recorded in its manifest and
// reused when their recorded artifacts are intact.
class Lab {
 public:
  Lab(ExperimentConfig config, std::uint64_t seed, std::filesystem::path run_dir, LabOptions options = {});
  ~Lab();

  const ExperimentConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  Manifest& manifest() noexcept { return manifest_; }

  const corpus::ToyCorpora& world();
  const Tokenizers& tokenizers();

  // Stage names: src-piv, piv-tgt, piv-src, stepwise, xenc-<noise>-<source>,
  // stepwise+xenc-<noise>-<source> (noise: noisy|clean, source: pp|mono),
  // m2m, m2m-zeroshot, m2o, and ft-<recipe> for fine-tuned systems.
  training::Checkpoint& checkpoint(const std::string& stage);
  adapter::AdapterMatrix& adapter(const std::string& encoder_stage, adapter::Pooling pooling);

  // Stages a recipe depends on, in execution order.
  std::vector<std::string> recipe_stages(const std::string& recipe) const;
  // Runs (or reloads) the recipe and scores it on the toy test set.
  RecipeResult run(const std::string& recipe);

  // Source-side ids of the test (or dev) split under the encoder vocabulary
  // of a plain or multilingual model, and the matching references.
  std::vector<std::vector<std::int32_t>> test_sources(bool multilingual, bool dev = false);
  const std::vector<std::string>& test_references(bool dev = false);

 private:
  struct Impl;
  // Encoded training corpora by key (src-piv, piv-tgt, src-tgt, ...).
  const corpus::ParallelCorpus& encoded(const std::string& key);
  // Synthetic source->target corpora: "distilled" or "backtranslated".
  const corpus::ParallelCorpus& synthetic(const std::string& kind);
  training::Checkpoint build(const std::string& stage, std::uint64_t stage_seed);
  bool reusable(const std::vector<std::string>& artifacts, const std::string& stage) const;

  ExperimentConfig config_;
  std::uint64_t seed_;
  LabOptions options_;
  Manifest manifest_;
  std::unique_ptr<Impl> impl_;
};

struct GridRow {
  std::string recipe;
  std::vector<double> scores;  // one per seed
  double mean = 0.0;
  double sd = 0.0;
  double max_seconds = 0.0;
};

// Mean and sample standard deviation per recipe, in grid order.
std::vector<GridRow> aggregate(const std::vector<std::string>& recipes, const std::vector<std::vector<RecipeResult>>& per_seed);
std::string format_grid(const std::vector<GridRow>& rows);

}  // namespace pivotmt::cli
