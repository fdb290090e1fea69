#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pivotmt/adapter/adapter.hpp"
#include "pivotmt/model/params.hpp"
#include "pivotmt/model/transformer.hpp"
#include "pivotmt/training/schedule.hpp"

namespace pivotmt::training {

// How a checkpoint came to be. Parents are embedded by value, so the chain
// is a finite tree whose leaves are fresh initializations.
struct ProvenanceRecord {
  std::string recipe;
  std::string stage;
  std::optional<std::uint64_t> init_seed;  // set when parameters were freshly initialized
  std::uint64_t train_seed = 0;
  std::vector<std::string> frozen_groups;
  bool lr_reset = true;  // schedule restarted at initial_lr for this stage
  std::vector<ProvenanceRecord> parents;

  // True when this record or any ancestor has the given stage name.
  bool has_stage(std::string_view name) const;
  // Every leaf records an init seed.
  bool complete() const;
  std::size_t depth() const;

  bool operator==(const ProvenanceRecord&) const = default;
};

void to_json(nlohmann::json& j, const ProvenanceRecord& p);
void from_json(const nlohmann::json& j, ProvenanceRecord& p);

struct Checkpoint {
  model::ModelConfig config;
  model::ParamStore<float> params;
  std::string src_vocab_hash;
  std::string tgt_vocab_hash;
  TrainSchedule schedule;
  ProvenanceRecord provenance;
  std::optional<adapter::AdapterMatrix> adapter;  // applied after the encoder when present
  std::size_t steps = 0;

  // Parameter handles share graph nodes, so copies are explicit via clone().
  Checkpoint() = default;
  Checkpoint(Checkpoint&&) = default;
  Checkpoint& operator=(Checkpoint&&) = default;
  Checkpoint(const Checkpoint&) = delete;
  Checkpoint& operator=(const Checkpoint&) = delete;

  // Fresh seeded parameters.
  static Checkpoint initialize(const model::ModelConfig& config, std::uint64_t seed, std::string src_vocab_hash,
                               std::string tgt_vocab_hash, std::string recipe = "", std::string stage = "init");
  Checkpoint clone() const;
};

// Stage names with special meaning to fine-tuning.
inline constexpr std::string_view kStepwiseStage2 = "stepwise-stage2";

// Fingerprint of one group's names, shapes and bytes.
std::string group_hash(const model::ParamStore<float>& params, model::Group g);
// Fingerprint of the serialized checkpoint.
std::string checkpoint_hash(const Checkpoint& c);

// File layout: magic "PTLCKPT1"; u64 header length; UTF-8 JSON header
// (config, vocab hashes, schedule, provenance, adapter metadata, tensor
// table with byte offsets relative to the tensor block); then each tensor as
// u32 name length, name "group/param", u8 dtype (0 f32, 1 f64), u32 rank,
// u64 dims, little-endian payload.
std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& what = "checkpoint");
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
// Throws IoError on a malformed file and ShapeError when the stored tensors
// do not match the stored model configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pivotmt::training
