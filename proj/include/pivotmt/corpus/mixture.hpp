#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pivotmt/corpus/noise.hpp"
#include "pivotmt/corpus/parallel.hpp"

namespace pivotmt::corpus {

struct MixtureComponent {
  std::string name;
  ParallelCorpus corpus;
  // Relative share of per-epoch examples.
  double share = 1.0;
  // Applied to the source side of every occurrence, resampled each epoch.
  std::optional<NoiseConfig> noise;
  std::int32_t blank_id = -1;
};

// Example-level mixture of corpora that share vocabularies. The first
// component is the anchor: it contributes size * weight occurrences per
// epoch, and component i contributes round(anchor * share_i / share_0),
// taken as whole passes plus a seeded subsample without replacement.
class CorpusMixture {
 public:
  explicit CorpusMixture(std::uint64_t seed = 0) : seed_(seed) {}

  // Throws VocabError when either vocabulary hash differs from the first
  // component's, or when noise replaces tokens but no <BLANK> id is set.
  void add(MixtureComponent component);

  std::size_t component_count() const noexcept { return components_.size(); }
  const MixtureComponent& component(std::size_t i) const { return components_.at(i); }
  std::vector<std::size_t> epoch_counts() const;

  // Flattened epoch with weight 1; make_batches shuffles it.
  ParallelCorpus materialize(std::uint64_t epoch) const;

 private:
  std::uint64_t seed_;
  std::vector<MixtureComponent> components_;
};

}  // namespace pivotmt::corpus
