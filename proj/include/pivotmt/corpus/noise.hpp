#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pivotmt/rng.hpp"

namespace pivotmt::corpus {

struct NoiseConfig {
  double p_del = 0.1;
  double p_rep = 0.1;
  std::size_t d_per = 3;
  std::uint64_t seed = 0;

  bool enabled() const noexcept { return p_del > 0.0 || p_rep > 0.0 || d_per > 0; }
  // Throws ConfigError unless 0 <= p_del, p_rep and p_del + p_rep <= 1.
  void validate() const;
};

// Deletion, then <BLANK> replacement with probability p_rep / (1 - p_del) on
// survivors (marginal rate p_rep), then a local shuffle by sorting on
// index + U(0, d_per + 1). Surviving tokens move at most d_per positions
// relative to their post-deletion index. The result is never empty.
std::vector<std::int32_t> apply_noise(std::span<const std::int32_t> tokens, const NoiseConfig& cfg,
                                      std::int32_t blank_id, Rng& rng);

}  // namespace pivotmt::corpus
