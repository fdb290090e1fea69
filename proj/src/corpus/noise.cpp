#include "pivotmt/corpus/noise.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "pivotmt/error.hpp"

namespace pivotmt::corpus {

void NoiseConfig::validate() const {
  if (p_del < 0.0 || p_rep < 0.0 || p_del > 1.0 || p_rep > 1.0 || p_del + p_rep > 1.0 + 1e-12) {
    throw ConfigError("noise: need 0 <= p_del, p_rep and p_del + p_rep <= 1 (got " + std::to_string(p_del) + ", " +
                      std::to_string(p_rep) + ")");
  }
}

std::vector<std::int32_t> apply_noise(std::span<const std::int32_t> tokens, const NoiseConfig& cfg,
                                      std::int32_t blank_id, Rng& rng) {
  cfg.validate();
  if (tokens.empty()) return {};
  const double p_blank = cfg.p_del < 1.0 ? cfg.p_rep / (1.0 - cfg.p_del) : 0.0;

  std::vector<std::int32_t> kept;
  kept.reserve(tokens.size());
  for (auto t : tokens) {
    if (cfg.p_del > 0.0 && rng.bernoulli(cfg.p_del)) continue;
    kept.push_back(p_blank > 0.0 && rng.bernoulli(p_blank) ? blank_id : t);
  }
  if (kept.empty()) kept.push_back(tokens[rng.below(tokens.size())]);

  if (cfg.d_per == 0 || kept.size() < 2) return kept;
  std::vector<double> key(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    key[i] = static_cast<double>(i) + rng.uniform(0.0, static_cast<double>(cfg.d_per + 1));
  }
  std::vector<std::size_t> order(kept.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  std::vector<std::int32_t> out(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[i] = kept[order[i]];
  return out;
}

}  // namespace pivotmt::corpus
