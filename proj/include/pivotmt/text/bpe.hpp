#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pivotmt::text {

inline constexpr std::string_view kEndOfWord = "</w>";

// Splits on ASCII whitespace.
std::vector<std::string> split_words(std::string_view line);

// Byte pair encoding merge table. Segmentation replays merges in learned
// order; the end-of-word marker is glued to each word's final symbol.
class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeModel() = default;
  BpeModel(std::vector<Merge> merges, std::vector<std::string> languages = {});

  const std::vector<Merge>& merges() const noexcept { return merges_; }
  std::size_t merge_count() const noexcept { return merges_.size(); }
  const std::vector<std::string>& languages() const noexcept { return languages_; }

  std::vector<std::string> segment_word(std::string_view word) const;
  std::vector<std::string> segment(std::string_view line) const;

  // "bpe-v1 <n>" followed by one "left right" line per merge.
  std::string serialize() const;
  static BpeModel parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

 private:
  std::vector<Merge> merges_;
  std::vector<std::string> languages_;
  std::unordered_map<std::string, std::size_t> rank_;
};

// Greedy most-frequent-pair learning over whitespace-split words. Ties go
// to the lexicographically smallest (left, right). Stops early when no pair
// is left to merge. Throws ConfigError on an empty corpus.
BpeModel learn_bpe(std::span<const std::string> lines, std::size_t merge_count,
                   std::vector<std::string> languages = {});

inline std::vector<std::string> apply_bpe(const BpeModel& model, std::string_view line) {
  return model.segment(line);
}

// Joins subword tokens back into words, treating "</w>" as a word boundary.
std::string detokenize(std::span<const std::string> tokens);

}  // namespace pivotmt::text
