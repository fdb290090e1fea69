#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pivotmt::text {

inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kBlank = "<BLANK>";

// Target-language tag, e.g. language "tgt" -> "<2tgt>".
std::string language_tag(std::string_view language);

struct SpecialTokens {
  bool blank = false;
  std::vector<std::string> tag_languages;
};

// Token <-> id map. Ids 0..3 are always <pad>, <s>, </s>, <unk>; <BLANK> and
// the language tags follow when configured, then ordinary tokens by
// descending frequency (ties lexicographic).
class Vocabulary {
 public:
  static constexpr std::int32_t kPadId = 0;
  static constexpr std::int32_t kBosId = 1;
  static constexpr std::int32_t kEosId = 2;
  static constexpr std::int32_t kUnkId = 3;

  Vocabulary() = default;

  static Vocabulary build(std::span<const std::vector<std::string>> segmented, const SpecialTokens& specials);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t special_count() const noexcept { return special_count_; }
  bool has_blank() const noexcept { return blank_id_.has_value(); }
  std::int32_t blank_id() const;
  std::optional<std::int32_t> tag_id(std::string_view language) const;

  std::optional<std::int32_t> find(std::string_view token) const;
  std::int32_t id(std::string_view token) const;  // unknown -> kUnkId
  const std::string& token(std::int32_t id) const;
  bool is_special(std::int32_t id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < special_count_;
  }

  std::vector<std::int32_t> encode(std::span<const std::string> tokens) const;
  // Special tokens are dropped unless keep_special is set.
  std::vector<std::string> decode(std::span<const std::int32_t> ids, bool keep_special = false) const;

  // "#vocab-v1 specials=<k>" header, then one token per line; the i-th
  // token line holds id i.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string content_hash() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_ && special_count_ == other.special_count_; }

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::size_t special_count_ = 0;
  std::optional<std::int32_t> blank_id_;
};

}  // namespace pivotmt::text
