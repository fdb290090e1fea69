#include "pivotmt/text/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "pivotmt/error.hpp"
#include "pivotmt/hash.hpp"

namespace pivotmt::text {

std::string language_tag(std::string_view language) { return "<2" + std::string(language) + ">"; }

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> segmented, const SpecialTokens& specials) {
  Vocabulary v;
  v.tokens_ = {std::string(kPad), std::string(kBos), std::string(kEos), std::string(kUnk)};
  if (specials.blank) v.tokens_.emplace_back(kBlank);
  for (const auto& lang : specials.tag_languages) v.tokens_.push_back(language_tag(lang));
  v.special_count_ = v.tokens_.size();

  std::map<std::string, long long> counts;
  for (const auto& line : segmented) {
    for (const auto& tok : line) ++counts[tok];
  }
  std::vector<std::pair<std::string, long long>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [tok, n] : ordered) {
    if (std::find(v.tokens_.begin(), v.tokens_.begin() + static_cast<long>(v.special_count_), tok) !=
        v.tokens_.begin() + static_cast<long>(v.special_count_)) {
      continue;
    }
    v.tokens_.push_back(std::move(tok));
  }
  v.index();
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  blank_id_.reset();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = ids_.emplace(tokens_[i], static_cast<std::int32_t>(i));
    if (!inserted) throw VocabError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
  if (special_count_ < 4 || tokens_.size() < 4 || tokens_[0] != kPad || tokens_[1] != kBos ||
      tokens_[2] != kEos || tokens_[3] != kUnk) {
    throw VocabError("vocabulary: reserved ids 0-3 must be <pad> <s> </s> <unk>");
  }
  for (std::size_t i = 4; i < special_count_; ++i) {
    if (tokens_[i] == kBlank) blank_id_ = static_cast<std::int32_t>(i);
  }
}

std::int32_t Vocabulary::blank_id() const {
  if (!blank_id_) throw VocabError("vocabulary: no <BLANK> token (noise disabled for this vocabulary)");
  return *blank_id_;
}

std::optional<std::int32_t> Vocabulary::tag_id(std::string_view language) const {
  auto id = find(language_tag(language));
  if (id && is_special(*id)) return id;
  return std::nullopt;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::int32_t Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnkId); }

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const std::int32_t> ids, bool keep_special) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    if (!keep_special && is_special(id)) continue;
    out.push_back(token(id));
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out = "#vocab-v1 specials=" + std::to_string(special_count_) + "\n";
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string header;
  if (!std::getline(in, header)) throw IoError("vocabulary: empty file");
  constexpr std::string_view prefix = "#vocab-v1 specials=";
  if (header.rfind(prefix, 0) != 0) throw IoError("vocabulary: bad header '" + header + "'");
  Vocabulary v;
  try {
    v.special_count_ = std::stoul(header.substr(prefix.size()));
  } catch (const std::exception&) {
    throw IoError("vocabulary: bad header '" + header + "'");
  }
  std::string line;
  while (std::getline(in, line)) v.tokens_.push_back(line);
  if (v.special_count_ > v.tokens_.size()) throw IoError("vocabulary: fewer tokens than declared specials");
  v.index();
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("vocabulary: cannot write " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("vocabulary: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Vocabulary::content_hash() const { return pivotmt::content_hash(serialize()); }

}  // namespace pivotmt::text
