#include "pivotmt/text/bpe.hpp"

#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "pivotmt/error.hpp"

namespace pivotmt::text {

namespace {

std::string pair_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left);
  key.push_back('\x1f');
  key.append(right);
  return key;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f'; }

// Code points of a UTF-8 word, final one carrying the end-of-word marker.
std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  if (!out.empty()) out.back().append(kEndOfWord);
  return out;
}

void merge_in_place(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  std::vector<std::string> merged;
  merged.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      merged.push_back(left + right);
      i += 2;
    } else {
      merged.push_back(std::move(symbols[i]));
      ++i;
    }
  }
  symbols = std::move(merged);
}

}  // namespace

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) words.emplace_back(line.substr(start, i - start));
  }
  return words;
}

BpeModel::BpeModel(std::vector<Merge> merges, std::vector<std::string> languages)
    : merges_(std::move(merges)), languages_(std::move(languages)) {
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    auto [it, inserted] = rank_.emplace(pair_key(merges_[r].first, merges_[r].second), r);
    if (!inserted) {
      throw ConfigError("bpe: duplicate merge '" + merges_[r].first + " " + merges_[r].second + "'");
    }
  }
}

std::vector<std::string> BpeModel::segment_word(std::string_view word) const {
  auto symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_at = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const std::string left = symbols[best_at];
    const std::string right = symbols[best_at + 1];
    merge_in_place(symbols, left, right);
  }
  return symbols;
}

std::vector<std::string> BpeModel::segment(std::string_view line) const {
  std::vector<std::string> out;
  for (const auto& word : split_words(line)) {
    auto pieces = segment_word(word);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()), std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::string BpeModel::serialize() const {
  std::string out = "bpe-v1 " + std::to_string(merges_.size()) + "\n";
  for (const auto& [l, r] : merges_) {
    out += l;
    out += ' ';
    out += r;
    out += '\n';
  }
  return out;
}

BpeModel BpeModel::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string header;
  if (!std::getline(in, header)) throw IoError("bpe: empty model file");
  std::istringstream hs(header);
  std::string magic;
  std::size_t count = 0;
  if (!(hs >> magic >> count) || magic != "bpe-v1") {
    throw IoError("bpe: bad header '" + header + "'");
  }
  std::vector<Merge> merges;
  merges.reserve(count);
  std::string line;
  while (merges.size() < count && std::getline(in, line)) {
    const auto words = split_words(line);
    if (words.size() != 2) throw IoError("bpe: malformed merge line '" + line + "'");
    merges.emplace_back(words[0], words[1]);
  }
  if (merges.size() != count) {
    throw IoError("bpe: header declares " + std::to_string(count) + " merges, found " +
                  std::to_string(merges.size()));
  }
  return BpeModel(std::move(merges));
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("bpe: cannot write " + path.string());
  out << serialize();
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("bpe: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

BpeModel learn_bpe(std::span<const std::string> lines, std::size_t merge_count,
                   std::vector<std::string> languages) {
  std::map<std::string, long long> word_freq;
  for (const auto& line : lines) {
    for (auto& w : split_words(line)) ++word_freq[w];
  }
  if (word_freq.empty()) throw ConfigError("learn_bpe: empty corpus");

  struct Entry {
    std::vector<std::string> symbols;
    long long freq;
  };
  std::vector<Entry> words;
  words.reserve(word_freq.size());
  for (const auto& [w, f] : word_freq) words.push_back({initial_symbols(w), f});

  std::vector<BpeModel::Merge> merges;
  while (merges.size() < merge_count) {
    std::map<std::pair<std::string, std::string>, long long> pairs;
    for (const auto& e : words) {
      for (std::size_t i = 0; i + 1 < e.symbols.size(); ++i) {
        pairs[{e.symbols[i], e.symbols[i + 1]}] += e.freq;
      }
    }
    if (pairs.empty()) break;
    // Ordered map: the first maximum seen is the lexicographically smallest.
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto chosen = best->first;
    for (auto& e : words) merge_in_place(e.symbols, chosen.first, chosen.second);
    merges.push_back(chosen);
  }
  return BpeModel(std::move(merges), std::move(languages));
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  bool at_word_start = true;
  for (const auto& tok : tokens) {
    std::string_view piece = tok;
    const bool ends_word = piece.size() >= kEndOfWord.size() &&
                           piece.substr(piece.size() - kEndOfWord.size()) == kEndOfWord;
    if (ends_word) piece.remove_suffix(kEndOfWord.size());
    if (at_word_start && !out.empty()) out.push_back(' ');
    out.append(piece);
    at_word_start = ends_word;
  }
  return out;
}

}  // namespace pivotmt::text
