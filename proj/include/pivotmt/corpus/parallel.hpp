#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pivotmt/text/tokenizer.hpp"

namespace pivotmt::corpus {

// Untokenized aligned lines.
struct TextCorpus {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
  std::string src_lang;
  std::string tgt_lang;

  std::size_t size() const noexcept { return src.size(); }
  TextCorpus swapped() const { return {tgt, src, tgt_lang, src_lang}; }
  TextCorpus slice(std::size_t begin, std::size_t end) const;
};

// Writes <prefix>.<src_lang> and <prefix>.<tgt_lang>, one sentence per line.
void write_text_corpus(const TextCorpus& corpus, const std::filesystem::path& prefix);
TextCorpus read_text_corpus(const std::filesystem::path& prefix, const std::string& src_lang,
                            const std::string& tgt_lang);
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path);

struct SentencePair {
  std::vector<std::int32_t> src;
  std::vector<std::int32_t> tgt;
  bool operator==(const SentencePair&) const = default;
};

// Token-id corpus. weight is an exact integer duplication count per epoch.
struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::string src_lang;
  std::string tgt_lang;
  std::size_t weight = 1;
  std::string src_vocab_hash;
  std::string tgt_vocab_hash;

  std::size_t size() const noexcept { return pairs.size(); }
  // Throws ConfigError on an empty side or zero weight.
  void validate() const;
};

// Tokenizes both sides. With src_tag set, the tag id is prepended to every
// source sequence. Pairs whose either side tokenizes to nothing are dropped.
ParallelCorpus encode_corpus(const TextCorpus& text, const text::Tokenizer& src, const text::Tokenizer& tgt,
                             std::optional<std::int32_t> src_tag = std::nullopt);

// Autoencoding pairs (x, x) over one language.
ParallelCorpus autoencoding_corpus(const std::vector<std::string>& lines, const text::Tokenizer& tok,
                                   const std::string& lang);

// Integer oversampling factor for `real` so that real*w : synthetic is as
// close as possible to real_share : synthetic_share (w >= 1).
std::size_t oversample_factor(std::size_t real, std::size_t synthetic, double real_share, double synthetic_share);

}  // namespace pivotmt::corpus
