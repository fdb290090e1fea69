#include "pivotmt/corpus/parallel.hpp"

#include <cmath>
#include <fstream>

#include "pivotmt/error.hpp"

namespace pivotmt::corpus {

TextCorpus TextCorpus::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, src.size());
  begin = std::min(begin, end);
  TextCorpus out;
  out.src.assign(src.begin() + static_cast<long>(begin), src.begin() + static_cast<long>(end));
  out.tgt.assign(tgt.begin() + static_cast<long>(begin), tgt.begin() + static_cast<long>(end));
  out.src_lang = src_lang;
  out.tgt_lang = tgt_lang;
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void write_text_corpus(const TextCorpus& corpus, const std::filesystem::path& prefix) {
  write_lines(corpus.src, prefix.string() + "." + corpus.src_lang);
  write_lines(corpus.tgt, prefix.string() + "." + corpus.tgt_lang);
}

TextCorpus read_text_corpus(const std::filesystem::path& prefix, const std::string& src_lang,
                            const std::string& tgt_lang) {
  TextCorpus c;
  c.src_lang = src_lang;
  c.tgt_lang = tgt_lang;
  c.src = read_lines(prefix.string() + "." + src_lang);
  c.tgt = read_lines(prefix.string() + "." + tgt_lang);
  if (c.src.size() != c.tgt.size()) {
    throw IoError("corpus " + prefix.string() + ": " + std::to_string(c.src.size()) + " source lines vs " +
                  std::to_string(c.tgt.size()) + " target lines");
  }
  return c;
}

void ParallelCorpus::validate() const {
  if (weight == 0) throw ConfigError("corpus " + src_lang + "-" + tgt_lang + ": weight must be >= 1");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].src.empty() || pairs[i].tgt.empty()) {
      throw ConfigError("corpus " + src_lang + "-" + tgt_lang + ": pair " + std::to_string(i) + " has an empty side");
    }
  }
}

ParallelCorpus encode_corpus(const TextCorpus& text, const text::Tokenizer& src, const text::Tokenizer& tgt,
                             std::optional<std::int32_t> src_tag) {
  if (text.src.size() != text.tgt.size()) throw ConfigError("encode_corpus: unaligned corpus");
  ParallelCorpus out;
  out.src_lang = text.src_lang;
  out.tgt_lang = text.tgt_lang;
  out.src_vocab_hash = src.vocab().content_hash();
  out.tgt_vocab_hash = tgt.vocab().content_hash();
  out.pairs.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    SentencePair p;
    if (src_tag) p.src.push_back(*src_tag);
    auto s = src.encode(text.src[i]);
    p.src.insert(p.src.end(), s.begin(), s.end());
    p.tgt = tgt.encode(text.tgt[i]);
    if (s.empty() || p.tgt.empty()) continue;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

ParallelCorpus autoencoding_corpus(const std::vector<std::string>& lines, const text::Tokenizer& tok,
                                   const std::string& lang) {
  ParallelCorpus out;
  out.src_lang = lang;
  out.tgt_lang = lang;
  out.src_vocab_hash = out.tgt_vocab_hash = tok.vocab().content_hash();
  for (const auto& l : lines) {
    auto ids = tok.encode(l);
    if (ids.empty()) continue;
    out.pairs.push_back({ids, ids});
  }
  return out;
}

std::size_t oversample_factor(std::size_t real, std::size_t synthetic, double real_share, double synthetic_share) {
  if (real == 0 || real_share <= 0 || synthetic_share <= 0) {
    throw ConfigError("oversample_factor: need non-empty real data and positive shares");
  }
  const double w = static_cast<double>(synthetic) * real_share / (synthetic_share * static_cast<double>(real));
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(w)));
}

}  // namespace pivotmt::corpus
