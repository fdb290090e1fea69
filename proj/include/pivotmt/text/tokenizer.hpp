#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pivotmt/text/bpe.hpp"
#include "pivotmt/text/vocab.hpp"

namespace pivotmt::text {

// Segmentation plus id mapping for one side of a model.
class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(BpeModel bpe, Vocabulary vocab) : bpe_(std::move(bpe)), vocab_(std::move(vocab)) {}

  std::vector<std::int32_t> encode(std::string_view line) const {
    const auto pieces = bpe_.segment(line);
    return vocab_.encode(pieces);
  }

  std::string decode(std::span<const std::int32_t> ids) const {
    const auto pieces = vocab_.decode(ids);
    return detokenize(pieces);
  }

  const BpeModel& bpe() const noexcept { return bpe_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }

 private:
  BpeModel bpe_;
  Vocabulary vocab_;
};

}  // namespace pivotmt::text
