#include "pivotmt/decode/bleu.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "pivotmt/error.hpp"
#include "pivotmt/text/bpe.hpp"

namespace pivotmt::decode {

namespace {

using Counts = std::map<std::vector<std::string>, std::size_t>;

Counts ngrams(const std::vector<std::string>& words, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++c[{words.begin() + static_cast<long>(i), words.begin() + static_cast<long>(i + n)}];
  return c;
}

struct Stats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp = 0;
  std::size_t ref = 0;
};

void accumulate(Stats& s, const std::string& hyp_line, const std::string& ref_line) {
  const auto hyp = text::split_words(hyp_line);
  const auto ref = text::split_words(ref_line);
  s.hyp += hyp.size();
  s.ref += ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = ngrams(hyp, n);
    const auto r = ngrams(ref, n);
    for (const auto& [gram, count] : h) {
      const auto it = r.find(gram);
      if (it != r.end()) s.matches[n - 1] += std::min(count, it->second);
    }
    s.totals[n - 1] += hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
}

double brevity(std::size_t hyp, std::size_t ref) {
  if (hyp == 0) return 0.0;
  if (hyp >= ref) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref) / static_cast<double>(hyp));
}

}  // namespace

std::string BleuReport::str() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "score=%.2f p1=%.4f p2=%.4f p3=%.4f p4=%.4f bp=%.4f hyp_len=%zu ref_len=%zu", score,
                precisions[0], precisions[1], precisions[2], precisions[3], brevity_penalty, hyp_length, ref_length);
  return buf;
}

BleuReport bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size()) {
    throw ConfigError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                      std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw ConfigError("bleu: empty corpus");
  Stats s;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) accumulate(s, hypotheses[i], references[i]);
  BleuReport r;
  r.matches = s.matches;
  r.totals = s.totals;
  r.hyp_length = s.hyp;
  r.ref_length = s.ref;
  r.brevity_penalty = brevity(s.hyp, s.ref);
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = s.totals[n] ? static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]) : 0.0;
    if (r.precisions[n] == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

double sentence_bleu_smoothed(const std::string& hypothesis, const std::string& reference) {
  Stats s;
  accumulate(s, hypothesis, reference);
  if (s.hyp == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double add = n == 0 ? 0.0 : 1.0;
    const double num = static_cast<double>(s.matches[n]) + add;
    const double den = static_cast<double>(s.totals[n]) + add;
    if (num == 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  return 100.0 * brevity(s.hyp, s.ref) * std::exp(log_sum / 4.0);
}

void to_json(nlohmann::json& j, const BleuReport& r) {
  j = nlohmann::json{{"score", r.score},           {"precisions", r.precisions},
                     {"matches", r.matches},       {"totals", r.totals},
                     {"brevity_penalty", r.brevity_penalty}, {"hyp_length", r.hyp_length},
                     {"ref_length", r.ref_length}};
}

void from_json(const nlohmann::json& j, BleuReport& r) {
  r.score = j.at("score").get<double>();
  r.precisions = j.at("precisions").get<std::array<double, 4>>();
  r.matches = j.at("matches").get<std::array<std::size_t, 4>>();
  r.totals = j.at("totals").get<std::array<std::size_t, 4>>();
  r.brevity_penalty = j.at("brevity_penalty").get<double>();
  r.hyp_length = j.at("hyp_length").get<std::size_t>();
  r.ref_length = j.at("ref_length").get<std::size_t>();
}

}  // namespace pivotmt::decode
