#include "pivotmt/corpus/toy_world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pivotmt/error.hpp"
#include "pivotmt/hash.hpp"
#include "pivotmt/rng.hpp"
#include "pivotmt/text/bpe.hpp"

namespace pivotmt::corpus {

namespace {

std::vector<std::size_t> apply_order(std::vector<std::size_t> concepts, Reorder rule) {
  if (rule == Reorder::swap_adjacent) {
    for (std::size_t i = 0; i + 1 < concepts.size(); i += 2) std::swap(concepts[i], concepts[i + 1]);
  }
  return concepts;
}

Rng stream(std::uint64_t seed, std::string_view name) {
  Fnv1a h;
  h.update(name);
  return Rng(seed * 0x9E3779B97F4A7C15ULL ^ h.digest());
}

std::string reorder_name(Reorder r) { return r == Reorder::identity ? "identity" : "swap_adjacent"; }

Reorder reorder_from(const std::string& s) {
  if (s == "identity") return Reorder::identity;
  if (s == "swap_adjacent") return Reorder::swap_adjacent;
  throw ConfigError("toy world: unknown reorder rule '" + s + "'");
}

}  // namespace

void ToyWorldSpec::validate() const {
  if (base_vocab_size == 0) throw ConfigError("toy world: base_vocab_size must be positive");
  if (min_length == 0 || max_length < min_length) {
    throw ConfigError("toy world: sentence length range [" + std::to_string(min_length) + "," +
                      std::to_string(max_length) + "] is empty");
  }
  if (cognate_fraction < 0.0 || cognate_fraction > 1.0) throw ConfigError("toy world: cognate_fraction outside [0,1]");
  if (zipf_exponent < 0.0) throw ConfigError("toy world: zipf_exponent must be >= 0");
  const std::vector<std::string> langs{src_lang, piv_lang, tgt_lang};
  for (std::size_t i = 0; i < langs.size(); ++i) {
    if (langs[i].empty()) throw ConfigError("toy world: empty language id");
    for (std::size_t j = i + 1; j < langs.size(); ++j) {
      if (langs[i] == langs[j]) throw ConfigError("toy world: duplicate language id '" + langs[i] + "'");
      if (langs[i][0] == langs[j][0]) throw ConfigError("toy world: language ids need distinct first letters");
    }
    if (langs[i][0] == 'c') throw ConfigError("toy world: language ids may not start with 'c' (cognate prefix)");
  }
}

void to_json(nlohmann::json& j, const ToyWorldSpec& s) {
  j = nlohmann::json{{"base_vocab_size", s.base_vocab_size},
                     {"languages", {s.src_lang, s.piv_lang, s.tgt_lang}},
                     {"min_length", s.min_length},
                     {"max_length", s.max_length},
                     {"pivot_order", reorder_name(s.pivot_order)},
                     {"target_order", reorder_name(s.target_order)},
                     {"cognate_fraction", s.cognate_fraction},
                     {"zipf_exponent", s.zipf_exponent},
                     {"src_piv_pairs", s.src_piv_pairs},
                     {"piv_tgt_pairs", s.piv_tgt_pairs},
                     {"src_tgt_pairs", s.src_tgt_pairs},
                     {"mono_piv_lines", s.mono_piv_lines},
                     {"dev_pairs", s.dev_pairs},
                     {"test_pairs", s.test_pairs},
                     {"adapter_pairs", s.adapter_pairs},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, ToyWorldSpec& s) {
  ToyWorldSpec d;
  s.base_vocab_size = j.value("base_vocab_size", d.base_vocab_size);
  if (j.contains("languages")) {
    const auto langs = j.at("languages").get<std::vector<std::string>>();
    if (langs.size() != 3) throw ConfigError("toy world: 'languages' needs exactly three ids");
    s.src_lang = langs[0];
    s.piv_lang = langs[1];
    s.tgt_lang = langs[2];
  }
  s.min_length = j.value("min_length", d.min_length);
  s.max_length = j.value("max_length", d.max_length);
  s.pivot_order = reorder_from(j.value("pivot_order", reorder_name(d.pivot_order)));
  s.target_order = reorder_from(j.value("target_order", reorder_name(d.target_order)));
  s.cognate_fraction = j.value("cognate_fraction", d.cognate_fraction);
  s.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
  s.src_piv_pairs = j.value("src_piv_pairs", d.src_piv_pairs);
  s.piv_tgt_pairs = j.value("piv_tgt_pairs", d.piv_tgt_pairs);
  s.src_tgt_pairs = j.value("src_tgt_pairs", d.src_tgt_pairs);
  s.mono_piv_lines = j.value("mono_piv_lines", d.mono_piv_lines);
  s.dev_pairs = j.value("dev_pairs", d.dev_pairs);
  s.test_pairs = j.value("test_pairs", d.test_pairs);
  s.adapter_pairs = j.value("adapter_pairs", d.adapter_pairs);
  s.seed = j.value("seed", d.seed);
}

ToyWorld::ToyWorld(ToyWorldSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t v = spec_.base_vocab_size;
  std::vector<std::size_t> ranking(v);
  std::iota(ranking.begin(), ranking.end(), 0);
  auto rng = stream(spec_.seed, "zipf-ranking");
  rng.shuffle(ranking);
  std::vector<double> weight(v);
  for (std::size_t r = 0; r < v; ++r) {
    weight[ranking[r]] = 1.0 / std::pow(static_cast<double>(r + 1), spec_.zipf_exponent);
  }
  cumulative_.resize(v);
  double acc = 0.0;
  for (std::size_t k = 0; k < v; ++k) {
    acc += weight[k];
    cumulative_[k] = acc;
  }
  for (auto& c : cumulative_) c /= acc;
}

bool ToyWorld::is_cognate(std::size_t concept_id) const {
  const auto n = static_cast<std::size_t>(
      std::llround(static_cast<double>(spec_.base_vocab_size) * spec_.cognate_fraction));
  return concept_id + n >= spec_.base_vocab_size;
}

Reorder ToyWorld::order_of(const std::string& lang) const {
  if (lang == spec_.src_lang) return Reorder::identity;
  if (lang == spec_.piv_lang) return spec_.pivot_order;
  if (lang == spec_.tgt_lang) return spec_.target_order;
  throw ConfigError("toy world: unknown language '" + lang + "'");
}

char ToyWorld::prefix_of(const std::string& lang) const {
  order_of(lang);
  return lang[0];
}

std::string ToyWorld::word(std::size_t concept_id, const std::string& lang) const {
  const char prefix = prefix_of(lang);
  if (lang != spec_.tgt_lang && is_cognate(concept_id)) return "c" + std::to_string(concept_id);
  return std::string(1, prefix) + std::to_string(concept_id);
}

std::string ToyWorld::render(const std::vector<std::size_t>& concepts, const std::string& lang) const {
  const auto ordered = apply_order(concepts, order_of(lang));
  std::string out;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (i) out += ' ';
    out += word(ordered[i], lang);
  }
  return out;
}

std::string ToyWorld::translate(const std::string& line, const std::string& from, const std::string& to) const {
  const char prefix = prefix_of(from);
  std::vector<std::size_t> concepts;
  for (const auto& w : text::split_words(line)) {
    std::size_t k = 0;
    bool ok = w.size() >= 2 && (w[0] == prefix || (w[0] == 'c' && from != spec_.tgt_lang));
    if (ok) {
      try {
        std::size_t used = 0;
        k = std::stoul(w.substr(1), &used);
        ok = used == w.size() - 1 && k < spec_.base_vocab_size && (w[0] == 'c') == (from != spec_.tgt_lang && is_cognate(k));
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) throw ConfigError("toy world: '" + w + "' is not a word of language '" + from + "'");
    concepts.push_back(k);
  }
  // Reorder rules are involutions, so applying the source rule again
  // recovers concept order.
  return render(apply_order(concepts, order_of(from)), to);
}

std::vector<std::size_t> ToyWorld::sample_concepts(Rng& rng) const {
  const std::size_t len = spec_.min_length + rng.below(spec_.max_length - spec_.min_length + 1);
  std::vector<std::size_t> out(len);
  for (auto& k : out) {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    k = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }
  return out;
}

ToyCorpora ToyWorld::generate() const {
  auto pair_corpus = [&](std::string_view name, std::size_t n, const std::string& a, const std::string& b) {
    auto rng = stream(spec_.seed, name);
    TextCorpus c;
    c.src_lang = a;
    c.tgt_lang = b;
    c.src.reserve(n);
    c.tgt.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto concepts = sample_concepts(rng);
      c.src.push_back(render(concepts, a));
      c.tgt.push_back(render(concepts, b));
    }
    return c;
  };
  const auto& s = spec_.src_lang;
  const auto& p = spec_.piv_lang;
  const auto& t = spec_.tgt_lang;
  ToyCorpora out;
  out.src_piv = pair_corpus("src-piv", spec_.src_piv_pairs, s, p);
  out.piv_tgt = pair_corpus("piv-tgt", spec_.piv_tgt_pairs, p, t);
  out.src_tgt = pair_corpus("src-tgt", spec_.src_tgt_pairs, s, t);
  out.mono_piv = pair_corpus("mono-piv", spec_.mono_piv_lines, p, p).src;
  out.src_piv_dev = pair_corpus("src-piv-dev", spec_.dev_pairs, s, p);
  out.piv_tgt_dev = pair_corpus("piv-tgt-dev", spec_.dev_pairs, p, t);
  out.src_tgt_dev = pair_corpus("src-tgt-dev", spec_.dev_pairs, s, t);
  out.src_tgt_test = pair_corpus("src-tgt-test", spec_.test_pairs, s, t);
  out.src_piv_adapter = pair_corpus("src-piv-adapter", spec_.adapter_pairs, s, p);
  out.test_pivot.reserve(out.src_tgt_test.size());
  for (const auto& line : out.src_tgt_test.src) out.test_pivot.push_back(translate(line, s, p));
  return out;
}

}  // namespace pivotmt::corpus
