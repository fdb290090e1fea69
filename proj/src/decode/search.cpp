#include "pivotmt/decode/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pivotmt/error.hpp"
#include "pivotmt/text/vocab.hpp"

namespace pivotmt::decode {

using text::Vocabulary;
using tensor::Tensor;

void BeamConfig::validate() const {
  if (beam_size == 0) throw ConfigError("beam: beam_size must be >= 1");
  if (!(length_factor >= 0.0)) throw ConfigError("beam: length_factor must be >= 0");
  if (!(alpha >= 0.0)) throw ConfigError("beam: alpha must be >= 0");
  if (batch_sentences == 0) throw ConfigError("beam: batch_sentences must be >= 1");
}

std::size_t BeamConfig::max_length(std::size_t source_length) const {
  return static_cast<std::size_t>(std::floor(length_factor * static_cast<double>(source_length))) + length_constant;
}

void to_json(nlohmann::json& j, const BeamConfig& c) {
  j = nlohmann::json{{"beam_size", c.beam_size},
                     {"length_factor", c.length_factor},
                     {"length_constant", c.length_constant},
                     {"alpha", c.alpha},
                     {"batch_sentences", c.batch_sentences}};
}

void from_json(const nlohmann::json& j, BeamConfig& c) {
  BeamConfig d;
  c.beam_size = j.value("beam_size", d.beam_size);
  c.length_factor = j.value("length_factor", d.length_factor);
  c.length_constant = j.value("length_constant", d.length_constant);
  c.alpha = j.value("alpha", d.alpha);
  c.batch_sentences = j.value("batch_sentences", d.batch_sentences);
}

double normalized_score(double log_prob, std::size_t length, double alpha) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), alpha);
}

namespace {

struct Live {
  std::size_t sentence;
  std::vector<std::int32_t> tokens;
  double log_prob;
};

struct Candidate {
  double log_prob;
  std::size_t hyp;
  std::int32_t token;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.completed != b.completed) return a.completed;
  return a.score > b.score;
}

// Row-wise log-softmax of the last decoder position of every hypothesis.
std::vector<double> last_log_probs(const Tensor<float>& logits, std::size_t hyps, std::size_t len, std::size_t vocab) {
  std::vector<double> out(hyps * vocab);
  for (std::size_t h = 0; h < hyps; ++h) {
    const float* row = logits.storage().data() + ((h * len) + len - 1) * vocab;
    double mx = row[0];
    for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t v = 0; v < vocab; ++v) out[h * vocab + v] = static_cast<double>(row[v]) - lz;
  }
  return out;
}

// One batch of non-empty sources.
void search_batch(model::Transformer<float>& net, const Tensor<float>* adapter,
                  const std::vector<std::span<const std::int32_t>>& sources, std::size_t beam,
                  const BeamConfig& cfg, std::vector<Hypothesis>& results) {
  const std::size_t rows = sources.size();
  std::size_t src_len = 0;
  for (const auto& s : sources) src_len = std::max(src_len, s.size());
  std::vector<std::int32_t> src(rows * src_len, Vocabulary::kPadId);
  for (std::size_t r = 0; r < rows; ++r) std::copy(sources[r].begin(), sources[r].end(), src.begin() + r * src_len);
  const auto enc = net.encode(src, rows, src_len, adapter, {});
  const std::size_t d = net.config().model_dim;
  const std::size_t vocab = net.config().tgt_vocab_size;
  const auto& states = enc.states.value();

  std::vector<std::size_t> cap(rows);
  for (std::size_t r = 0; r < rows; ++r) cap[r] = cfg.max_length(sources[r].size());
  std::vector<std::vector<Hypothesis>> finished(rows);
  std::vector<Live> live;
  for (std::size_t r = 0; r < rows; ++r) live.push_back({r, {}, 0.0});

  for (std::size_t step = 1; !live.empty(); ++step) {
    const std::size_t hyps = live.size();
    model::Encoded<float> memory;
    memory.rows = hyps;
    memory.src_len = src_len;
    Tensor<float> gathered({hyps * src_len, d});
    memory.src_pad.resize(hyps * src_len);
    std::vector<std::int32_t> tgt_in(hyps * step, Vocabulary::kPadId);
    for (std::size_t h = 0; h < hyps; ++h) {
      const std::size_t r = live[h].sentence;
      std::copy_n(states.storage().data() + r * src_len * d, src_len * d, gathered.storage().data() + h * src_len * d);
      std::copy_n(enc.src_pad.data() + r * src_len, src_len, memory.src_pad.data() + h * src_len);
      tgt_in[h * step] = Vocabulary::kBosId;
      std::copy(live[h].tokens.begin(), live[h].tokens.end(), tgt_in.begin() + h * step + 1);
    }
    memory.states = tensor::Var<float>::constant(std::move(gathered));
    const auto logits = net.decode(memory, tgt_in, step, {});
    const auto lp = last_log_probs(logits.value(), hyps, step, vocab);

    std::vector<Live> next;
    std::size_t h = 0;
    while (h < hyps) {
      const std::size_t r = live[h].sentence;
      std::size_t end = h;
      while (end < hyps && live[end].sentence == r) ++end;
      std::vector<Candidate> cands;
      cands.reserve((end - h) * vocab);
      for (std::size_t k = h; k < end; ++k) {
        for (std::size_t v = 0; v < vocab; ++v) {
          if (v == static_cast<std::size_t>(Vocabulary::kPadId) || v == static_cast<std::size_t>(Vocabulary::kBosId)) continue;
          cands.push_back({live[k].log_prob + lp[k * vocab + v], k, static_cast<std::int32_t>(v)});
        }
      }
      const std::size_t keep = std::min(beam - std::min(beam - 1, finished[r].size()), cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                        [](const Candidate& a, const Candidate& b) {
                          if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                          if (a.hyp != b.hyp) return a.hyp < b.hyp;
                          return a.token < b.token;
                        });
      const bool at_cap = step > cap[r];
      for (std::size_t c = 0; c < keep; ++c) {
        const auto& cand = cands[c];
        if (cand.token == Vocabulary::kEosId) {
          const auto& toks = live[cand.hyp].tokens;
          finished[r].push_back({toks, cand.log_prob, normalized_score(cand.log_prob, toks.size() + 1, cfg.alpha), true});
        } else if (!at_cap) {
          auto toks = live[cand.hyp].tokens;
          toks.push_back(cand.token);
          next.push_back({r, std::move(toks), cand.log_prob});
        }
      }
      const bool done = finished[r].size() >= beam || at_cap;
      if (done) {
        // Drop this sentence's survivors.
        while (!next.empty() && next.back().sentence == r) next.pop_back();
        if (finished[r].empty()) {
          // Cap reached without </s>: best partial by normalized score.
          for (std::size_t k = h; k < end; ++k) {
            Hypothesis p{live[k].tokens, live[k].log_prob, normalized_score(live[k].log_prob, live[k].tokens.size(), cfg.alpha),
                         false};
            finished[r].push_back(std::move(p));
          }
        }
      }
      h = end;
    }
    live = std::move(next);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& f = finished[r];
    std::size_t best = 0;
    for (std::size_t i = 1; i < f.size(); ++i) {
      if (better(f[i], f[best])) best = i;
    }
    results[r] = f[best];
  }
}

std::vector<Hypothesis> search(training::Checkpoint& ckpt, std::span<const std::vector<std::int32_t>> sources,
                               std::size_t beam, const BeamConfig& cfg) {
  cfg.validate();
  tensor::NoGradGuard no_grad;
  model::Transformer<float> net(ckpt.config, ckpt.params);
  const Tensor<float>* adapter = ckpt.adapter ? &ckpt.adapter->m32 : nullptr;
  std::vector<Hypothesis> out(sources.size());
  // Length-sorted batches keep padding low; order is restored below.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i].empty()) {
      out[i].completed = true;
    } else {
      order.push_back(i);
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sources[a].size() < sources[b].size(); });
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_sentences) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_sentences);
    std::vector<std::span<const std::int32_t>> batch;
    for (std::size_t i = start; i < end; ++i) batch.emplace_back(sources[order[i]]);
    std::vector<Hypothesis> results(batch.size());
    search_batch(net, adapter, batch, beam, cfg, results);
    for (std::size_t i = start; i < end; ++i) out[order[i]] = std::move(results[i - start]);
  }
  return out;
}

}  // namespace

std::vector<Hypothesis> greedy_decode(training::Checkpoint& ckpt, std::span<const std::vector<std::int32_t>> sources,
                                      const BeamConfig& cfg) {
  return search(ckpt, sources, 1, cfg);
}

std::vector<Hypothesis> beam_search(training::Checkpoint& ckpt, std::span<const std::vector<std::int32_t>> sources,
                                    const BeamConfig& cfg) {
  auto out = search(ckpt, sources, cfg.beam_size, cfg);
  if (cfg.beam_size > 1) {
    const auto greedy = search(ckpt, sources, 1, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (better(greedy[i], out[i])) out[i] = greedy[i];
    }
  }
  return out;
}

Hypothesis beam_search(training::Checkpoint& ckpt, std::span<const std::int32_t> source, const BeamConfig& cfg) {
  const std::vector<std::vector<std::int32_t>> one{{source.begin(), source.end()}};
  return beam_search(ckpt, one, cfg).front();
}

double score_output(training::Checkpoint& ckpt, std::span<const std::int32_t> source,
                    std::span<const std::int32_t> output, double alpha) {
  if (source.empty()) throw ConfigError("score_output: empty source");
  tensor::NoGradGuard no_grad;
  model::Transformer<float> net(ckpt.config, ckpt.params);
  const Tensor<float>* adapter = ckpt.adapter ? &ckpt.adapter->m32 : nullptr;
  const auto enc = net.encode(source, 1, source.size(), adapter, {});
  const std::size_t len = output.size() + 1;
  std::vector<std::int32_t> tgt_in{Vocabulary::kBosId};
  tgt_in.insert(tgt_in.end(), output.begin(), output.end());
  const auto logits = net.decode(enc, tgt_in, len, {});
  const std::size_t vocab = ckpt.config.tgt_vocab_size;
  double total = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    const float* row = logits.value().storage().data() + t * vocab;
    double mx = row[0];
    for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
    const std::int32_t want = t < output.size() ? output[t] : Vocabulary::kEosId;
    total += static_cast<double>(row[want]) - mx - std::log(z);
  }
  return normalized_score(total, len, alpha);
}

}  // namespace pivotmt::decode
