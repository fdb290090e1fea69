// Command-line driver. Every subcommand writes its outputs under --run-dir
// (relative output paths are resolved against it) and records them in the
// run manifest.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pivotmt/adapter/adapter.hpp"
#include "pivotmt/cli/experiment.hpp"
#include "pivotmt/cli/manifest.hpp"
#include "pivotmt/corpus/parallel.hpp"
#include "pivotmt/decode/bleu.hpp"
#include "pivotmt/decode/pivot.hpp"
#include "pivotmt/decode/search.hpp"
#include "pivotmt/error.hpp"
#include "pivotmt/text/bpe.hpp"
#include "pivotmt/text/vocab.hpp"
#include "pivotmt/training/checkpoint.hpp"
#include "pivotmt/training/transfer.hpp"

namespace fs = std::filesystem;
using namespace pivotmt;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const std::string& p) {
  if (!p.empty() && !fs::is_regular_file(p)) throw IoError("missing input file " + p);
}

void require_corpus(const std::string& prefix, const std::string& a, const std::string& b) {
  require_file(prefix + "." + a);
  require_file(prefix + "." + b);
}

// Options shared by every subcommand that trains or decodes.
struct Common {
  std::string run_dir = ".";
  std::string config;
  std::string world;
  std::uint64_t seed = 1;
  std::optional<std::size_t> max_updates;
  std::optional<double> lr;
  std::optional<std::size_t> max_tokens;
  std::optional<std::size_t> beam;
  std::optional<std::size_t> model_dim;
  std::optional<std::size_t> layers;
  std::optional<double> dropout;

  void add(CLI::App* app, bool training_flags = true) {
    app->add_option("--run-dir", run_dir, "Run directory holding outputs and manifest.json")->capture_default_str();
    app->add_option("--config", config, "Experiment config file (JSON, one section per module)");
    app->add_option("--world", world, "Toy-world config (bare world spec or full experiment config)");
    app->add_option("--seed", seed, "Seed")->capture_default_str();
    app->add_option("--beam", beam, "Beam size");
    if (!training_flags) return;
    app->add_option("--max-updates", max_updates, "Update cap (0 = schedule only)");
    app->add_option("--lr", lr, "Initial learning rate");
    app->add_option("--max-tokens", max_tokens, "Target tokens per batch");
    app->add_option("--model-dim", model_dim, "Model width");
    app->add_option("--layers", layers, "Encoder and decoder layers");
    app->add_option("--dropout", dropout, "Dropout rate");
  }

  // Config file, then world file, then flags; flags win.
  cli::ExperimentConfig experiment() const {
    require_file(config);
    require_file(world);
    auto c = config.empty() ? cli::ExperimentConfig::desk() : cli::parse_experiment_config(read_file(config));
    if (!world.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_file(world), nullptr, true, true);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("world: ") + e.what());
      }
      if (j.contains("corpus") || j.contains("model") || j.contains("training")) {
        c = cli::parse_experiment_config(j.dump());
      } else {
        c.world = j.get<corpus::ToyWorldSpec>();
      }
    }
    for (auto* b : {&c.pretrain, &c.finetune, &c.multilingual}) {
      if (max_updates) b->max_updates = *max_updates;
      if (lr) b->schedule.initial_lr = b->schedule.lr = *lr;
      if (max_tokens) b->max_tokens = *max_tokens;
    }
    if (beam) c.beam.beam_size = *beam;
    if (model_dim) c.model.model_dim = *model_dim;
    if (layers) c.model.layers = *layers;
    if (dropout) c.model.dropout = *dropout;
    c.world.seed = seed;
    c.validate();
    return c;
  }

  cli::Manifest manifest() const {
    fs::create_directories(run_dir);
    return cli::Manifest(run_dir);
  }

  // Absolute location of an output and its manifest key.
  std::pair<fs::path, std::string> output(const std::string& out) const {
    const fs::path dir = fs::absolute(run_dir);
    fs::path full = fs::path(out).is_absolute() ? fs::path(out) : dir / out;
    full = full.lexically_normal();
    const auto rel = full.lexically_relative(dir);
    if (rel.empty() || *rel.begin() == "..") throw UsageError("output " + out + " lies outside the run directory");
    fs::create_directories(full.parent_path());
    return {full, rel.generic_string()};
  }
};

struct TokPaths {
  std::string bpe;
  std::string vocab;
  void add(CLI::App* app, const std::string& side, bool required = true) {
    const std::string p = side.empty() ? "--" : "--" + side + "-";
    auto* a = app->add_option(p + "bpe", bpe, "BPE merges file" + (side.empty() ? "" : " (" + side + ")"));
    auto* b = app->add_option(p + "vocab", vocab, "Vocabulary file" + (side.empty() ? "" : " (" + side + ")"));
    if (required) {
      a->required();
      b->required();
    }
  }
  void check() const {
    require_file(bpe);
    require_file(vocab);
  }
  text::Tokenizer load() const { return text::Tokenizer(text::BpeModel::load(bpe), text::Vocabulary::load(vocab)); }
};

struct CorpusArgs {
  std::string prefix;
  std::string src_lang = "src";
  std::string tgt_lang = "tgt";
};

training::TrainOptions train_options(const cli::Budget& b, std::uint64_t seed, const std::string& stage) {
  training::TrainOptions o;
  o.schedule = b.schedule;
  o.max_updates = b.max_updates;
  o.max_tokens = b.max_tokens;
  o.label_smoothing = b.label_smoothing;
  o.seed = seed;
  o.stage = stage;
  o.log = &std::cerr;
  return o;
}

void save_ckpt(const Common& c, const training::Checkpoint& ck, const std::string& out, const std::string& stage) {
  auto m = c.manifest();
  const auto [full, rel] = c.output(out);
  training::save_checkpoint(ck, full);
  m.record(rel, "checkpoint", stage);
  m.save();
  std::cout << "wrote " << full.string() << " hash=" << training::checkpoint_hash(ck) << "\n";
}

void write_text_outputs(const Common& c, const corpus::TextCorpus& t, const std::string& out, const std::string& stage) {
  auto m = c.manifest();
  const auto [full, rel] = c.output(out);
  corpus::write_text_corpus(t, full);
  m.record(rel + "." + t.src_lang, "corpus", stage);
  m.record(rel + "." + t.tgt_lang, "corpus", stage);
  m.save();
  std::cout << "wrote " << full.string() << "." << t.src_lang << " and ." << t.tgt_lang << " (" << t.size()
            << " pairs)\n";
}

corpus::TextCorpus decode_corpus(const corpus::ParallelCorpus& c, const text::Tokenizer& src,
                                 const text::Tokenizer& tgt, const std::string& src_lang,
                                 const std::string& tgt_lang) {
  corpus::TextCorpus t;
  t.src_lang = src_lang;
  t.tgt_lang = tgt_lang;
  for (const auto& p : c.pairs) {
    t.src.push_back(src.decode(p.src));
    t.tgt.push_back(tgt.decode(p.tgt));
  }
  return t;
}

std::vector<std::vector<std::int32_t>> encode_lines(const std::vector<std::string>& lines, const text::Tokenizer& tok,
                                                    const std::string& tag) {
  std::optional<std::int32_t> tag_id;
  if (!tag.empty()) {
    tag_id = tok.vocab().tag_id(tag);
    if (!tag_id) throw VocabError("vocabulary has no tag for language '" + tag + "'");
  }
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    std::vector<std::int32_t> ids;
    if (tag_id) ids.push_back(*tag_id);
    const auto body = tok.encode(l);
    ids.insert(ids.end(), body.begin(), body.end());
    out.push_back(std::move(ids));
  }
  return out;
}

void write_hyps(const Common& c, const std::vector<decode::Hypothesis>& hyps, const text::Tokenizer& tok,
                const std::string& out, const std::string& stage) {
  std::vector<std::string> lines;
  lines.reserve(hyps.size());
  std::size_t incomplete = 0;
  for (const auto& h : hyps) {
    lines.push_back(tok.decode(h.tokens));
    incomplete += h.completed ? 0 : 1;
  }
  auto m = c.manifest();
  const auto [full, rel] = c.output(out);
  corpus::write_lines(lines, full);
  m.record(rel, "hypotheses", stage);
  m.save();
  std::cout << "wrote " << full.string() << " (" << lines.size() << " lines, " << incomplete << " hit the length cap)\n";
}

std::vector<model::Group> parse_groups(const std::vector<std::string>& names) {
  std::vector<model::Group> g;
  for (const auto& n : names) g.push_back(model::group_from_string(n));
  return g;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--seeds: '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw UsageError("--seeds: empty list");
  return out;
}

int exit_code(ErrorClass c) {
  switch (c) {
    case ErrorClass::usage: return 2;
    case ErrorClass::io: return 3;
    case ErrorClass::config: return 4;
    case ErrorClass::vocab: return 5;
    case ErrorClass::shape: return 6;
    case ErrorClass::numeric: return 7;
    case ErrorClass::state: return 8;
  }
  return 1;
}

int fail(std::string_view cls, const std::string& what, int code) {
  std::string line = what;
  for (auto& ch : line) {
    if (ch == '\n') ch = ' ';
  }
  std::cerr << "error: class=" << cls << " " << line << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pivot-based transfer learning for neural machine translation on a toy world"};
  app.require_subcommand(1);
  std::function<void()> action;

  // gen-toy -------------------------------------------------------------
  Common gen;
  auto* gen_cmd = app.add_subcommand("gen-toy", "Generate the toy-world corpora into <run-dir>/data");
  gen.add(gen_cmd, false);
  gen_cmd->callback([&] {
    action = [&] {
      cli::Lab lab(gen.experiment(), gen.seed, gen.run_dir);
      const auto& w = lab.world();
      std::cout << "src-piv=" << w.src_piv.size() << " piv-tgt=" << w.piv_tgt.size() << " src-tgt=" << w.src_tgt.size()
                << " mono=" << w.mono_piv.size() << " test=" << w.src_tgt_test.size() << "\n";
    };
  });

  // learn-bpe -----------------------------------------------------------
  Common lb;
  std::vector<std::string> lb_inputs;
  std::vector<std::string> lb_langs;
  std::size_t lb_merges = 300;
  std::string lb_out;
  auto* lb_cmd = app.add_subcommand("learn-bpe", "Learn BPE merges from text files");
  lb_cmd->add_option("--input", lb_inputs, "Training text files")->required();
  lb_cmd->add_option("--merges", lb_merges, "Merge count")->capture_default_str();
  lb_cmd->add_option("--langs", lb_langs, "Languages covered (recorded in the model)")->delimiter(',');
  lb_cmd->add_option("--out", lb_out, "Output merges file")->required();
  lb_cmd->add_option("--run-dir", lb.run_dir, "Run directory")->capture_default_str();
  lb_cmd->callback([&] {
    action = [&] {
      for (const auto& f : lb_inputs) require_file(f);
      std::vector<std::string> lines;
      for (const auto& f : lb_inputs) {
        auto l = corpus::read_lines(f);
        lines.insert(lines.end(), l.begin(), l.end());
      }
      const auto model = text::learn_bpe(lines, lb_merges, lb_langs);
      auto m = lb.manifest();
      const auto [full, rel] = lb.output(lb_out);
      model.save(full);
      m.record(rel, "bpe", "learn-bpe");
      m.save();
      std::cout << "wrote " << full.string() << " (" << model.merge_count() << " merges)\n";
    };
  });

  // apply-bpe -----------------------------------------------------------
  Common ab;
  std::string ab_model, ab_input, ab_out;
  auto* ab_cmd = app.add_subcommand("apply-bpe", "Segment a text file with learned merges");
  ab_cmd->add_option("--model", ab_model, "BPE merges file")->required();
  ab_cmd->add_option("--input", ab_input, "Text file")->required();
  ab_cmd->add_option("--out", ab_out, "Segmented output file")->required();
  ab_cmd->add_option("--run-dir", ab.run_dir, "Run directory")->capture_default_str();
  ab_cmd->callback([&] {
    action = [&] {
      require_file(ab_model);
      require_file(ab_input);
      const auto model = text::BpeModel::load(ab_model);
      std::vector<std::string> out;
      for (const auto& line : corpus::read_lines(ab_input)) {
        std::string joined;
        for (const auto& piece : model.segment(line)) joined += (joined.empty() ? "" : " ") + piece;
        out.push_back(std::move(joined));
      }
      auto m = ab.manifest();
      const auto [full, rel] = ab.output(ab_out);
      corpus::write_lines(out, full);
      m.record(rel, "segmented", "apply-bpe");
      m.save();
      std::cout << "wrote " << full.string() << " (" << out.size() << " lines)\n";
    };
  });

  // build-vocab ---------------------------------------------------------
  Common bv;
  std::vector<std::string> bv_inputs, bv_tags;
  bool bv_blank = false;
  std::string bv_out;
  auto* bv_cmd = app.add_subcommand("build-vocab", "Build a vocabulary from segmented text files");
  bv_cmd->add_option("--input", bv_inputs, "Segmented text files (space-separated pieces)")->required();
  bv_cmd->add_flag("--blank", bv_blank, "Reserve a <BLANK> token for noisy autoencoding");
  bv_cmd->add_option("--tags", bv_tags, "Target-language tags to reserve")->delimiter(',');
  bv_cmd->add_option("--out", bv_out, "Output vocabulary file")->required();
  bv_cmd->add_option("--run-dir", bv.run_dir, "Run directory")->capture_default_str();
  bv_cmd->callback([&] {
    action = [&] {
      for (const auto& f : bv_inputs) require_file(f);
      std::vector<std::vector<std::string>> seg;
      for (const auto& f : bv_inputs) {
        for (const auto& line : corpus::read_lines(f)) seg.push_back(text::split_words(line));
      }
      text::SpecialTokens sp;
      sp.blank = bv_blank;
      sp.tag_languages = bv_tags;
      const auto vocab = text::Vocabulary::build(seg, sp);
      auto m = bv.manifest();
      const auto [full, rel] = bv.output(bv_out);
      vocab.save(full);
      m.record(rel, "vocab", "build-vocab");
      m.save();
      std::cout << "wrote " << full.string() << " (" << vocab.size() << " tokens, hash=" << vocab.content_hash()
                << ")\n";
    };
  });

  // train ---------------------------------------------------------------
  Common tr;
  CorpusArgs tr_train, tr_dev;
  TokPaths tr_src, tr_tgt;
  std::string tr_out, tr_init;
  std::vector<std::string> tr_freeze;
  bool tr_finetune_budget = false;
  auto* tr_cmd = app.add_subcommand("train", "Train a model from scratch (or continue from --init)");
  tr.add(tr_cmd);
  tr_cmd->add_option("--train", tr_train.prefix, "Training corpus prefix (<prefix>.<lang>)")->required();
  tr_cmd->add_option("--dev", tr_dev.prefix, "Validation corpus prefix")->required();
  tr_cmd->add_option("--src-lang", tr_train.src_lang, "Source language")->capture_default_str();
  tr_cmd->add_option("--tgt-lang", tr_train.tgt_lang, "Target language")->capture_default_str();
  tr_src.add(tr_cmd, "src");
  tr_tgt.add(tr_cmd, "tgt");
  tr_cmd->add_option("--init", tr_init, "Start from this checkpoint instead of a fresh initialization");
  tr_cmd->add_option("--freeze", tr_freeze, "Parameter groups to keep fixed")->delimiter(',');
  tr_cmd->add_flag("--finetune-budget", tr_finetune_budget, "Use the fine-tuning schedule and budget");
  tr_cmd->add_option("--out", tr_out, "Output checkpoint")->required();
  tr_cmd->callback([&] {
    action = [&] {
      const auto& sl = tr_train.src_lang;
      const auto& tl = tr_train.tgt_lang;
      require_corpus(tr_train.prefix, sl, tl);
      require_corpus(tr_dev.prefix, sl, tl);
      tr_src.check();
      tr_tgt.check();
      require_file(tr_init);
      const auto cfg = tr.experiment();
      const auto frozen = parse_groups(tr_freeze);
      const auto src = tr_src.load();
      const auto tgt = tr_tgt.load();
      const auto data = corpus::encode_corpus(corpus::read_text_corpus(tr_train.prefix, sl, tl), src, tgt);
      const auto dev = corpus::encode_corpus(corpus::read_text_corpus(tr_dev.prefix, sl, tl), src, tgt);
      auto opt = train_options(tr_finetune_budget ? cfg.finetune : cfg.pretrain, tr.seed, "train");
      opt.frozen = frozen;
      auto model_cfg = cfg.model;
      model_cfg.src_vocab_size = src.vocab().size();
      model_cfg.tgt_vocab_size = tgt.vocab().size();
      auto start = tr_init.empty()
                       ? training::Checkpoint::initialize(model_cfg, tr.seed, src.vocab().content_hash(),
                                                          tgt.vocab().content_hash())
                       : training::load_checkpoint(tr_init);
      const auto res = training::train(std::move(start), training::TrainingData::fixed(data), dev, opt);
      const double best = res.val_ppl.empty() ? 0.0 : *std::min_element(res.val_ppl.begin(), res.val_ppl.end());
      std::printf("updates=%zu best_val_ppl=%.4f stopped_by_schedule=%d diverged=%d\n", res.updates, best,
                  res.stopped_by_schedule ? 1 : 0, res.diverged ? 1 : 0);
      save_ckpt(tr, res.checkpoint, tr_out, "train");
    };
  });

  // transfer-init -------------------------------------------------------
  Common ti;
  std::string ti_a, ti_b, ti_out;
  auto* ti_cmd = app.add_subcommand("transfer-init", "Assemble source->target init from src->piv and piv->tgt parents");
  ti_cmd->add_option("--src-piv", ti_a, "Source->pivot checkpoint")->required();
  ti_cmd->add_option("--piv-tgt", ti_b, "Pivot->target checkpoint")->required();
  ti_cmd->add_option("--out", ti_out, "Output checkpoint")->required();
  ti_cmd->add_option("--run-dir", ti.run_dir, "Run directory")->capture_default_str();
  ti_cmd->callback([&] {
    action = [&] {
      require_file(ti_a);
      require_file(ti_b);
      const auto c = training::plain_transfer_init(training::load_checkpoint(ti_a), training::load_checkpoint(ti_b));
      save_ckpt(ti, c, ti_out, "transfer-init");
    };
  });

  // stepwise ------------------------------------------------------------
  Common sw;
  CorpusArgs sw_train{"", "piv", "tgt"}, sw_dev;
  TokPaths sw_src, sw_tgt;
  std::string sw_stage1, sw_out;
  auto* sw_cmd = app.add_subcommand("stepwise", "Stage 2 of step-wise pre-training on pivot->target data");
  sw.add(sw_cmd);
  sw_cmd->add_option("--stage1", sw_stage1, "Source->pivot checkpoint (stage 1)")->required();
  sw_cmd->add_option("--train", sw_train.prefix, "Pivot->target corpus prefix")->required();
  sw_cmd->add_option("--dev", sw_dev.prefix, "Validation corpus prefix")->required();
  sw_cmd->add_option("--src-lang", sw_train.src_lang, "Pivot language")->capture_default_str();
  sw_cmd->add_option("--tgt-lang", sw_train.tgt_lang, "Target language")->capture_default_str();
  sw_src.add(sw_cmd, "src");
  sw_tgt.add(sw_cmd, "tgt");
  sw_cmd->add_option("--out", sw_out, "Output checkpoint")->required();
  sw_cmd->callback([&] {
    action = [&] {
      const auto& sl = sw_train.src_lang;
      const auto& tl = sw_train.tgt_lang;
      require_file(sw_stage1);
      require_corpus(sw_train.prefix, sl, tl);
      require_corpus(sw_dev.prefix, sl, tl);
      sw_src.check();
      sw_tgt.check();
      const auto cfg = sw.experiment();
      const auto src = sw_src.load();
      const auto tgt = sw_tgt.load();
      const auto data = corpus::encode_corpus(corpus::read_text_corpus(sw_train.prefix, sl, tl), src, tgt);
      const auto dev = corpus::encode_corpus(corpus::read_text_corpus(sw_dev.prefix, sl, tl), src, tgt);
      const auto res = training::stepwise_stage2(training::load_checkpoint(sw_stage1), data, dev, tgt.vocab().size(),
                                                 sw.seed, train_options(cfg.pretrain, sw.seed, ""));
      save_ckpt(sw, res.checkpoint, sw_out, "stepwise");
    };
  });

  // xenc-pretrain -------------------------------------------------------
  Common xe;
  CorpusArgs xe_train{"", "src", "piv"}, xe_dev;
  TokPaths xe_tok;
  std::string xe_mono, xe_out;
  bool xe_clean = false;
  auto* xe_cmd = app.add_subcommand("xenc-pretrain", "Source->pivot training plus pivot autoencoding");
  xe.add(xe_cmd);
  xe_cmd->add_option("--train", xe_train.prefix, "Source->pivot corpus prefix")->required();
  xe_cmd->add_option("--dev", xe_dev.prefix, "Validation corpus prefix")->required();
  xe_cmd->add_option("--src-lang", xe_train.src_lang, "Source language")->capture_default_str();
  xe_cmd->add_option("--piv-lang", xe_train.tgt_lang, "Pivot language")->capture_default_str();
  xe_cmd->add_option("--mono", xe_mono, "Pivot lines to autoencode (default: pivot side of --train)");
  xe_cmd->add_flag("--clean", xe_clean, "Autoencode without input noise");
  xe_tok.add(xe_cmd, "");
  xe_cmd->add_option("--out", xe_out, "Output checkpoint")->required();
  xe_cmd->callback([&] {
    action = [&] {
      const auto& sl = xe_train.src_lang;
      const auto& pl = xe_train.tgt_lang;
      require_corpus(xe_train.prefix, sl, pl);
      require_corpus(xe_dev.prefix, sl, pl);
      require_file(xe_mono);
      xe_tok.check();
      const auto cfg = xe.experiment();
      const auto tok = xe_tok.load();
      const auto text = corpus::read_text_corpus(xe_train.prefix, sl, pl);
      const auto data = corpus::encode_corpus(text, tok, tok);
      const auto dev = corpus::encode_corpus(corpus::read_text_corpus(xe_dev.prefix, sl, pl), tok, tok);
      const auto ae = corpus::autoencoding_corpus(xe_mono.empty() ? text.tgt : corpus::read_lines(xe_mono), tok, pl);
      std::optional<corpus::NoiseConfig> noise;
      if (!xe_clean) {
        noise = cfg.noise;
        noise->seed = xe.seed;
      }
      auto model_cfg = cfg.model;
      model_cfg.src_vocab_size = model_cfg.tgt_vocab_size = tok.vocab().size();
      auto opt = train_options(cfg.pretrain, xe.seed, xe_clean ? "xenc-clean" : "xenc-noisy");
      const auto res = training::crosslingual_pretrain(model_cfg, data, ae, noise, tok.vocab(), dev, xe.seed, opt,
                                                       cfg.autoencoding_share);
      save_ckpt(xe, res.checkpoint, xe_out, "xenc-pretrain");
    };
  });

  // fit-adapter ---------------------------------------------------------
  Common fa;
  CorpusArgs fa_data{"", "src", "piv"};
  TokPaths fa_tok;
  std::string fa_src_model, fa_piv_model, fa_pooling = "average", fa_out;
  auto* fa_cmd = app.add_subcommand("fit-adapter", "Fit the orthogonal pivot adapter on source-pivot pairs");
  fa_cmd->add_option("--src-model", fa_src_model, "Checkpoint whose encoder reads source sentences")->required();
  fa_cmd->add_option("--piv-model", fa_piv_model, "Checkpoint whose encoder reads pivot sentences")->required();
  fa_cmd->add_option("--data", fa_data.prefix, "Source-pivot corpus prefix")->required();
  fa_cmd->add_option("--src-lang", fa_data.src_lang, "Source language")->capture_default_str();
  fa_cmd->add_option("--piv-lang", fa_data.tgt_lang, "Pivot language")->capture_default_str();
  fa_cmd->add_option("--pooling", fa_pooling, "average or max")->capture_default_str();
  fa_tok.add(fa_cmd, "");
  fa_cmd->add_option("--out", fa_out, "Output adapter file")->required();
  fa_cmd->add_option("--run-dir", fa.run_dir, "Run directory")->capture_default_str();
  fa_cmd->callback([&] {
    action = [&] {
      require_file(fa_src_model);
      require_file(fa_piv_model);
      require_corpus(fa_data.prefix, fa_data.src_lang, fa_data.tgt_lang);
      fa_tok.check();
      const auto pooling = adapter::pooling_from_string(fa_pooling);
      const auto tok = fa_tok.load();
      const auto text = corpus::read_text_corpus(fa_data.prefix, fa_data.src_lang, fa_data.tgt_lang);
      auto sm = training::load_checkpoint(fa_src_model);
      auto pm = training::load_checkpoint(fa_piv_model);
      model::Transformer<float> snet(sm.config, sm.params);
      model::Transformer<float> pnet(pm.config, pm.params);
      const auto pairs = adapter::collect_pairs(snet, encode_lines(text.src, tok, ""), pnet,
                                                encode_lines(text.tgt, tok, ""), pooling);
      const auto a = adapter::fit_adapter(pairs);
      auto m = fa.manifest();
      const auto [full, rel] = fa.output(fa_out);
      adapter::save_adapter(a, full);
      m.record(rel, "adapter", "fit-adapter");
      m.save();
      std::printf("wrote %s (d=%zu residual=%.6g orthogonality=%.3g)\n", full.string().c_str(), a.dim(),
                  a.fit_residual, a.orthogonality_error);
    };
  });

  // finetune ------------------------------------------------------------
  Common ft;
  CorpusArgs ft_train, ft_dev;
  TokPaths ft_src, ft_tgt;
  std::string ft_init, ft_adapter, ft_out;
  bool ft_allow = false;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune a checkpoint on source->target data");
  ft.add(ft_cmd);
  ft_cmd->add_option("--init", ft_init, "Starting checkpoint")->required();
  ft_cmd->add_option("--train", ft_train.prefix, "Source->target corpus prefix")->required();
  ft_cmd->add_option("--dev", ft_dev.prefix, "Validation corpus prefix")->required();
  ft_cmd->add_option("--src-lang", ft_train.src_lang, "Source language")->capture_default_str();
  ft_cmd->add_option("--tgt-lang", ft_train.tgt_lang, "Target language")->capture_default_str();
  ft_src.add(ft_cmd, "src");
  ft_tgt.add(ft_cmd, "tgt");
  ft_cmd->add_option("--adapter", ft_adapter, "Pivot adapter applied after the encoder");
  ft_cmd->add_flag("--allow-adapter-after-stepwise", ft_allow, "Permit an adapter on a step-wise checkpoint");
  ft_cmd->add_option("--out", ft_out, "Output checkpoint")->required();
  ft_cmd->callback([&] {
    action = [&] {
      const auto& sl = ft_train.src_lang;
      const auto& tl = ft_train.tgt_lang;
      require_file(ft_init);
      require_file(ft_adapter);
      require_corpus(ft_train.prefix, sl, tl);
      require_corpus(ft_dev.prefix, sl, tl);
      ft_src.check();
      ft_tgt.check();
      const auto cfg = ft.experiment();
      const auto src = ft_src.load();
      const auto tgt = ft_tgt.load();
      const auto data = corpus::encode_corpus(corpus::read_text_corpus(ft_train.prefix, sl, tl), src, tgt);
      const auto dev = corpus::encode_corpus(corpus::read_text_corpus(ft_dev.prefix, sl, tl), src, tgt);
      std::optional<adapter::AdapterMatrix> a;
      if (!ft_adapter.empty()) a = adapter::load_adapter(ft_adapter);
      training::FinetuneOptions fo;
      fo.train = train_options(cfg.finetune, ft.seed, "");
      fo.allow_adapter_after_stepwise = ft_allow;
      fo.warnings = &std::cerr;
      const auto res = training::finetune(training::load_checkpoint(ft_init), data, dev, std::move(a), fo);
      save_ckpt(ft, res.checkpoint, ft_out, "finetune");
    };
  });

  // decode --------------------------------------------------------------
  Common de;
  TokPaths de_src, de_tgt;
  std::string de_model, de_input, de_out, de_tag;
  auto* de_cmd = app.add_subcommand("decode", "Beam-search decode a text file");
  de.add(de_cmd, false);
  de_cmd->add_option("--model", de_model, "Checkpoint")->required();
  de_cmd->add_option("--input", de_input, "Source text file")->required();
  de_cmd->add_option("--tag", de_tag, "Prepend the target-language tag (multilingual models)");
  de_src.add(de_cmd, "src");
  de_tgt.add(de_cmd, "tgt");
  de_cmd->add_option("--out", de_out, "Hypothesis file")->required();
  de_cmd->callback([&] {
    action = [&] {
      require_file(de_model);
      require_file(de_input);
      de_src.check();
      de_tgt.check();
      const auto cfg = de.experiment();
      const auto src = de_src.load();
      const auto tgt = de_tgt.load();
      auto ck = training::load_checkpoint(de_model);
      if (ck.src_vocab_hash != src.vocab().content_hash() || ck.tgt_vocab_hash != tgt.vocab().content_hash()) {
        throw VocabError("decode: vocabulary files do not match the checkpoint");
      }
      const auto hyps = decode::beam_search(ck, encode_lines(corpus::read_lines(de_input), src, de_tag), cfg.beam);
      write_hyps(de, hyps, tgt, de_out, "decode");
    };
  });

  // pivot-decode --------------------------------------------------------
  Common pd;
  TokPaths pd_src, pd_piv, pd_tgt;
  std::string pd_a, pd_b, pd_input, pd_out;
  auto* pd_cmd = app.add_subcommand("pivot-decode", "Translate through the pivot with two models");
  pd.add(pd_cmd, false);
  pd_cmd->add_option("--src-piv", pd_a, "Source->pivot checkpoint")->required();
  pd_cmd->add_option("--piv-tgt", pd_b, "Pivot->target checkpoint")->required();
  pd_cmd->add_option("--input", pd_input, "Source text file")->required();
  pd_src.add(pd_cmd, "src");
  pd_tgt.add(pd_cmd, "tgt");
  pd_cmd->add_option("--out", pd_out, "Hypothesis file")->required();
  pd_cmd->callback([&] {
    action = [&] {
      require_file(pd_a);
      require_file(pd_b);
      require_file(pd_input);
      pd_src.check();
      pd_tgt.check();
      const auto cfg = pd.experiment();
      const auto src = pd_src.load();
      const auto tgt = pd_tgt.load();
      auto a = training::load_checkpoint(pd_a);
      auto b = training::load_checkpoint(pd_b);
      if (a.src_vocab_hash != src.vocab().content_hash() || b.tgt_vocab_hash != tgt.vocab().content_hash()) {
        throw VocabError("pivot-decode: vocabulary files do not match the checkpoints");
      }
      const auto hyps = decode::pivot_translate(a, b, encode_lines(corpus::read_lines(pd_input), src, ""), cfg.beam);
      write_hyps(pd, hyps, tgt, pd_out, "pivot-decode");
    };
  });

  // distill / backtranslate ---------------------------------------------
  Common di;
  CorpusArgs di_data{"", "src", "piv"};
  TokPaths di_src, di_tgt;
  std::string di_teacher, di_out, di_tgt_lang = "tgt";
  auto* di_cmd = app.add_subcommand("distill", "Teacher-student data: translate the pivot side of src-piv pairs");
  di.add(di_cmd, false);
  di_cmd->add_option("--teacher", di_teacher, "Pivot->target checkpoint")->required();
  di_cmd->add_option("--data", di_data.prefix, "Source-pivot corpus prefix")->required();
  di_cmd->add_option("--src-lang", di_data.src_lang, "Source language")->capture_default_str();
  di_cmd->add_option("--piv-lang", di_data.tgt_lang, "Pivot language")->capture_default_str();
  di_cmd->add_option("--tgt-lang", di_tgt_lang, "Target language of the output")->capture_default_str();
  di_src.add(di_cmd, "src");
  di_tgt.add(di_cmd, "tgt");
  di_cmd->add_option("--out", di_out, "Output corpus prefix")->required();
  di_cmd->callback([&] {
    action = [&] {
      require_file(di_teacher);
      require_corpus(di_data.prefix, di_data.src_lang, di_data.tgt_lang);
      di_src.check();
      di_tgt.check();
      const auto cfg = di.experiment();
      const auto src = di_src.load();
      const auto tgt = di_tgt.load();
      auto teacher = training::load_checkpoint(di_teacher);
      const auto data = corpus::encode_corpus(
          corpus::read_text_corpus(di_data.prefix, di_data.src_lang, di_data.tgt_lang), src, src);
      const auto made = decode::distill_teacher_student(data, teacher, cfg.beam);
      std::cerr << "dropped " << made.dropped << " pairs\n";
      write_text_outputs(di, decode_corpus(made.corpus, src, tgt, di_data.src_lang, di_tgt_lang), di_out, "distill");
    };
  });

  Common bt;
  CorpusArgs bt_data{"", "piv", "tgt"};
  TokPaths bt_src, bt_tgt;
  std::string bt_model, bt_out, bt_src_lang = "src";
  auto* bt_cmd = app.add_subcommand("backtranslate", "Synthetic source sentences for pivot-target pairs");
  bt.add(bt_cmd, false);
  bt_cmd->add_option("--model", bt_model, "Pivot->source checkpoint")->required();
  bt_cmd->add_option("--data", bt_data.prefix, "Pivot-target corpus prefix")->required();
  bt_cmd->add_option("--piv-lang", bt_data.src_lang, "Pivot language")->capture_default_str();
  bt_cmd->add_option("--tgt-lang", bt_data.tgt_lang, "Target language")->capture_default_str();
  bt_cmd->add_option("--src-lang", bt_src_lang, "Source language of the output")->capture_default_str();
  bt_src.add(bt_cmd, "src");
  bt_tgt.add(bt_cmd, "tgt");
  bt_cmd->add_option("--out", bt_out, "Output corpus prefix")->required();
  bt_cmd->callback([&] {
    action = [&] {
      require_file(bt_model);
      require_corpus(bt_data.prefix, bt_data.src_lang, bt_data.tgt_lang);
      bt_src.check();
      bt_tgt.check();
      const auto cfg = bt.experiment();
      const auto src = bt_src.load();
      const auto tgt = bt_tgt.load();
      auto model = training::load_checkpoint(bt_model);
      const auto data = corpus::encode_corpus(
          corpus::read_text_corpus(bt_data.prefix, bt_data.src_lang, bt_data.tgt_lang), src, tgt);
      const auto made = decode::backtranslate(data, model, cfg.beam);
      std::cerr << "dropped " << made.dropped << " pairs\n";
      write_text_outputs(bt, decode_corpus(made.corpus, src, tgt, bt_src_lang, bt_data.tgt_lang), bt_out,
                         "backtranslate");
    };
  });

  // bleu ----------------------------------------------------------------
  std::string bl_hyp, bl_ref;
  auto* bl_cmd = app.add_subcommand("bleu", "Corpus BLEU-4 of a hypothesis file against a reference file");
  bl_cmd->add_option("--hyp", bl_hyp, "Hypotheses, one per line")->required();
  bl_cmd->add_option("--ref", bl_ref, "References, one per line")->required();
  bl_cmd->callback([&] {
    action = [&] {
      require_file(bl_hyp);
      require_file(bl_ref);
      std::cout << decode::bleu(corpus::read_lines(bl_hyp), corpus::read_lines(bl_ref)).str() << "\n";
    };
  });

  // recipe --------------------------------------------------------------
  Common rc;
  std::string rc_name, rc_grid, rc_seeds, rc_runs = "runs";
  bool rc_force = false, rc_quiet = false;
  auto* rc_cmd = app.add_subcommand("recipe", "Run a named recipe or a grid of recipes end to end");
  rc.add(rc_cmd);
  auto* name_opt = rc_cmd->add_option("--name", rc_name, "Recipe name");
  auto* grid_opt = rc_cmd->add_option("--grid", rc_grid, "Grid: transfer, pooling, autoencoding, zeroshot, synthetic or all");
  name_opt->excludes(grid_opt);
  rc_cmd->add_option("--seeds", rc_seeds, "Comma-separated seeds (overrides --seed)");
  rc_cmd->add_option("--runs-dir", rc_runs, "Parent directory of run directories")->capture_default_str();
  rc_cmd->add_flag("--force", rc_force, "Recompute every stage even when its artifacts are intact");
  rc_cmd->add_flag("--quiet", rc_quiet, "Do not log training progress");
  rc_cmd->callback([&] {
    action = [&] {
      if (rc_name.empty() == rc_grid.empty()) throw UsageError("recipe: give exactly one of --name or --grid");
      const auto recipes = rc_grid.empty() ? std::vector<std::string>{rc_name} : cli::grid_recipes(rc_grid);
      for (const auto& r : recipes) {
        const auto& names = cli::recipe_names();
        if (std::find(names.begin(), names.end(), r) == names.end()) throw UsageError("unknown recipe '" + r + "'");
      }
      const auto seeds = rc_seeds.empty() ? std::vector<std::uint64_t>{rc.seed} : parse_seeds(rc_seeds);
      const auto cfg = rc.experiment();
      cli::LabOptions lo;
      lo.force = rc_force;
      lo.log = rc_quiet ? nullptr : &std::cerr;
      std::vector<std::vector<cli::RecipeResult>> per_seed;
      for (const auto seed : seeds) {
        const std::string dir_name = (rc_grid.empty() ? rc_name : "grid") + ".seed" + std::to_string(seed);
        cli::Lab lab(cfg, seed, fs::path(rc_runs) / dir_name, lo);
        auto& results = per_seed.emplace_back();
        for (const auto& r : recipes) {
          results.push_back(lab.run(r));
          const auto& res = results.back();
          std::printf("seed=%llu recipe=%s test_bleu=%.2f dev_bleu=%.2f seconds=%.1f hash=%s\n",
                      static_cast<unsigned long long>(seed), r.c_str(), res.test.score, res.dev.score, res.seconds,
                      res.checkpoint_hash.c_str());
          std::fflush(stdout);
        }
      }
      const auto rows = cli::aggregate(recipes, per_seed);
      const auto table = cli::format_grid(rows);
      std::cout << table;
      nlohmann::json report;
      report["config"] = nlohmann::json(cfg).dump(2);
      report["recipes"] = recipes;
      report["seeds"] = seeds;
      report["runs"] = per_seed;
      for (const auto& row : rows) {
        report["summary"].push_back(
            {{"recipe", row.recipe}, {"scores", row.scores}, {"mean", row.mean}, {"sd", row.sd},
             {"max_seconds", row.max_seconds}});
      }
      fs::create_directories(rc_runs);
      const std::string stem = rc_grid.empty() ? rc_name : rc_grid;
      std::ofstream(fs::path(rc_runs) / (stem + ".report.json")) << report.dump(2) << "\n";
      std::ofstream(fs::path(rc_runs) / (stem + ".report.txt")) << table;
    };
  });

  // report --------------------------------------------------------------
  std::vector<std::string> rp_dirs;
  auto* rp_cmd = app.add_subcommand("report", "Verify run manifests and print their recipe results");
  rp_cmd->add_option("--run-dir", rp_dirs, "Run directories")->required();
  rp_cmd->callback([&] {
    action = [&] {
      for (const auto& d : rp_dirs) {
        require_file((fs::path(d) / "manifest.json").string());
        cli::Manifest m(d);
        m.verify();
        std::cout << d << ": " << m.artifacts().size() << " artifacts verified\n";
        for (const auto& [name, r] : m.results().items()) {
          std::printf("  %-36s test_bleu=%6.2f dev_bleu=%6.2f seconds=%8.1f hash=%s\n", name.c_str(),
                      r.at("test").at("score").get<double>(), r.at("dev").at("score").get<double>(),
                      r.at("seconds").get<double>(), r.at("checkpoint_hash").get<std::string>().c_str());
        }
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }
  try {
    if (action) action();
  } catch (const Error& e) {
    return fail(to_string(e.error_class()), e.what(), exit_code(e.error_class()));
  } catch (const nlohmann::json::exception& e) {
    return fail("config", e.what(), exit_code(ErrorClass::config));
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
