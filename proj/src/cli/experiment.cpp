#include "pivotmt/cli/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "pivotmt/corpus/parallel.hpp"
#include "pivotmt/decode/pivot.hpp"
#include "pivotmt/error.hpp"
#include "pivotmt/hash.hpp"
#include "pivotmt/text/bpe.hpp"
#include "pivotmt/training/transfer.hpp"

namespace pivotmt::cli {

namespace fs = std::filesystem;
using training::Checkpoint;

// ---------------------------------------------------------------- config

namespace {

nlohmann::json budget_json(const Budget& b) {
  return {{"initial_lr", b.schedule.initial_lr},
          {"decay_factor", b.schedule.decay_factor},
          {"decay_patience", b.schedule.decay_patience},
          {"stop_patience", b.schedule.stop_patience},
          {"checkpoint_interval", b.schedule.checkpoint_interval},
          {"max_updates", b.max_updates},
          {"max_tokens", b.max_tokens},
          {"label_smoothing", b.label_smoothing}};
}

Budget budget_from(const nlohmann::json& j, Budget d) {
  d.schedule.initial_lr = j.value("initial_lr", d.schedule.initial_lr);
  d.schedule.decay_factor = j.value("decay_factor", d.schedule.decay_factor);
  d.schedule.decay_patience = j.value("decay_patience", d.schedule.decay_patience);
  d.schedule.stop_patience = j.value("stop_patience", d.schedule.stop_patience);
  d.schedule.checkpoint_interval = j.value("checkpoint_interval", d.schedule.checkpoint_interval);
  d.schedule.lr = d.schedule.initial_lr;
  d.max_updates = j.value("max_updates", d.max_updates);
  d.max_tokens = j.value("max_tokens", d.max_tokens);
  d.label_smoothing = j.value("label_smoothing", d.label_smoothing);
  return d;
}

nlohmann::json section(const nlohmann::json& j, const char* name) {
  return j.contains(name) ? j.at(name) : nlohmann::json::object();
}

}  // namespace

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.model.layers = 2;
  c.model.model_dim = 64;
  c.model.ff_dim = 256;
  c.model.heads = 4;
  c.model.dropout = 0.1;
  c.pretrain.schedule = training::TrainSchedule::pretraining();
  c.pretrain.schedule.initial_lr = c.pretrain.schedule.lr = 3e-3;
  c.pretrain.max_updates = 800;
  c.finetune.schedule = training::TrainSchedule::finetuning();
  c.finetune.schedule.initial_lr = c.finetune.schedule.lr = 1e-3;
  c.finetune.max_updates = 400;
  c.multilingual = c.pretrain;
  c.multilingual.max_updates = 1600;
  return c;
}

void ExperimentConfig::validate() const {
  world.validate();
  auto m = model;
  m.src_vocab_size = m.tgt_vocab_size = 8;
  m.validate();
  pretrain.schedule.validate();
  finetune.schedule.validate();
  multilingual.schedule.validate();
  noise.validate();
  beam.validate();
  if (!(autoencoding_share > 0.0)) throw ConfigError("config: autoencoding_share must be positive");
  if (!(synthetic_ratio > 0.0)) throw ConfigError("config: synthetic_ratio must be positive");
  if (synthetic_pairs == 0) throw ConfigError("config: synthetic_pairs must be positive");
  if (multilingual_src_tgt_weight == 0) throw ConfigError("config: multilingual_src_tgt_weight must be >= 1");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json model = c.model;
  model.erase("src_vocab_size");
  model.erase("tgt_vocab_size");
  j = nlohmann::json{
      {"corpus",
       {{"world", c.world},
        {"noise", {{"p_del", c.noise.p_del}, {"p_rep", c.noise.p_rep}, {"d_per", c.noise.d_per}}},
        {"autoencoding_share", c.autoencoding_share},
        {"multilingual_src_tgt_weight", c.multilingual_src_tgt_weight}}},
      {"text", {{"joint_merges", c.joint_merges}, {"target_merges", c.target_merges}, {"multi_merges", c.multi_merges}}},
      {"model", model},
      {"adapter", {{"pooling", adapter::to_string(c.pooling)}}},
      {"training",
       {{"pretrain", budget_json(c.pretrain)},
        {"finetune", budget_json(c.finetune)},
        {"multilingual", budget_json(c.multilingual)}}},
      {"decode_eval",
       {{"beam", c.beam}, {"synthetic_pairs", c.synthetic_pairs}, {"synthetic_ratio", c.synthetic_ratio}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  const auto d = ExperimentConfig::desk();
  c = d;
  const auto corpus_j = section(j, "corpus");
  if (corpus_j.contains("world")) c.world = corpus_j.at("world").get<corpus::ToyWorldSpec>();
  const auto noise_j = section(corpus_j, "noise");
  c.noise.p_del = noise_j.value("p_del", d.noise.p_del);
  c.noise.p_rep = noise_j.value("p_rep", d.noise.p_rep);
  c.noise.d_per = noise_j.value("d_per", d.noise.d_per);
  c.autoencoding_share = corpus_j.value("autoencoding_share", d.autoencoding_share);
  c.multilingual_src_tgt_weight = corpus_j.value("multilingual_src_tgt_weight", d.multilingual_src_tgt_weight);
  const auto text_j = section(j, "text");
  c.joint_merges = text_j.value("joint_merges", d.joint_merges);
  c.target_merges = text_j.value("target_merges", d.target_merges);
  c.multi_merges = text_j.value("multi_merges", d.multi_merges);
  if (j.contains("model")) {
    auto m = j.at("model");
    nlohmann::json base = d.model;
    base.update(m);
    base["src_vocab_size"] = 0;
    base["tgt_vocab_size"] = 0;
    c.model = base.get<model::ModelConfig>();
  }
  c.pooling = adapter::pooling_from_string(section(j, "adapter").value("pooling", std::string("average")));
  const auto train_j = section(j, "training");
  c.pretrain = budget_from(section(train_j, "pretrain"), d.pretrain);
  c.finetune = budget_from(section(train_j, "finetune"), d.finetune);
  c.multilingual = budget_from(section(train_j, "multilingual"), d.multilingual);
  const auto dec_j = section(j, "decode_eval");
  if (dec_j.contains("beam")) c.beam = dec_j.at("beam").get<decode::BeamConfig>();
  c.synthetic_pairs = dec_j.value("synthetic_pairs", d.synthetic_pairs);
  c.synthetic_ratio = dec_j.value("synthetic_ratio", d.synthetic_ratio);
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  try {
    auto c = nlohmann::json::parse(text, nullptr, true, true).get<ExperimentConfig>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const RecipeResult& r) {
  j = nlohmann::json{{"recipe", r.recipe},
                     {"seed", r.seed},
                     {"dev", r.dev},
                     {"test", r.test},
                     {"seconds", r.seconds},
                     {"checkpoint_hash", r.checkpoint_hash},
                     {"stages", r.stages}};
}

void from_json(const nlohmann::json& j, RecipeResult& r) {
  r.recipe = j.at("recipe").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.dev = j.at("dev").get<decode::BleuReport>();
  r.test = j.at("test").get<decode::BleuReport>();
  r.seconds = j.at("seconds").get<double>();
  r.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
  r.stages = j.at("stages").get<std::vector<std::string>>();
}

// ---------------------------------------------------------------- recipes

namespace {

// How a recipe produces its test output.
struct RecipeSpec {
  std::string decode_stage;          // checkpoint decoded on the test set
  bool multilingual = false;         // tagged sources, shared vocabulary
  bool pivot = false;                // two-pass decoding through src-piv and piv-tgt
};

const std::map<std::string, RecipeSpec>& recipe_table() {
  static const std::map<std::string, RecipeSpec> table{
      {"direct", {"ft-direct"}},
      {"multilingual-m2m", {"m2m", true}},
      {"multilingual-m2o", {"m2o", true}},
      {"plain", {"ft-plain"}},
      {"plain+adapter", {"ft-plain+adapter"}},
      {"plain+adapter-max", {"ft-plain+adapter-max"}},
      {"xenc", {"ft-xenc"}},
      {"xenc+adapter", {"ft-xenc+adapter"}},
      {"stepwise", {"ft-stepwise"}},
      {"stepwise+xenc", {"ft-stepwise+xenc"}},
      {"zeroshot-pivot", {"", false, true}},
      {"zeroshot-m2m", {"m2m-zeroshot", true}},
      {"zeroshot-plain", {"plain-init"}},
      {"zeroshot-plain+adapter", {"plain-init+adapter"}},
      {"zeroshot-stepwise", {"stepwise"}},
      {"zeroshot-stepwise+xenc", {"stepwise+xenc-noisy-pp"}},
      {"zeroshot-stepwise+xenc-clean", {"stepwise+xenc-clean-pp"}},
      {"zeroshot-stepwise+xenc-mono", {"stepwise+xenc-noisy-mono"}},
      {"zeroshot-stepwise+xenc-clean-mono", {"stepwise+xenc-clean-mono"}},
      {"distill-scratch", {"ft-distill-scratch"}},
      {"distill-stepwise+xenc", {"ft-distill-stepwise+xenc"}},
      {"backtranslate-direct", {"ft-backtranslate-direct"}},
      {"backtranslate-plain", {"ft-backtranslate-plain"}},
  };
  return table;
}

const RecipeSpec& recipe_spec(const std::string& name) {
  const auto& t = recipe_table();
  const auto it = t.find(name);
  if (it == t.end()) throw UsageError("unknown recipe '" + name + "'");
  return it->second;
}

// Direct dependencies of every stage. Adapters are named "adapter:<encoder stage>:<pooling>",
// synthetic corpora "synthetic:distilled" and "synthetic:backtranslated".
std::vector<std::string> stage_deps(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> deps{
      {"src-piv", {}},
      {"piv-tgt", {}},
      {"piv-src", {}},
      {"stepwise", {"src-piv"}},
      {"xenc-noisy-pp", {}},
      {"xenc-clean-pp", {}},
      {"xenc-noisy-mono", {}},
      {"xenc-clean-mono", {}},
      {"stepwise+xenc-noisy-pp", {"xenc-noisy-pp"}},
      {"stepwise+xenc-clean-pp", {"xenc-clean-pp"}},
      {"stepwise+xenc-noisy-mono", {"xenc-noisy-mono"}},
      {"stepwise+xenc-clean-mono", {"xenc-clean-mono"}},
      {"m2m", {}},
      {"m2m-zeroshot", {}},
      {"m2o", {}},
      {"plain-init", {"src-piv", "piv-tgt"}},
      {"adapter:src-piv:average", {"src-piv", "piv-tgt"}},
      {"adapter:src-piv:max", {"src-piv", "piv-tgt"}},
      {"adapter:xenc-noisy-pp:average", {"xenc-noisy-pp", "piv-tgt"}},
      {"adapter:xenc-noisy-pp:max", {"xenc-noisy-pp", "piv-tgt"}},
      {"plain-init+adapter", {"plain-init", "adapter:src-piv:POOL"}},
      {"synthetic:distilled", {"piv-tgt"}},
      {"synthetic:backtranslated", {"piv-src"}},
      {"ft-direct", {}},
      {"ft-plain", {"plain-init"}},
      {"ft-plain+adapter", {"plain-init", "adapter:src-piv:POOL"}},
      {"ft-plain+adapter-max", {"plain-init", "adapter:src-piv:max"}},
      {"ft-xenc", {"xenc-noisy-pp", "piv-tgt"}},
      {"ft-xenc+adapter", {"xenc-noisy-pp", "piv-tgt", "adapter:xenc-noisy-pp:POOL"}},
      {"ft-stepwise", {"stepwise"}},
      {"ft-stepwise+xenc", {"stepwise+xenc-noisy-pp"}},
      {"ft-distill-scratch", {"synthetic:distilled"}},
      {"ft-distill-stepwise+xenc", {"stepwise+xenc-noisy-pp", "synthetic:distilled"}},
      {"ft-backtranslate-direct", {"synthetic:backtranslated"}},
      {"ft-backtranslate-plain", {"plain-init", "synthetic:backtranslated"}},
  };
  const auto it = deps.find(stage);
  if (it == deps.end()) throw UsageError("unknown stage '" + stage + "'");
  return it->second;
}

std::string resolve_pool(std::string s, adapter::Pooling p) {
  const auto pos = s.find("POOL");
  if (pos != std::string::npos) s.replace(pos, 4, std::string(adapter::to_string(p)));
  return s;
}

void topo(const std::string& stage, adapter::Pooling p, std::vector<std::string>& out, std::set<std::string>& seen) {
  if (seen.count(stage)) return;
  seen.insert(stage);
  for (const auto& d : stage_deps(stage)) topo(resolve_pool(d, p), p, out, seen);
  out.push_back(stage);
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& stage) {
  Fnv1a h;
  h.update(stage);
  return (seed * 0x9E3779B97F4A7C15ULL) ^ h.digest();
}

}  // namespace

const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, v] : recipe_table()) n.push_back(k);
    return n;
  }();
  return names;
}

std::vector<std::string> grid_recipes(const std::string& grid) {
  static const std::map<std::string, std::vector<std::string>> grids{
      {"transfer",
       {"direct", "multilingual-m2m", "multilingual-m2o", "plain", "plain+adapter", "xenc", "xenc+adapter", "stepwise",
        "stepwise+xenc"}},
      {"pooling", {"plain", "plain+adapter-max", "plain+adapter"}},
      {"autoencoding",
       {"zeroshot-stepwise+xenc-clean-mono", "zeroshot-stepwise+xenc-mono", "zeroshot-stepwise+xenc-clean",
        "zeroshot-stepwise+xenc"}},
      {"zeroshot",
       {"zeroshot-pivot", "zeroshot-m2m", "zeroshot-plain", "zeroshot-plain+adapter", "zeroshot-stepwise",
        "zeroshot-stepwise+xenc", "distill-scratch", "distill-stepwise+xenc"}},
      {"synthetic", {"direct", "backtranslate-direct", "plain", "backtranslate-plain"}},
  };
  if (grid == "all") {
    std::vector<std::string> all;
    for (const char* g : {"transfer", "pooling", "autoencoding", "zeroshot", "synthetic"}) {
      for (const auto& r : grids.at(g)) {
        if (std::find(all.begin(), all.end(), r) == all.end()) all.push_back(r);
      }
    }
    return all;
  }
  const auto it = grids.find(grid);
  if (it == grids.end()) throw UsageError("unknown grid '" + grid + "' (transfer, pooling, autoencoding, zeroshot, synthetic, all)");
  return it->second;
}

// ---------------------------------------------------------------- lab

struct Lab::Impl {
  std::optional<corpus::ToyCorpora> world;
  std::optional<Tokenizers> toks;
  std::map<std::string, Checkpoint> ckpts;
  std::map<std::string, adapter::AdapterMatrix> adapters;
  std::map<std::string, corpus::ParallelCorpus> encoded;
  std::map<std::string, corpus::ParallelCorpus> synthetic;
  std::set<std::string> fresh;  // stages computed by this instance
};

Lab::Lab(ExperimentConfig config, std::uint64_t seed, fs::path run_dir, LabOptions options)
    : config_(std::move(config)), seed_(seed), options_(options), manifest_(std::move(run_dir)),
      impl_(std::make_unique<Impl>()) {
  config_.validate();
  config_.world.seed = seed;
  const nlohmann::json cfg = config_;
  const auto text = cfg.dump(2);
  auto& meta = manifest_.meta();
  if (meta.contains("config") && meta.at("config").get<std::string>() != text) {
    if (!options_.force) {
      throw ConfigError("run directory " + manifest_.run_dir().string() +
                        " was produced with a different configuration (use --force to overwrite)");
    }
    manifest_ = Manifest(manifest_.run_dir());
  }
  meta["config"] = text;
  meta["seed"] = seed;
  manifest_.save();
}

Lab::~Lab() = default;

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void say(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

std::vector<std::string> merge_lines(std::initializer_list<const std::vector<std::string>*> parts) {
  std::vector<std::string> out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

text::Tokenizer learn_tokenizer(const std::vector<std::string>& lines, std::size_t merges,
                                const text::SpecialTokens& specials, std::vector<std::string> languages) {
  auto bpe = text::learn_bpe(lines, merges, std::move(languages));
  std::vector<std::vector<std::string>> seg;
  seg.reserve(lines.size());
  for (const auto& l : lines) seg.push_back(bpe.segment(l));
  auto vocab = text::Vocabulary::build(seg, specials);
  return text::Tokenizer(std::move(bpe), std::move(vocab));
}

}  // namespace

const corpus::ToyCorpora& Lab::world() {
  if (impl_->world) return *impl_->world;
  impl_->world = corpus::generate_toy_corpora(config_.world);
  const auto& w = *impl_->world;
  std::vector<std::string> files;
  auto pair_files = [&](const std::string& name, const corpus::TextCorpus& c) {
    files.push_back("data/" + name + "." + c.src_lang);
    files.push_back("data/" + name + "." + c.tgt_lang);
  };
  pair_files("train.src-piv", w.src_piv);
  pair_files("train.piv-tgt", w.piv_tgt);
  pair_files("train.src-tgt", w.src_tgt);
  pair_files("test.src-tgt", w.src_tgt_test);
  pair_files("dev.src-piv", w.src_piv_dev);
  pair_files("dev.piv-tgt", w.piv_tgt_dev);
  pair_files("dev.src-tgt", w.src_tgt_dev);
  pair_files("adapter.src-piv", w.src_piv_adapter);
  files.push_back("data/mono." + config_.world.piv_lang);
  if (!reusable(files, "world")) {
    impl_->fresh.insert("world");
    fs::create_directories(manifest_.run_dir() / "data");
    const auto dir = manifest_.run_dir() / "data";
    corpus::write_text_corpus(w.src_piv, dir / "train.src-piv");
    corpus::write_text_corpus(w.piv_tgt, dir / "train.piv-tgt");
    corpus::write_text_corpus(w.src_tgt, dir / "train.src-tgt");
    corpus::write_text_corpus(w.src_tgt_test, dir / "test.src-tgt");
    corpus::write_text_corpus(w.src_piv_dev, dir / "dev.src-piv");
    corpus::write_text_corpus(w.piv_tgt_dev, dir / "dev.piv-tgt");
    corpus::write_text_corpus(w.src_tgt_dev, dir / "dev.src-tgt");
    corpus::write_text_corpus(w.src_piv_adapter, dir / "adapter.src-piv");
    corpus::write_lines(w.mono_piv, dir / ("mono." + config_.world.piv_lang));
    for (const auto& f : files) manifest_.record(f, "corpus", "world");
    manifest_.save();
  }
  return w;
}

const Tokenizers& Lab::tokenizers() {
  if (impl_->toks) return *impl_->toks;
  const auto& w = world();
  const auto& spec = config_.world;
  const std::vector<std::string> files{"tok/joint.bpe", "tok/joint.vocab", "tok/target.bpe",
                                       "tok/target.vocab", "tok/multi.bpe", "tok/multi.vocab"};
  const auto dir = manifest_.run_dir();
  Tokenizers t;
  if (reusable(files, "tokenizers")) {
    t.joint = text::Tokenizer(text::BpeModel::load(dir / files[0]), text::Vocabulary::load(dir / files[1]));
    t.target = text::Tokenizer(text::BpeModel::load(dir / files[2]), text::Vocabulary::load(dir / files[3]));
    t.multi = text::Tokenizer(text::BpeModel::load(dir / files[4]), text::Vocabulary::load(dir / files[5]));
  } else {
    Timer timer;
    const auto joint_lines = merge_lines({&w.src_piv.src, &w.src_piv.tgt, &w.piv_tgt.src});
    text::SpecialTokens joint_sp;
    joint_sp.blank = true;
    t.joint = learn_tokenizer(joint_lines, config_.joint_merges, joint_sp, {spec.src_lang, spec.piv_lang});
    const auto tgt_lines = merge_lines({&w.piv_tgt.tgt, &w.src_tgt.tgt});
    t.target = learn_tokenizer(tgt_lines, config_.target_merges, {}, {spec.tgt_lang});
    const auto multi_lines = merge_lines({&w.src_piv.src, &w.src_piv.tgt, &w.piv_tgt.src, &w.piv_tgt.tgt});
    text::SpecialTokens multi_sp;
    multi_sp.tag_languages = {spec.src_lang, spec.piv_lang, spec.tgt_lang};
    t.multi = learn_tokenizer(multi_lines, config_.multi_merges, multi_sp,
                              {spec.src_lang, spec.piv_lang, spec.tgt_lang});
    fs::create_directories(dir / "tok");
    t.joint.bpe().save(dir / files[0]);
    t.joint.vocab().save(dir / files[1]);
    t.target.bpe().save(dir / files[2]);
    t.target.vocab().save(dir / files[3]);
    t.multi.bpe().save(dir / files[4]);
    t.multi.vocab().save(dir / files[5]);
    for (const auto& f : files) manifest_.record(f, "tokenizer", "tokenizers");
    manifest_.set_stage_seconds("tokenizers", timer.seconds());
    impl_->fresh.insert("tokenizers");
    manifest_.save();
  }
  impl_->toks = std::move(t);
  return *impl_->toks;
}

namespace {

model::ModelConfig sized(model::ModelConfig c, const text::Tokenizer& src, const text::Tokenizer& tgt) {
  c.src_vocab_size = src.vocab().size();
  c.tgt_vocab_size = tgt.vocab().size();
  return c;
}

training::TrainOptions options_for(const Budget& b, std::uint64_t seed, const std::string& recipe, std::ostream* log) {
  training::TrainOptions o;
  o.schedule = b.schedule;
  o.max_updates = b.max_updates;
  o.max_tokens = b.max_tokens;
  o.label_smoothing = b.label_smoothing;
  o.seed = seed;
  o.recipe = recipe;
  o.log = log;
  o.log_interval = 100;
  return o;
}

}  // namespace

std::vector<std::vector<std::int32_t>> Lab::test_sources(bool multilingual, bool dev) {
  const auto& w = world();
  const auto& t = tokenizers();
  const auto& split = dev ? w.src_tgt_dev : w.src_tgt_test;
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(split.size());
  const auto tag = t.multi.vocab().tag_id(config_.world.tgt_lang);
  for (const auto& line : split.src) {
    if (multilingual) {
      std::vector<std::int32_t> ids{*tag};
      const auto body = t.multi.encode(line);
      ids.insert(ids.end(), body.begin(), body.end());
      out.push_back(std::move(ids));
    } else {
      out.push_back(t.joint.encode(line));
    }
  }
  return out;
}

const std::vector<std::string>& Lab::test_references(bool dev) {
  return dev ? world().src_tgt_dev.tgt : world().src_tgt_test.tgt;
}

bool Lab::reusable(const std::vector<std::string>& artifacts, const std::string& stage) const {
  if (options_.force && !impl_->fresh.count(stage)) return false;
  return manifest_.intact(artifacts);
}

const corpus::ParallelCorpus& Lab::encoded(const std::string& key) {
  auto found = impl_->encoded.find(key);
  if (found != impl_->encoded.end()) return found->second;
  const auto& w = world();
  const auto& t = tokenizers();
  const auto& spec = config_.world;
  corpus::ParallelCorpus c;
  if (key == "src-piv") c = corpus::encode_corpus(w.src_piv, t.joint, t.joint);
  else if (key == "src-piv-dev") c = corpus::encode_corpus(w.src_piv_dev, t.joint, t.joint);
  else if (key == "src-piv-adapter") c = corpus::encode_corpus(w.src_piv_adapter, t.joint, t.joint);
  else if (key == "piv-tgt") c = corpus::encode_corpus(w.piv_tgt, t.joint, t.target);
  else if (key == "piv-tgt-dev") c = corpus::encode_corpus(w.piv_tgt_dev, t.joint, t.target);
  else if (key == "piv-src") c = corpus::encode_corpus(w.src_piv.swapped(), t.joint, t.joint);
  else if (key == "piv-src-dev") c = corpus::encode_corpus(w.src_piv_dev.swapped(), t.joint, t.joint);
  else if (key == "src-tgt") c = corpus::encode_corpus(w.src_tgt, t.joint, t.target);
  else if (key == "src-tgt-dev") c = corpus::encode_corpus(w.src_tgt_dev, t.joint, t.target);
  else if (key == "ae-pp") c = corpus::autoencoding_corpus(w.src_piv.tgt, t.joint, spec.piv_lang);
  else if (key == "ae-mono") c = corpus::autoencoding_corpus(w.mono_piv, t.joint, spec.piv_lang);
  else if (key == "multi-dev") {
    c = corpus::encode_corpus(w.src_tgt_dev, t.multi, t.multi, t.multi.vocab().tag_id(spec.tgt_lang));
  } else {
    throw UsageError("unknown corpus '" + key + "'");
  }
  return impl_->encoded.emplace(key, std::move(c)).first->second;
}

namespace {

std::string adapter_stage(const std::string& encoder_stage, adapter::Pooling pooling) {
  return "adapter:" + encoder_stage + ":" + std::string(adapter::to_string(pooling));
}

std::vector<std::vector<std::int32_t>> side(const corpus::ParallelCorpus& c, bool source) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(c.size());
  for (const auto& p : c.pairs) out.push_back(source ? p.src : p.tgt);
  return out;
}

corpus::ParallelCorpus head(const corpus::ParallelCorpus& c, std::size_t n) {
  auto out = c;
  if (out.pairs.size() > n) out.pairs.resize(n);
  return out;
}

}  // namespace

adapter::AdapterMatrix& Lab::adapter(const std::string& encoder_stage, adapter::Pooling pooling) {
  const auto stage = adapter_stage(encoder_stage, pooling);
  auto it = impl_->adapters.find(stage);
  if (it != impl_->adapters.end()) return it->second;
  const std::string rel = "adapters/" + encoder_stage + "." + std::string(adapter::to_string(pooling)) + ".adapter";
  const auto path = manifest_.run_dir() / rel;
  if (reusable({rel}, stage)) return impl_->adapters.emplace(stage, adapter::load_adapter(path)).first->second;

  auto& enc_ckpt = checkpoint(encoder_stage);
  auto& piv_ckpt = checkpoint("piv-tgt");
  const auto& data = encoded("src-piv-adapter");
  say(options_.log, "[seed " + std::to_string(seed_) + "] stage " + stage);
  Timer timer;
  model::Transformer<float> enc_net(enc_ckpt.config, enc_ckpt.params);
  model::Transformer<float> piv_net(piv_ckpt.config, piv_ckpt.params);
  const auto src = side(data, true);
  const auto piv = side(data, false);
  auto a = adapter::fit_adapter(adapter::collect_pairs(enc_net, src, piv_net, piv, pooling));
  fs::create_directories(path.parent_path());
  adapter::save_adapter(a, path);
  manifest_.record(rel, "adapter", stage);
  manifest_.set_stage_seconds(stage, timer.seconds());
  manifest_.save();
  impl_->fresh.insert(stage);
  return impl_->adapters.emplace(stage, std::move(a)).first->second;
}

const corpus::ParallelCorpus& Lab::synthetic(const std::string& kind) {
  const auto stage = "synthetic:" + kind;
  auto it = impl_->synthetic.find(kind);
  if (it != impl_->synthetic.end()) return it->second;
  const auto& spec = config_.world;
  const auto& t = tokenizers();
  const std::vector<std::string> files{"synthetic/" + kind + "." + spec.src_lang,
                                       "synthetic/" + kind + "." + spec.tgt_lang};
  const auto prefix = manifest_.run_dir() / "synthetic" / kind;
  if (!reusable(files, stage)) {
    decode::SyntheticCorpus made;
    if (kind == "distilled") {
      auto& teacher = checkpoint("piv-tgt");
      say(options_.log, "[seed " + std::to_string(seed_) + "] stage " + stage);
      Timer timer;
      made = decode::distill_teacher_student(head(encoded("src-piv"), config_.synthetic_pairs), teacher, config_.beam);
      manifest_.set_stage_seconds(stage, timer.seconds());
    } else if (kind == "backtranslated") {
      auto& reverse = checkpoint("piv-src");
      say(options_.log, "[seed " + std::to_string(seed_) + "] stage " + stage);
      Timer timer;
      made = decode::backtranslate(head(encoded("piv-tgt"), config_.synthetic_pairs), reverse, config_.beam);
      manifest_.set_stage_seconds(stage, timer.seconds());
    } else {
      throw UsageError("unknown synthetic corpus '" + kind + "'");
    }
    // Stored as detokenized text; the in-memory copy is re-read from disk
    // so fresh and cached runs train on identical ids.
    corpus::TextCorpus text;
    text.src_lang = spec.src_lang;
    text.tgt_lang = spec.tgt_lang;
    for (const auto& p : made.corpus.pairs) {
      text.src.push_back(t.joint.decode(p.src));
      text.tgt.push_back(t.target.decode(p.tgt));
    }
    fs::create_directories(prefix.parent_path());
    corpus::write_text_corpus(text, prefix);
    for (const auto& f : files) manifest_.record(f, "synthetic", stage);
    manifest_.meta()["dropped:" + kind] = made.dropped;
    manifest_.save();
    impl_->fresh.insert(stage);
  }
  auto text = corpus::read_text_corpus(prefix, spec.src_lang, spec.tgt_lang);
  return impl_->synthetic.emplace(kind, corpus::encode_corpus(text, t.joint, t.target)).first->second;
}

training::Checkpoint& Lab::checkpoint(const std::string& stage) {
  auto it = impl_->ckpts.find(stage);
  if (it != impl_->ckpts.end()) return it->second;
  const std::string rel = "models/" + stage + ".ckpt";
  const auto path = manifest_.run_dir() / rel;
  if (reusable({rel}, stage)) {
    return impl_->ckpts.emplace(stage, training::load_checkpoint(path)).first->second;
  }
  // Dependencies first, so the timer below covers this stage alone.
  for (const auto& dep : stage_deps(stage)) {
    const auto d = resolve_pool(dep, config_.pooling);
    if (d.rfind("synthetic:", 0) == 0) {
      synthetic(d.substr(10));
    } else if (d.rfind("adapter:", 0) == 0) {
      const auto colon = d.rfind(':');
      adapter(d.substr(8, colon - 8), adapter::pooling_from_string(d.substr(colon + 1)));
    } else {
      checkpoint(d);
    }
  }
  say(options_.log, "[seed " + std::to_string(seed_) + "] stage " + stage);
  Timer timer;
  auto result = build(stage, derive_seed(seed_, stage));
  fs::create_directories(path.parent_path());
  training::save_checkpoint(result, path);
  manifest_.record(rel, "checkpoint", stage);
  manifest_.set_stage_seconds(stage, timer.seconds());
  manifest_.save();
  impl_->fresh.insert(stage);
  char buf[96];
  std::snprintf(buf, sizeof buf, "] stage %s done in %.1fs", stage.c_str(), timer.seconds());
  say(options_.log, "[seed " + std::to_string(seed_) + buf);
  return impl_->ckpts.emplace(stage, std::move(result)).first->second;
}

training::Checkpoint Lab::build(const std::string& stage, std::uint64_t stage_seed) {
  const auto& w = world();
  const auto& t = tokenizers();
  const auto& spec = config_.world;
  const auto joint_hash = t.joint.vocab().content_hash();
  const auto tgt_hash = t.target.vocab().content_hash();
  const auto pre = options_for(config_.pretrain, stage_seed, stage, options_.log);
  const auto fine = options_for(config_.finetune, stage_seed, stage, options_.log);
  const auto multi = options_for(config_.multilingual, stage_seed, stage, options_.log);

  auto scratch = [&](const text::Tokenizer& src, const text::Tokenizer& tgt, const corpus::ParallelCorpus& data,
                     const corpus::ParallelCorpus& dev, const training::TrainOptions& opt) {
    auto init = Checkpoint::initialize(sized(config_.model, src, tgt), stage_seed, src.vocab().content_hash(),
                                       tgt.vocab().content_hash(), stage);
    return training::train(std::move(init), training::TrainingData::fixed(data), dev, opt).checkpoint;
  };
  auto tune = [&](const Checkpoint& start, const corpus::ParallelCorpus& data,
                  std::optional<adapter::AdapterMatrix> a) {
    training::FinetuneOptions fo;
    fo.train = fine;
    return training::finetune(start, data, encoded("src-tgt-dev"), std::move(a), fo).checkpoint;
  };
  auto with_backtranslation = [&]() {
    const auto& synth = synthetic("backtranslated");
    const auto& real = encoded("src-tgt");
    const auto w_real = corpus::oversample_factor(real.size(), synth.size(), 1.0, config_.synthetic_ratio);
    auto mixed = synth;
    for (std::size_t k = 0; k < w_real; ++k) mixed.pairs.insert(mixed.pairs.end(), real.pairs.begin(), real.pairs.end());
    return mixed;
  };

  if (stage == "src-piv") return scratch(t.joint, t.joint, encoded("src-piv"), encoded("src-piv-dev"), pre);
  if (stage == "piv-tgt") return scratch(t.joint, t.target, encoded("piv-tgt"), encoded("piv-tgt-dev"), pre);
  if (stage == "piv-src") return scratch(t.joint, t.joint, encoded("piv-src"), encoded("piv-src-dev"), pre);
  if (stage == "stepwise" || stage.rfind("stepwise+", 0) == 0) {
    const std::string parent = stage == "stepwise" ? "src-piv" : stage.substr(9);
    return training::stepwise_stage2(checkpoint(parent), encoded("piv-tgt"), encoded("piv-tgt-dev"),
                                     t.target.vocab().size(), stage_seed, pre)
        .checkpoint;
  }
  if (stage.rfind("xenc-", 0) == 0) {
    const bool noisy = stage.find("-noisy-") != std::string::npos;
    const bool mono = stage.size() > 5 && stage.compare(stage.size() - 5, 5, "-mono") == 0;
    std::optional<corpus::NoiseConfig> noise;
    if (noisy) {
      noise = config_.noise;
      noise->seed = stage_seed;
    }
    return training::crosslingual_pretrain(sized(config_.model, t.joint, t.joint), encoded("src-piv"),
                                           encoded(mono ? "ae-mono" : "ae-pp"), noise, t.joint.vocab(),
                                           encoded("src-piv-dev"), stage_seed, pre, config_.autoencoding_share)
        .checkpoint;
  }
  if (stage == "m2m" || stage == "m2m-zeroshot" || stage == "m2o") {
    std::vector<corpus::TextCorpus> dirs{w.src_piv, w.src_piv.swapped(), w.piv_tgt, w.piv_tgt.swapped()};
    for (std::size_t k = 0; k < config_.multilingual_src_tgt_weight; ++k) {
      dirs.push_back(w.src_tgt);
      dirs.push_back(w.src_tgt.swapped());
    }
    std::vector<std::pair<std::string, std::string>> exclude;
    if (stage == "m2m-zeroshot") exclude.emplace_back(spec.src_lang, spec.tgt_lang);
    const auto kind = stage == "m2o" ? training::MultilingualKind::many2one : training::MultilingualKind::many2many;
    const auto mixed = training::multilingual_corpus(dirs, t.multi, kind, spec.tgt_lang, exclude);
    return training::train_multilingual(sized(config_.model, t.multi, t.multi), mixed, encoded("multi-dev"),
                                        stage_seed, multi)
        .checkpoint;
  }
  if (stage == "plain-init") {
    return training::plain_transfer_init(checkpoint("src-piv"), checkpoint("piv-tgt"), "plain", joint_hash, tgt_hash);
  }
  if (stage == "plain-init+adapter") {
    auto c = checkpoint("plain-init").clone();
    c.adapter = adapter("src-piv", config_.pooling);
    return c;
  }
  if (stage == "ft-direct") return scratch(t.joint, t.target, encoded("src-tgt"), encoded("src-tgt-dev"), fine);
  if (stage == "ft-plain") return tune(checkpoint("plain-init"), encoded("src-tgt"), std::nullopt);
  if (stage == "ft-plain+adapter") {
    return tune(checkpoint("plain-init"), encoded("src-tgt"), adapter("src-piv", config_.pooling));
  }
  if (stage == "ft-plain+adapter-max") {
    return tune(checkpoint("plain-init"), encoded("src-tgt"), adapter("src-piv", adapter::Pooling::max));
  }
  if (stage == "ft-xenc" || stage == "ft-xenc+adapter") {
    const auto start =
        training::plain_transfer_init(checkpoint("xenc-noisy-pp"), checkpoint("piv-tgt"), "xenc", joint_hash, tgt_hash);
    std::optional<adapter::AdapterMatrix> a;
    if (stage == "ft-xenc+adapter") a = adapter("xenc-noisy-pp", config_.pooling);
    return tune(start, encoded("src-tgt"), std::move(a));
  }
  if (stage == "ft-stepwise") return tune(checkpoint("stepwise"), encoded("src-tgt"), std::nullopt);
  if (stage == "ft-stepwise+xenc") return tune(checkpoint("stepwise+xenc-noisy-pp"), encoded("src-tgt"), std::nullopt);
  if (stage == "ft-distill-scratch") {
    return scratch(t.joint, t.target, synthetic("distilled"), encoded("src-tgt-dev"), fine);
  }
  if (stage == "ft-distill-stepwise+xenc") {
    return tune(checkpoint("stepwise+xenc-noisy-pp"), synthetic("distilled"), std::nullopt);
  }
  if (stage == "ft-backtranslate-direct") {
    return scratch(t.joint, t.target, with_backtranslation(), encoded("src-tgt-dev"), fine);
  }
  if (stage == "ft-backtranslate-plain") return tune(checkpoint("plain-init"), with_backtranslation(), std::nullopt);
  throw UsageError("unknown stage '" + stage + "'");
}

std::vector<std::string> Lab::recipe_stages(const std::string& recipe) const {
  const auto& spec = recipe_spec(recipe);
  std::vector<std::string> out;
  std::set<std::string> seen;
  if (spec.pivot) {
    topo("src-piv", config_.pooling, out, seen);
    topo("piv-tgt", config_.pooling, out, seen);
  } else {
    topo(spec.decode_stage, config_.pooling, out, seen);
  }
  return out;
}

RecipeResult Lab::run(const std::string& recipe) {
  const auto& spec = recipe_spec(recipe);
  const auto& t = tokenizers();
  const auto stages = recipe_stages(recipe);

  std::string ckpt_hash;
  if (spec.pivot) {
    Fnv1a h;
    h.update(training::checkpoint_hash(checkpoint("src-piv")));
    h.update(training::checkpoint_hash(checkpoint("piv-tgt")));
    ckpt_hash = h.hex();
  } else {
    ckpt_hash = training::checkpoint_hash(checkpoint(spec.decode_stage));
  }

  auto hypotheses = [&](bool dev) {
    const std::string split = dev ? "dev" : "test";
    const std::string stage = "decode:" + recipe + ":" + split;
    const std::string rel = "hyps/" + recipe + "." + split + "." + config_.world.tgt_lang;
    const auto path = manifest_.run_dir() / rel;
    if (reusable({rel}, stage)) return corpus::read_lines(path);
    say(options_.log, "[seed " + std::to_string(seed_) + "] decoding " + recipe + " " + split);
    Timer timer;
    const auto sources = test_sources(spec.multilingual, dev);
    const auto out = spec.pivot
                         ? decode::pivot_translate(checkpoint("src-piv"), checkpoint("piv-tgt"), sources, config_.beam)
                         : decode::beam_search(checkpoint(spec.decode_stage), sources, config_.beam);
    const auto& detok = spec.multilingual ? t.multi : t.target;
    std::vector<std::string> hyps;
    hyps.reserve(out.size());
    for (const auto& h : out) hyps.push_back(detok.decode(h.tokens));
    fs::create_directories(path.parent_path());
    corpus::write_lines(hyps, path);
    manifest_.record(rel, "hypotheses", stage);
    manifest_.set_stage_seconds(stage, timer.seconds());
    impl_->fresh.insert(stage);
    return hyps;
  };

  RecipeResult r;
  r.recipe = recipe;
  r.seed = seed_;
  r.dev = decode::bleu(hypotheses(true), test_references(true));
  r.test = decode::bleu(hypotheses(false), test_references(false));
  r.checkpoint_hash = ckpt_hash;
  r.stages = stages;
  for (const auto& s : stages) r.seconds += manifest_.stage_seconds(s).value_or(0.0);
  for (const char* split : {"dev", "test"}) {
    r.seconds += manifest_.stage_seconds("decode:" + recipe + ":" + split).value_or(0.0);
  }
  manifest_.results()[recipe] = r;
  manifest_.save();
  return r;
}

// ---------------------------------------------------------------- grids

std::vector<GridRow> aggregate(const std::vector<std::string>& recipes,
                               const std::vector<std::vector<RecipeResult>>& per_seed) {
  std::vector<GridRow> rows;
  for (const auto& name : recipes) {
    GridRow row;
    row.recipe = name;
    for (const auto& seed_results : per_seed) {
      for (const auto& r : seed_results) {
        if (r.recipe != name) continue;
        row.scores.push_back(r.test.score);
        row.max_seconds = std::max(row.max_seconds, r.seconds);
      }
    }
    if (row.scores.empty()) continue;
    const double n = static_cast<double>(row.scores.size());
    for (double s : row.scores) row.mean += s / n;
    if (row.scores.size() > 1) {
      double ss = 0.0;
      for (double s : row.scores) ss += (s - row.mean) * (s - row.mean);
      row.sd = std::sqrt(ss / (n - 1.0));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_grid(const std::vector<GridRow>& rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.recipe.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %14s  %s  %s\n", static_cast<int>(width), "recipe", "BLEU", "per-seed",
                "max_seconds");
  out << buf;
  for (const auto& r : rows) {
    std::string seeds;
    for (double s : r.scores) {
      char b[16];
      std::snprintf(b, sizeof b, "%s%.2f", seeds.empty() ? "" : ",", s);
      seeds += b;
    }
    std::snprintf(buf, sizeof buf, "%-*s  %6.2f +- %5.2f  %s  %.1f\n", static_cast<int>(width), r.recipe.c_str(),
                  r.mean, r.sd, seeds.c_str(), r.max_seconds);
    out << buf;
  }
  return out.str();
}

}  // namespace pivotmt::cli
