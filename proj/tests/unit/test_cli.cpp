#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pivotmt/cli/experiment.hpp"
#include "pivotmt/cli/manifest.hpp"
#include "pivotmt/error.hpp"

using namespace pivotmt;
using namespace pivotmt::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pivotmt_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

// Small enough that every stage of a recipe trains in well under a second.
ExperimentConfig tiny_config() {
  auto c = ExperimentConfig::desk();
  c.world.base_vocab_size = 12;
  c.world.max_length = 5;
  c.world.src_piv_pairs = 120;
  c.world.piv_tgt_pairs = 120;
  c.world.src_tgt_pairs = 20;
  c.world.mono_piv_lines = 40;
  c.world.dev_pairs = 8;
  c.world.test_pairs = 10;
  c.world.adapter_pairs = 30;
  c.joint_merges = c.target_merges = c.multi_merges = 10;
  c.model.layers = 1;
  c.model.model_dim = 16;
  c.model.ff_dim = 32;
  c.model.heads = 2;
  for (auto* b : {&c.pretrain, &c.finetune, &c.multilingual}) {
    b->max_updates = 3;
    b->max_tokens = 256;
  }
  c.synthetic_pairs = 20;
  c.beam.beam_size = 2;
  return c;
}

}  // namespace

TEST_CASE("experiment config survives a JSON round trip") {
  auto c = ExperimentConfig::desk();
  c.pooling = adapter::Pooling::max;
  c.multilingual.max_updates = 77;
  c.noise.p_del = 0.2;
  const nlohmann::json j = c;
  const auto back = parse_experiment_config(j.dump());
  CHECK(nlohmann::json(back) == j);
  CHECK(back.pooling == adapter::Pooling::max);
  CHECK(back.multilingual.max_updates == 77);
}

TEST_CASE("experiment config rejects malformed input") {
  CHECK_THROWS_AS(parse_experiment_config("{not json"), ConfigError);
  auto j = nlohmann::json(ExperimentConfig::desk());
  j["model"]["heads"] = 3;  // 64 is not divisible by 3
  CHECK_THROWS_AS(parse_experiment_config(j.dump()), ConfigError);
}

TEST_CASE("grids name only known recipes") {
  const auto& names = recipe_names();
  const std::set<std::string> known(names.begin(), names.end());
  for (const char* g : {"transfer", "pooling", "autoencoding", "zeroshot", "synthetic", "all"}) {
    const auto rs = grid_recipes(g);
    CHECK_FALSE(rs.empty());
    CHECK(std::set<std::string>(rs.begin(), rs.end()).size() == rs.size());
    for (const auto& r : rs) CHECK(known.count(r) == 1);
  }
  CHECK(grid_recipes("all").size() == names.size());
  CHECK_THROWS_AS(grid_recipes("nonexistent"), UsageError);
}

TEST_CASE("manifest detects altered and missing artifacts") {
  const auto dir = scratch_dir("manifest");
  {
    Manifest m(dir);
    std::ofstream(dir / "a.txt") << "alpha\n";
    m.record("a.txt", "data", "world");
    m.set_stage_seconds("world", 1.5);
    m.results()["x"] = 1;
    m.save();
    CHECK(m.intact({"a.txt"}));
    CHECK_FALSE(m.intact({"b.txt"}));
  }
  Manifest reloaded(dir);
  CHECK(reloaded.intact({"a.txt"}));
  CHECK(reloaded.stage_seconds("world").value() == 1.5);
  CHECK(reloaded.results().at("x") == 1);
  CHECK_NOTHROW(reloaded.verify());

  std::ofstream(dir / "a.txt") << "beta\n";
  CHECK_FALSE(reloaded.intact({"a.txt"}));
  CHECK_THROWS_AS(reloaded.verify(), IoError);
  fs::remove(dir / "a.txt");
  CHECK_THROWS_AS(reloaded.verify(), IoError);
  fs::remove_all(dir);
}

TEST_CASE("recipe stages list dependencies before dependents") {
  const auto dir = scratch_dir("stages");
  Lab lab(tiny_config(), 1, dir);
  for (const auto& r : recipe_names()) {
    const auto stages = lab.recipe_stages(r);
    CHECK_FALSE(stages.empty());
    CHECK(std::set<std::string>(stages.begin(), stages.end()).size() == stages.size());
  }
  const auto s = lab.recipe_stages("zeroshot-plain");
  const auto at = [&](const std::string& name) {
    return std::find(s.begin(), s.end(), name) - s.begin();
  };
  CHECK(at("src-piv") < at("plain-init"));
  CHECK(at("piv-tgt") < at("plain-init"));
  CHECK(s.back() == "plain-init");
  CHECK_THROWS_AS(lab.recipe_stages("no-such-recipe"), UsageError);
  fs::remove_all(dir);
}

TEST_CASE("lab runs are cached and reproducible") {
  const auto a = scratch_dir("lab_a");
  const auto b = scratch_dir("lab_b");
  RecipeResult first, cached, fresh;
  {
    Lab lab(tiny_config(), 3, a);
    first = lab.run("plain+adapter");
    CHECK(first.test.score >= 0.0);
    CHECK(first.test.score <= 100.0);
    CHECK_FALSE(first.checkpoint_hash.empty());
  }
  {
    Lab lab(tiny_config(), 3, a);
    cached = lab.run("plain+adapter");
    CHECK_NOTHROW(lab.manifest().verify());
  }
  {
    Lab lab(tiny_config(), 3, b);
    fresh = lab.run("plain+adapter");
  }
  CHECK(cached.checkpoint_hash == first.checkpoint_hash);
  CHECK(fresh.checkpoint_hash == first.checkpoint_hash);
  CHECK(fresh.test.score == first.test.score);
  CHECK(fresh.dev.score == first.dev.score);

  auto other = tiny_config();
  other.finetune.max_updates = 4;
  CHECK_THROWS_AS(Lab(other, 3, a), ConfigError);
  CHECK_NOTHROW(Lab(other, 3, a, LabOptions{true, nullptr}));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("aggregate reports mean and sample deviation") {
  std::vector<std::vector<RecipeResult>> per_seed(3);
  const double scores[] = {10.0, 12.0, 14.0};
  for (std::size_t k = 0; k < 3; ++k) {
    RecipeResult r;
    r.recipe = "direct";
    r.test.score = scores[k];
    r.seconds = 5.0 * static_cast<double>(k + 1);
    per_seed[k].push_back(r);
  }
  const auto rows = aggregate({"direct"}, per_seed);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].mean == doctest::Approx(12.0));
  CHECK(rows[0].sd == doctest::Approx(2.0));
  CHECK(rows[0].max_seconds == doctest::Approx(15.0));
  CHECK(format_grid(rows).find("direct") != std::string::npos);
}
