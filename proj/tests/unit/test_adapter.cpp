#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "../support/gradcheck.hpp"
#include "../support/orthogonal.hpp"
#include "pivotmt/adapter/adapter.hpp"
#include "pivotmt/error.hpp"

using namespace pivotmt;
using namespace pivotmt::adapter;
using tensor::Tensor;

namespace {

PooledPairs random_pairs(std::size_t d, std::size_t n, Rng& rng) {
  PooledPairs pp;
  pp.s = testing::random_tensor({d, n}, rng);
  pp.p = testing::random_tensor({d, n}, rng);
  return pp;
}

double residual_of(const Tensor<double>& q, const PooledPairs& pp) {
  return testing::frobenius_distance(testing::matmul(q, pp.s), pp.p);
}

model::ModelConfig tiny(std::size_t d) {
  model::ModelConfig c;
  c.layers = 1;
  c.model_dim = d;
  c.ff_dim = 2 * d;
  c.heads = 2;
  c.dropout = 0.0;
  c.src_vocab_size = 12;
  c.tgt_vocab_size = 12;
  return c;
}

}  // namespace

TEST_CASE("pooling modes") {
  const Tensor<double> a({2, 2}, {1, 2, 3, 4});
  const std::vector<std::uint8_t> none{0, 0};
  CHECK(pool_sentence(a, none, Pooling::average) == std::vector<double>{2, 3});
  const Tensor<double> b({2, 2}, {1, 4, 3, 2});
  CHECK(pool_sentence(b, none, Pooling::max) == std::vector<double>{3, 4});
  const Tensor<double> one({1, 3}, {5, -1, 2});
  const std::vector<std::uint8_t> single{0};
  CHECK(pool_sentence(one, single, Pooling::average) == std::vector<double>{5, -1, 2});
  CHECK(pool_sentence(one, single, Pooling::max) == std::vector<double>{5, -1, 2});
  const std::vector<std::uint8_t> second_pad{0, 1};
  CHECK(pool_sentence(a, second_pad, Pooling::average) == std::vector<double>{1, 2});
  const std::vector<std::uint8_t> all_pad{1, 1};
  CHECK_THROWS_AS(pool_sentence(a, all_pad, Pooling::max), ShapeError);
}

TEST_CASE("identical sides give the identity") {
  Rng rng(1);
  auto pp = random_pairs(6, 40, rng);
  pp.p = pp.s;
  const auto a = fit_adapter(pp);
  CHECK(testing::frobenius_distance(a.m, Tensor<double>::identity(6)) <= 1e-8);
}

TEST_CASE("exact recovery of a rotation") {
  Rng rng(2);
  const std::size_t d = 64, n = 500;
  const auto r = testing::givens_orthogonal(d, 400, rng);
  PooledPairs pp;
  pp.s = testing::random_tensor({d, n}, rng);
  pp.p = testing::matmul(r, pp.s);
  const auto a = fit_adapter(pp);
  CHECK(testing::frobenius_distance(a.m, r) <= 1e-6);
  CHECK(a.orthogonality_error <= 1e-8);
  CHECK(a.fit_residual <= 1e-6);
  CHECK(a.provenance == Provenance::procrustes);
}

TEST_CASE("Procrustes beats random orthogonal maps") {
  Rng rng(3);
  const auto pp = random_pairs(8, 30, rng);
  const auto a = fit_adapter(pp);
  CHECK(a.fit_residual == doctest::Approx(residual_of(a.m, pp)).epsilon(1e-12));
  std::size_t violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto q = testing::gaussian_orthogonal(8, rng);
    if (a.fit_residual > residual_of(q, pp) + 1e-9) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("fit is invariant to scale and column order") {
  Rng rng(4);
  auto pp = random_pairs(5, 20, rng);
  const auto base = fit_adapter(pp).m;
  auto scaled = pp;
  for (auto& v : scaled.s.data()) v *= 3.5;
  for (auto& v : scaled.p.data()) v *= 3.5;
  CHECK(testing::frobenius_distance(fit_adapter(scaled).m, base) <= 1e-10);
  auto permuted = pp;
  for (std::size_t c = 0; c < 20; ++c) {
    const std::size_t from = (c * 7 + 3) % 20;
    for (std::size_t r = 0; r < 5; ++r) {
      permuted.s.at(r, c) = pp.s.at(r, from);
      permuted.p.at(r, c) = pp.p.at(r, from);
    }
  }
  CHECK(testing::frobenius_distance(fit_adapter(permuted).m, base) <= 1e-10);
}

TEST_CASE("non-finite pooled values are rejected") {
  Rng rng(5);
  auto pp = random_pairs(3, 4, rng);
  pp.s.at(1, 2) = std::nan("");
  CHECK_THROWS_AS(fit_adapter(pp), NumericError);
}

TEST_CASE("baseline adapters") {
  const auto eye = make_baseline_adapter(Provenance::identity, 5, 1);
  CHECK(eye.m == Tensor<double>::identity(5));
  CHECK(eye.orthogonality_error == 0.0);
  const auto r1 = make_baseline_adapter(Provenance::random, 16, 7);
  const auto r2 = make_baseline_adapter(Provenance::random, 16, 7);
  CHECK(r1.m == r2.m);
  CHECK(r1.orthogonality_error > 1e-2);
  CHECK_FALSE(make_baseline_adapter(Provenance::random, 16, 8).m == r1.m);
}

TEST_CASE("adapter file round trip") {
  Rng rng(6);
  auto a = fit_adapter(random_pairs(4, 10, rng));
  a.pooling = Pooling::max;
  const auto path = std::filesystem::temp_directory_path() / "pivotmt_test_adapter.bin";
  save_adapter(a, path);
  const auto b = load_adapter(path);
  CHECK(b.m == a.m);
  CHECK(b.m32 == a.m32);
  CHECK(b.pooling == Pooling::max);
  CHECK(b.provenance == Provenance::procrustes);
  CHECK(b.orthogonality_error == a.orthogonality_error);
  CHECK(b.fit_residual == a.fit_residual);
  CHECK(std::filesystem::file_size(path) == 8 + 8 + 4 + 4 + 8 + 8 + 16 * 8);
  std::filesystem::resize_file(path, 40);
  CHECK_THROWS_AS(load_adapter(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("collect_pairs aligns columns") {
  auto ps_a = model::init_params<float>(tiny(8), 1);
  auto ps_b = model::init_params<float>(tiny(8), 2);
  model::Transformer<float> a(tiny(8), ps_a);
  model::Transformer<float> b(tiny(8), ps_b);
  const std::vector<std::vector<std::int32_t>> src{{4, 5, 6}, {7, 8}, {4, 5, 6}};
  const std::vector<std::vector<std::int32_t>> piv{{9, 10}, {11}, {9, 10}};
  const auto pp = collect_pairs(a, src, b, piv, Pooling::average, 2);
  CHECK(pp.s.shape() == tensor::Shape{8, 3});
  CHECK(pp.p.shape() == tensor::Shape{8, 3});
  for (std::size_t r = 0; r < 8; ++r) {
    CHECK(pp.s.at(r, 0) == doctest::Approx(pp.s.at(r, 2)).epsilon(1e-6));
    CHECK(pp.p.at(r, 0) == doctest::Approx(pp.p.at(r, 2)).epsilon(1e-6));
  }
  // Batching with padding matches encoding alone.
  const auto solo = collect_pairs(a, std::span(src).subspan(1, 1), b, std::span(piv).subspan(1, 1), Pooling::average);
  for (std::size_t r = 0; r < 8; ++r) CHECK(pp.s.at(r, 1) == doctest::Approx(solo.s.at(r, 0)).epsilon(1e-5));

  auto ps_c = model::init_params<float>(tiny(6), 3);
  model::Transformer<float> c(tiny(6), ps_c);
  CHECK_THROWS_AS(collect_pairs(a, src, c, piv, Pooling::max), ShapeError);
}

TEST_CASE("fit subset is seeded") {
  const auto a = fit_subset(100, 10, 4);
  CHECK(a == fit_subset(100, 10, 4));
  CHECK(a.size() == 10);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(fit_subset(5, 10, 4).size() == 5);
}

TEST_CASE("cosine alignment separates aligned from shuffled pairs") {
  Rng rng(9);
  PooledPairs pp = random_pairs(6, 50, rng);
  pp.p = pp.s;
  const auto r = cosine_alignment(pp, 1);
  CHECK(r.aligned == doctest::Approx(1.0));
  CHECK(r.shuffled < 0.5);
}
