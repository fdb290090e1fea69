#include <doctest.h>

#include <cmath>
#include <map>

#include "../support/gradcheck.hpp"
#include "pivotmt/tensor/adam.hpp"
#include "pivotmt/tensor/autodiff.hpp"
#include "pivotmt/tensor/svd.hpp"

using namespace pivotmt;
using namespace pivotmt::tensor;

namespace {

Var<double> vec(std::vector<double> v, bool grad = true) {
  const std::size_t n = v.size();
  return Var<double>(Tensor<double>({n}, std::move(v)), grad);
}

Tensor<double> matmul_plain(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  auto y = softmax(vec({0.0, 0.0}, false));
  CHECK(y.value()[0] == doctest::Approx(0.5));
  CHECK(y.value()[1] == doctest::Approx(0.5));
}

TEST_CASE("identity matmul returns the operand") {
  Rng rng(3);
  auto a = testing::random_tensor({3, 3}, rng);
  auto out = matmul(Var<double>::constant(Tensor<double>::identity(3)), Var<double>::constant(a));
  CHECK(out.value() == a);
}

TEST_CASE("cross entropy of [2,0] against class 0") {
  Tensor<double> logits({1, 2}, {2.0, 0.0});
  std::vector<std::int32_t> target{0};
  auto loss = cross_entropy(Var<double>::constant(logits), std::span<const std::int32_t>(target));
  CHECK(loss.value()[0] == doctest::Approx(-std::log(std::exp(2.0) / (std::exp(2.0) + 1.0))).epsilon(1e-12));
  CHECK(loss.value()[0] == doctest::Approx(0.126928).epsilon(1e-5));
}

TEST_CASE("shape mismatch names the op and both shapes") {
  auto a = Var<double>::constant(Tensor<double>({2, 3}));
  auto b = Var<double>::constant(Tensor<double>({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Var<double>::constant(Tensor<double>({3, 2}))), ShapeError);
}

TEST_CASE("non-finite output is rejected") {
  auto x = vec({1e308, 1e308}, false);
  CHECK_THROWS_AS(scale(x, 10.0), NumericError);
}

TEST_CASE("gradient of sum(x*x)") {
  auto x = vec({1, 2, 3});
  backward(sum(mul(x, x)));
  auto g = x.grad();
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);
}

TEST_CASE("detached parameter keeps zero gradient") {
  auto x = vec({1, 2, 3});
  auto y = vec({4, 5, 6});
  backward(sum(mul(y, y)));
  const auto g = x.grad();
  for (auto v : g.storage()) CHECK(v == 0.0);
}

TEST_CASE("backward errors") {
  auto x = vec({1, 2});
  CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  auto loss = sum(mul(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), StateError);
  CHECK_THROWS_AS(backward(sum(vec({1, 2}, false))), StateError);
}

TEST_CASE("gradients accumulate across backward calls on fresh graphs") {
  auto x = vec({1, 2});
  backward(sum(x));
  backward(sum(x));
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("every primitive matches central differences") {
  Rng rng(20240901);
  std::map<std::string, double> worst;
  for (int trial = 0; trial < 100; ++trial) {
    for (auto& c : testing::primitive_cases(rng)) {
      auto r = testing::gradcheck(c.inputs, c.loss);
      worst[c.name] = std::max(worst[c.name], r.max_rel_error);
    }
  }
  for (const auto& [name, err] : worst) {
    INFO(name);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("forward is deterministic") {
  Rng a(9), b(9);
  auto ca = testing::primitive_cases(a);
  auto cb = testing::primitive_cases(b);
  REQUIRE(ca.size() == cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) {
    CHECK(ca[i].loss(ca[i].inputs).value() == cb[i].loss(cb[i].inputs).value());
  }
}

TEST_CASE("bmm agrees with per-batch matmul") {
  Rng rng(5);
  auto a = testing::random_tensor({2, 3, 4}, rng);
  auto b = testing::random_tensor({2, 4, 2}, rng);
  auto out = bmm(Var<double>::constant(a), Var<double>::constant(b)).value();
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor<double> ai({3, 4}, std::vector<double>(a.storage().begin() + i * 12, a.storage().begin() + (i + 1) * 12));
    Tensor<double> bi({4, 2}, std::vector<double>(b.storage().begin() + i * 8, b.storage().begin() + (i + 1) * 8));
    auto ref = matmul_plain(ai, bi);
    for (std::size_t j = 0; j < 6; ++j) CHECK(out[i * 6 + j] == doctest::Approx(ref[j]).epsilon(1e-12));
  }
}

TEST_CASE("embedding rejects out-of-vocabulary ids") {
  auto table = Var<double>::constant(Tensor<double>({3, 2}));
  std::vector<std::int32_t> ids{0, 3};
  CHECK_THROWS_AS(embedding(table, std::span<const std::int32_t>(ids)), VocabError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor<float> p({3}, {0.5f, -1.0f, 2.0f});
  const auto before = p;
  Tensor<float> g({3});
  AdamState<float> st;
  st.learning_rate = 0.1;
  std::vector<AdamParam<float>> params{{&p, &g, false}};
  for (int i = 0; i < 10; ++i) adam_step<float>(params, st);
  CHECK(p == before);
  CHECK(st.step_count == 10);
}

TEST_CASE("adam: first step moves by learning rate") {
  Tensor<double> p({1}, {0.0});
  Tensor<double> g({1}, {1.0});
  AdamState<double> st;
  st.learning_rate = 0.1;
  std::vector<AdamParam<double>> params{{&p, &g, false}};
  adam_step<double>(params, st);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
}

TEST_CASE("adam: frozen parameter is bitwise unchanged and its moments untouched") {
  Tensor<float> frozen({2}, {0.25f, 0.75f});
  Tensor<float> live({2}, {0.25f, 0.75f});
  Tensor<float> g({2}, {3.0f, -2.0f});
  const auto before = frozen;
  AdamState<float> st;
  std::vector<AdamParam<float>> params{{&frozen, &g, true}, {&live, &g, false}};
  adam_step<float>(params, st);
  CHECK(frozen == before);
  CHECK(st.first_moment[0].empty());
  CHECK_FALSE(live == before);
}

TEST_CASE("adam: shape mismatch") {
  Tensor<float> p({2});
  Tensor<float> g({3});
  AdamState<float> st;
  std::vector<AdamParam<float>> params{{&p, &g, false}};
  CHECK_THROWS_AS(adam_step<float>(params, st), ShapeError);
}

namespace {

void check_svd(const Tensor<double>& a, double recon_tol) {
  auto r = svd(a);
  const std::size_t m = a.dim(0), n = a.dim(1), k = std::min(m, n);
  REQUIRE(r.u.shape() == Shape{m, k});
  REQUIRE(r.vt.shape() == Shape{k, n});
  for (std::size_t i = 0; i + 1 < k; ++i) CHECK(r.sigma[i] >= r.sigma[i + 1]);
  for (auto s : r.sigma) CHECK(s >= 0.0);
  double orth = 0, orth_v = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double du = 0, dv = 0;
      for (std::size_t t = 0; t < m; ++t) du += r.u[t * k + i] * r.u[t * k + j];
      for (std::size_t t = 0; t < n; ++t) dv += r.vt[i * n + t] * r.vt[j * n + t];
      orth = std::max(orth, std::abs(du - (i == j ? 1.0 : 0.0)));
      orth_v = std::max(orth_v, std::abs(dv - (i == j ? 1.0 : 0.0)));
    }
  CHECK(orth <= 1e-8);
  CHECK(orth_v <= 1e-8);
  double resid = 0, norm = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0;
      for (std::size_t t = 0; t < k; ++t) v += r.u[i * k + t] * r.sigma[t] * r.vt[t * n + j];
      resid += (v - a[i * n + j]) * (v - a[i * n + j]);
      norm += a[i * n + j] * a[i * n + j];
    }
  CHECK(std::sqrt(resid) <= recon_tol * std::max(1.0, std::sqrt(norm)));
}

}  // namespace

TEST_CASE("svd of diag(2,1)") {
  auto r = svd(Tensor<double>({2, 2}, {2, 0, 0, 1}));
  CHECK(r.sigma[0] == doctest::Approx(2.0));
  CHECK(r.sigma[1] == doctest::Approx(1.0));
  CHECK(std::abs(r.u[0]) == doctest::Approx(1.0));
  CHECK(std::abs(r.u[3]) == doctest::Approx(1.0));
}

TEST_CASE("svd of the swap matrix has unit singular values") {
  auto r = svd(Tensor<double>({2, 2}, {0, 1, 1, 0}));
  CHECK(r.sigma[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.sigma[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("svd reconstruction and orthonormality") {
  Rng rng(11);
  check_svd(testing::random_tensor({8, 5}, rng), 1e-10);
  check_svd(testing::random_tensor({5, 8}, rng), 1e-10);
  check_svd(testing::random_tensor({64, 64}, rng), 1e-8);
  // Rank-deficient: two identical columns and a zero column.
  Tensor<double> a({4, 3}, {1, 1, 0, 2, 2, 0, 3, 3, 0, 4, 4, 0});
  check_svd(a, 1e-8);
}

TEST_CASE("svd rejects non-finite input") {
  CHECK_THROWS_AS(svd(Tensor<double>({1, 2}, {1.0, NAN})), NumericError);
}
