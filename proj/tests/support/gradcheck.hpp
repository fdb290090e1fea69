#pragma once

// Central finite-difference oracle for reverse-mode gradients. Test-only:
// it only ever calls forward ops and never reads the backward closures.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pivotmt/rng.hpp"
#include "pivotmt/tensor/autodiff.hpp"

namespace pivotmt::testing {

using tensor::Shape;
using tensor::Tensor;
using tensor::Var;
using Loss = std::function<Var<double>(const std::vector<Var<double>>&)>;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Projects a tensor-valued output onto a fixed random direction so every
// output element carries a distinct upstream gradient.
inline Var<double> project(const Var<double>& out, std::uint64_t seed) {
  Rng rng(seed);
  auto w = Var<double>::constant(random_tensor(out.shape(), rng));
  return tensor::sum(tensor::mul(out, w));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Norm-wise relative error per input: max|analytic - numeric| divided by
// max(max|numeric|, max|analytic|, floor). The floor keeps an all-zero
// gradient from turning difference-quotient noise into a huge ratio. The
// worst input is reported. With max_per_input > 0 only that many seeded
// random entries of each input are perturbed.
inline GradCheckResult gradcheck(std::vector<Var<double>> inputs, const Loss& loss_fn,
                                 double h = 1e-5, double floor = 1e-4, std::size_t max_per_input = 0,
                                 std::uint64_t sample_seed = 1) {
  Rng sampler(sample_seed);
  for (auto& in : inputs) in.zero_grad();
  auto loss = loss_fn(inputs);
  tensor::backward(loss);
  GradCheckResult result;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    const auto analytic = in.grad();
    double max_diff = 0.0, scale = floor;
    auto& values = in.mutable_value().storage();
    std::vector<std::size_t> picks(values.size());
    for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
    if (max_per_input > 0 && picks.size() > max_per_input) {
      sampler.shuffle(picks);
      picks.resize(max_per_input);
    }
    for (const std::size_t i : picks) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn(inputs).value()[0];
      values[i] = saved - h;
      const double down = loss_fn(inputs).value()[0];
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
      ++result.checked;
    }
    result.max_rel_error = std::max(result.max_rel_error, max_diff / scale);
  }
  return result;
}

struct PrimitiveCase {
  std::string name;
  std::vector<Var<double>> inputs;
  Loss loss;
};

// One randomized instance of every primitive, drawn from rng.
inline std::vector<PrimitiveCase> primitive_cases(Rng& rng) {
  using namespace tensor;
  auto dim = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  };
  auto param = [&](Shape s) { return Var<double>::parameter(random_tensor(std::move(s), rng)); };
  const std::uint64_t proj_seed = rng.next_u64();
  std::vector<PrimitiveCase> cases;

  {
    const auto m = dim(1, 5), k = dim(1, 5), n = dim(1, 5);
    cases.push_back({"matmul", {param({m, k}), param({k, n})},
                     [=](const auto& in) { return project(matmul(in[0], in[1]), proj_seed); }});
  }
  {
    const auto b = dim(1, 3), m = dim(1, 4), k = dim(1, 4), n = dim(1, 4);
    const bool tb = rng.bernoulli(0.5);
    cases.push_back({"bmm", {param({b, m, k}), tb ? param({b, n, k}) : param({b, k, n})},
                     [=](const auto& in) { return project(bmm(in[0], in[1], tb), proj_seed); }});
  }
  {
    const Shape s{dim(1, 4), dim(1, 4)};
    cases.push_back({"add", {param(s), param(s)},
                     [=](const auto& in) { return project(add(in[0], in[1]), proj_seed); }});
    cases.push_back({"sub", {param(s), param(s)},
                     [=](const auto& in) { return project(sub(in[0], in[1]), proj_seed); }});
    cases.push_back({"mul", {param(s), param(s)},
                     [=](const auto& in) { return project(mul(in[0], in[1]), proj_seed); }});
    const double f = rng.uniform(-2.0, 2.0);
    cases.push_back({"scale", {param(s)},
                     [=](const auto& in) { return project(scale(in[0], f), proj_seed); }});
  }
  {
    const auto r = dim(1, 4), d = dim(1, 5);
    cases.push_back({"add_bias", {param({r, d}), param({d})},
                     [=](const auto& in) { return project(add_bias(in[0], in[1]), proj_seed); }});
  }
  {
    // Keep inputs away from the kink so the difference quotient is valid.
    auto x = random_tensor({dim(1, 4), dim(1, 4)}, rng);
    for (auto& v : x.storage()) v = (v < 0 ? -0.05 : 0.05) + v;
    cases.push_back({"relu", {Var<double>::parameter(std::move(x))},
                     [=](const auto& in) { return project(relu(in[0]), proj_seed); }});
  }
  {
    const Shape s{dim(1, 3), dim(1, 3), dim(2, 5)};
    cases.push_back({"softmax", {param(s)},
                     [=](const auto& in) { return project(softmax(in[0]), proj_seed); }});
  }
  {
    const Shape s{dim(1, 4), dim(2, 5)};
    std::vector<std::uint8_t> mask(shape_size(s));
    for (auto& m : mask) m = rng.bernoulli(0.3) ? 1 : 0;
    cases.push_back({"masked_fill", {param(s)}, [=](const auto& in) {
                       return project(softmax(masked_fill(in[0], std::span<const std::uint8_t>(mask), -30.0)),
                                      proj_seed);
                     }});
  }
  {
    const auto r = dim(1, 4), d = dim(2, 6);
    cases.push_back({"layer_norm", {param({r, d}), param({d}), param({d})}, [=](const auto& in) {
                       return project(layer_norm(in[0], in[1], in[2]), proj_seed);
                     }});
  }
  {
    const auto v = dim(2, 6), d = dim(1, 4), n = dim(1, 6);
    std::vector<std::int32_t> ids(n);
    for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(v));
    cases.push_back({"embedding", {param({v, d})}, [=](const auto& in) {
                       return project(embedding(in[0], std::span<const std::int32_t>(ids)), proj_seed);
                     }});
  }
  {
    const auto d = dim(1, 4);
    cases.push_back({"concat", {param({dim(1, 3), d}), param({dim(1, 3), d})},
                     [=](const auto& in) { return project(concat(std::vector{in[0], in[1]}), proj_seed); }});
  }
  {
    const auto a = dim(1, 3), b = dim(1, 4);
    cases.push_back({"reshape", {param({a, b})},
                     [=](const auto& in) { return project(reshape(in[0], Shape{b, a}), proj_seed); }});
  }
  {
    const Shape s{dim(1, 3), dim(1, 3), dim(1, 3), dim(1, 3)};
    cases.push_back({"permute", {param(s)}, [=](const auto& in) {
                       return project(permute(in[0], {0, 2, 1, 3}), proj_seed);
                     }});
  }
  {
    const auto n = dim(1, 5), v = dim(2, 6);
    std::vector<std::int32_t> targets(n);
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(v));
    if (n > 1) targets[rng.below(n)] = -1;
    const double smoothing = rng.bernoulli(0.5) ? 0.1 : 0.0;
    cases.push_back({"cross_entropy", {param({n, v})}, [=](const auto& in) {
                       return cross_entropy(in[0], std::span<const std::int32_t>(targets), -1, smoothing);
                     }});
  }
  {
    const Shape s{dim(1, 4), dim(1, 4)};
    cases.push_back({"sum", {param(s)}, [](const auto& in) { return sum(in[0]); }});
    cases.push_back({"mean", {param(s)}, [](const auto& in) { return mean(in[0]); }});
  }
  return cases;
}

}  // namespace pivotmt::testing
