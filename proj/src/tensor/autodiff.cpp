#include "pivotmt/tensor/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>
#include <unordered_set>

namespace pivotmt::tensor {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
CMapR<T> cmat(const Tensor<T>& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return CMapR<T>(t.storage().data() + offset, static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}

template <typename T>
MapR<T> mat(Tensor<T>& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MapR<T>(t.storage().data() + offset, static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

[[noreturn]] void rank_fail(const char* op, const Shape& a, const char* expected) {
  throw ShapeError(std::string(op) + ": expected " + expected + ", got " + shape_str(a));
}

template <typename T>
using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
VecMap<T> vec(Tensor<T>& t) {
  return VecMap<T>(t.storage().data(), static_cast<Eigen::Index>(t.size()));
}

template <typename T>
CVecMap<T> cvec(const Tensor<T>& t) {
  return CVecMap<T>(t.storage().data(), static_cast<Eigen::Index>(t.size()));
}

// Exponent-bit test; branch-free so it vectorizes.
template <typename T>
bool all_finite_fast(const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exp_mask = static_cast<Bits>(sizeof(T) == 4 ? 0x7F800000ull : 0x7FF0000000000000ull);
  const auto* bits = reinterpret_cast<const Bits*>(t.storage().data());
  Bits bad = 0;
  for (std::size_t i = 0; i < t.size(); ++i) bad |= static_cast<Bits>((bits[i] & exp_mask) == exp_mask);
  return bad == 0;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!all_finite_fast(t)) throw NumericError(std::string(op) + ": non-finite output");
}

// grad(target) += g, reusing g's storage when target has no gradient yet.
template <typename T>
void accumulate(Node<T>& target, const Tensor<T>& g) {
  if (target.grad.size() != target.value.size()) {
    target.grad = g.reshaped(target.value.shape());
  } else {
    vec(target.grad) += cvec(g);
  }
}

// Builds the output handle. The closure is attached only when some parent
// participates in differentiation.
template <typename T>
Var<T> make_result(const char* op, Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  if (grad_enabled()) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
Node<T>* grad_target(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p.get() : nullptr;
}

}  // namespace

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined()) throw StateError("backward: undefined loss");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (root->released) {
    throw StateError("backward: graph already consumed; double backward is not supported");
  }
  if (!root->requires_grad) {
    throw StateError("backward: loss is not on the gradient tape");
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        if (p->released) {
          throw StateError("backward: graph already consumed; double backward is not supported");
        }
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward) {
      node->grad_buffer();
      node->backward(*node);
    }
  }
  for (Node<T>* node : order) {
    if (!node->is_leaf()) {
      node->backward = nullptr;
      node->parents.clear();
      node->grad = Tensor<T>();
      node->released = true;
    }
  }
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) shape_fail("matmul", as, bs);
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor<T> out({m, n});
  mat(out, m, n).noalias() = cmat(a.value(), m, k) * cmat(b.value(), k, n);
  return make_result<T>("matmul", std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const auto g = cmat(self.grad, m, n);
    if (auto* pa = grad_target(self, 0)) {
      mat(pa->grad_buffer(), m, k).noalias() += g * cmat(self.parents[1]->value, k, n).transpose();
    }
    if (auto* pb = grad_target(self, 1)) {
      mat(pb->grad_buffer(), k, n).noalias() += cmat(self.parents[0]->value, m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0]) shape_fail("bmm", as, bs);
  const std::size_t batch = as[0], m = as[1], k = as[2];
  const std::size_t n = transpose_b ? bs[1] : bs[2];
  if ((transpose_b ? bs[2] : bs[1]) != k) shape_fail("bmm", as, bs);
  Tensor<T> out({batch, m, n});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < batch; ++i) {
    auto o = mat(out, m, n, i * m * n);
    const auto x = cmat(av, m, k, i * m * k);
    if (transpose_b) {
      o.noalias() = x * cmat(bv, n, k, i * n * k).transpose();
    } else {
      o.noalias() = x * cmat(bv, k, n, i * k * n);
    }
  }
  return make_result<T>("bmm", std::move(out), {a, b}, [batch, m, k, n, transpose_b](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    auto* pa = grad_target(self, 0);
    auto* pb = grad_target(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto g = cmat(self.grad, m, n, i * m * n);
      if (pa) {
        auto ga = mat(pa->grad_buffer(), m, k, i * m * k);
        if (transpose_b) {
          ga.noalias() += g * cmat(bv, n, k, i * n * k);
        } else {
          ga.noalias() += g * cmat(bv, k, n, i * k * n).transpose();
        }
      }
      if (pb) {
        const auto x = cmat(av, m, k, i * m * k);
        if (transpose_b) {
          mat(pb->grad_buffer(), n, k, i * n * k).noalias() += g.transpose() * x;
        } else {
          mat(pb->grad_buffer(), k, n, i * k * n).noalias() += x.transpose() * g;
        }
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  vec(out) += cvec(b.value());
  return make_result<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* t = grad_target(self, p)) accumulate(*t, self.grad);
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  vec(out) -= cvec(b.value());
  return make_result<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* t = grad_target(self, 0)) accumulate(*t, self.grad);
    if (auto* t = grad_target(self, 1)) vec(t->grad_buffer()) -= cvec(self.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  vec(out) *= cvec(b.value());
  return make_result<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* t = grad_target(self, 0)) vec(t->grad_buffer()) += cvec(self.grad) * cvec(bv);
    if (auto* t = grad_target(self, 1)) vec(t->grad_buffer()) += cvec(self.grad) * cvec(av);
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  vec(out) *= factor;
  return make_result<T>("scale", std::move(out), {x}, [factor](Node<T>& self) {
    vec(self.parents[0]->grad_buffer()) += cvec(self.grad) * factor;
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  const auto& xs = x.shape();
  const auto& bs = bias.shape();
  if (xs.empty() || bs.size() != 1 || xs.back() != bs[0]) shape_fail("add_bias", xs, bs);
  const std::size_t d = bs[0];
  const std::size_t rows = x.size() / d;
  Tensor<T> out = x.value();
  mat(out, rows, d).rowwise() += cmat(bias.value(), 1, d).row(0);
  return make_result<T>("add_bias", std::move(out), {x, bias}, [rows, d](Node<T>& self) {
    if (auto* t = grad_target(self, 1)) {
      mat(t->grad_buffer(), 1, d).row(0) += cmat(self.grad, rows, d).colwise().sum();
    }
    if (auto* t = grad_target(self, 0)) accumulate(*t, self.grad);
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  vec(out) = vec(out).max(T(0));
  return make_result<T>("relu", std::move(out), {x}, [](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    vec(self.parents[0]->grad_buffer()) += (cvec(xv) > T(0)).select(cvec(self.grad), T(0));
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const auto& xs = x.shape();
  if (xs.empty()) rank_fail("softmax", xs, "rank >= 1");
  const std::size_t d = xs.back();
  const std::size_t rows = d ? x.size() / d : 0;
  Tensor<T> out = x.value();
  if (rows > 0) {
    auto m = mat(out, rows, d).array();
    m.colwise() -= m.rowwise().maxCoeff();
    m = m.exp();
    m.colwise() /= m.rowwise().sum();
  }
  return make_result<T>("softmax", std::move(out), {x}, [rows, d](Node<T>& self) {
    if (rows == 0) return;
    const auto y = cmat(self.value, rows, d).array();
    const auto gy = cmat(self.grad, rows, d).array();
    const Eigen::Array<T, Eigen::Dynamic, 1> dot = (gy * y).rowwise().sum();
    auto g = mat(self.parents[0]->grad_buffer(), rows, d).array();
    g += y * (gy.colwise() - dot);
  });
}

template <typename T>
Var<T> masked_fill(const Var<T>& x, std::span<const std::uint8_t> mask, T fill) {
  if (mask.size() != x.size()) {
    shape_fail("masked_fill", x.shape(), Shape{mask.size()});
  }
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = fill;
  }
  std::vector<std::uint8_t> saved(mask.begin(), mask.end());
  return make_result<T>("masked_fill", std::move(out), {x},
                        [saved = std::move(saved)](Node<T>& self) {
                          T* g = self.parents[0]->grad_buffer().storage().data();
                          const T* gy = self.grad.storage().data();
                          for (std::size_t i = 0; i < saved.size(); ++i) g[i] += saved[i] ? T(0) : gy[i];
                        });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto& xs = x.shape();
  if (xs.empty()) rank_fail("layer_norm", xs, "rank >= 1");
  const std::size_t d = xs.back();
  if (gamma.shape() != Shape{d}) shape_fail("layer_norm", xs, gamma.shape());
  if (beta.shape() != Shape{d}) shape_fail("layer_norm", xs, beta.shape());
  const std::size_t rows = x.size() / d;
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  Tensor<T> out(xs);
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[o + j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xv[o + j] - mu) * (xv[o + j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[o + j] = (xv[o + j] - mu) * is;
      out[o + j] = xhat[o + j] * gv[j] + bv[j];
    }
  }
  return make_result<T>(
      "layer_norm", std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gv = self.parents[1]->value;
        auto* px = grad_target(self, 0);
        auto* pg = grad_target(self, 1);
        auto* pb = grad_target(self, 2);
        std::vector<T> dxhat(d);
        T* gg = pg ? pg->grad_buffer().storage().data() : nullptr;
        T* gb = pb ? pb->grad_buffer().storage().data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * d;
          if (gg) {
            for (std::size_t j = 0; j < d; ++j) gg[j] += self.grad[o + j] * xhat[o + j];
          }
          if (gb) {
            for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad[o + j];
          }
          if (px) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = self.grad[o + j] * gv[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[o + j];
            }
            mean_d /= static_cast<T>(d);
            mean_dx /= static_cast<T>(d);
            T* g = px->grad_buffer().storage().data() + o;
            for (std::size_t j = 0; j < d; ++j) {
              g[j] += inv_std[r] * (dxhat[j] - mean_d - xhat[o + j] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids) {
  const auto& ts = table.shape();
  if (ts.size() != 2) rank_fail("embedding", ts, "rank-2 table");
  const std::size_t vocab = ts[0], d = ts[1];
  Tensor<T> out({ids.size(), d});
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw VocabError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.storage().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.storage().data() + i * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result<T>("embedding", std::move(out), {table},
                        [d, saved = std::move(saved)](Node<T>& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            const std::size_t base = static_cast<std::size_t>(saved[i]) * d;
                            for (std::size_t j = 0; j < d; ++j) g[base + j] += self.grad[i * d + j];
                          }
                        });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != tail) shape_fail("concat", parts[0].shape(), s);
    rows += s[0];
  }
  Shape out_shape = tail;
  out_shape.insert(out_shape.begin(), rows);
  Tensor<T> out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.storage().begin() + off);
    off += p.size();
  }
  return make_result<T>("concat", std::move(out), parts,
                        [offsets = std::move(offsets)](Node<T>& self) {
                          for (std::size_t p = 0; p < self.parents.size(); ++p) {
                            if (auto* t = grad_target(self, p)) {
                              auto& g = t->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[p] + i];
                            }
                          }
                        });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) shape_fail("reshape", x.shape(), shape);
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>("reshape", std::move(out), {x}, [](Node<T>& self) { accumulate(*self.parents[0], self.grad); });
}

namespace {

// Index map for a permutation: out flat index -> in flat index.
std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& perm,
                                       Shape& out_shape) {
  const std::size_t r = in.size();
  out_shape.assign(r, 0);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  std::vector<std::size_t> idx(shape_size(in));
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_stride[perm[i]];
    idx[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return idx;
}

}  // namespace

template <typename T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> perm) {
  const auto& xs = x.shape();
  if (perm.size() != xs.size() || xs.size() > 4) shape_fail("permute", xs, Shape(perm));
  std::vector<bool> used(perm.size(), false);
  for (auto p : perm) {
    if (p >= perm.size() || used[p]) shape_fail("permute", xs, Shape(perm));
    used[p] = true;
  }
  // When the last axis stays last, contiguous runs of it move together.
  const std::size_t run = perm.back() == xs.size() - 1 ? xs.back() : 1;
  Shape out_shape;
  Shape outer = xs;
  if (run > 1) outer.back() = 1;
  auto idx = permute_index(outer, perm, out_shape);
  if (run > 1) {
    out_shape.back() = run;
    for (auto& i : idx) i *= run;
  }
  Tensor<T> out(out_shape);
  const T* xv = x.value().storage().data();
  T* ov = out.storage().data();
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(xv + idx[i], run, ov + i * run);
  return make_result<T>("permute", std::move(out), {x}, [run, idx = std::move(idx)](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().storage().data();
    const T* gy = self.grad.storage().data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < run; ++j) g[idx[i] + j] += gy[i * run + j];
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets,
                     std::int32_t ignore_index, T smoothing) {
  const auto& ls = logits.shape();
  if (ls.size() != 2 || ls[0] != targets.size()) {
    shape_fail("cross_entropy", ls, Shape{targets.size()});
  }
  const std::size_t n = ls[0], v = ls[1];
  const auto& lv = logits.value();
  std::vector<T> probs(lv.storage().begin(), lv.storage().end());
  std::size_t count = 0;
  T total = 0;
  const T uniform = smoothing / static_cast<T>(v);
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw VocabError("cross_entropy: target " + std::to_string(targets[r]) +
                       " outside vocabulary of size " + std::to_string(v));
    }
    ++count;
    T* row = probs.data() + r * v;
    const T mx = *std::max_element(row, row + v);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    T row_loss = (T(1) - smoothing) * (lse - row[targets[r]]);
    if (smoothing != T(0)) {
      T all = 0;
      for (std::size_t j = 0; j < v; ++j) all += lse - row[j];
      row_loss += uniform * all;
    }
    total += row_loss;
    for (std::size_t j = 0; j < v; ++j) row[j] = std::exp(row[j] - lse);
  }
  if (count == 0) throw ShapeError("cross_entropy: no non-ignored targets");
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(count));
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result<T>(
      "cross_entropy", std::move(out), {logits},
      [n, v, count, ignore_index, smoothing, uniform, probs = std::move(probs),
       saved = std::move(saved)](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const T scale_factor = self.grad[0] / static_cast<T>(count);
        for (std::size_t r = 0; r < n; ++r) {
          if (saved[r] == ignore_index) continue;
          const std::size_t o = r * v;
          for (std::size_t j = 0; j < v; ++j) {
            T q = uniform;
            if (static_cast<std::int32_t>(j) == saved[r]) q += T(1) - smoothing;
            g[o + j] += scale_factor * (probs[o + j] - q);
          }
        }
      });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (auto v : x.value().storage()) total += v;
  return make_result<T>("sum", Tensor<T>::scalar(total), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) throw ShapeError("mean: empty input");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ShapeError("dropout: probability must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  // Four 16-bit draws per splitmix64 output; p is resolved to 1/65536.
  const auto threshold = static_cast<std::uint32_t>(std::llround(p * 65536.0));
  std::uint64_t state = rng.next_u64();
  Tensor<T> mask(x.shape());
  T* m = mask.storage().data();
  const std::size_t n = mask.size();
  for (std::size_t i = 0; i < n; i += 4) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    for (std::size_t k = 0; k < 4 && i + k < n; ++k) {
      m[i + k] = static_cast<std::uint32_t>((z >> (16 * k)) & 0xFFFF) < threshold ? T(0) : keep_scale;
    }
  }
  Tensor<T> out = x.value();
  vec(out) *= cvec(mask);
  return make_result<T>("dropout", std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
    vec(self.parents[0]->grad_buffer()) += cvec(self.grad) * cvec(mask);
  });
}

#define PIVOTMT_INSTANTIATE(T)                                                                   \
  template void backward<T>(const Var<T>&);                                                      \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> bmm<T>(const Var<T>&, const Var<T>&, bool);                                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale<T>(const Var<T>&, T);                                                    \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> relu<T>(const Var<T>&);                                                        \
  template Var<T> softmax<T>(const Var<T>&);                                                     \
  template Var<T> masked_fill<T>(const Var<T>&, std::span<const std::uint8_t>, T);              \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                \
  template Var<T> embedding<T>(const Var<T>&, std::span<const std::int32_t>);                   \
  template Var<T> concat<T>(const std::vector<Var<T>>&);                                         \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                              \
  template Var<T> permute<T>(const Var<T>&, std::vector<std::size_t>);                           \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const std::int32_t>, std::int32_t, T); \
  template Var<T> sum<T>(const Var<T>&);                                                         \
  template Var<T> mean<T>(const Var<T>&);                                                        \
  template Var<T> dropout<T>(const Var<T>&, double, Rng&);

PIVOTMT_INSTANTIATE(float)
PIVOTMT_INSTANTIATE(double)

#undef PIVOTMT_INSTANTIATE

}  // namespace pivotmt::tensor
