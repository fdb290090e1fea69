#include "pivotmt/adapter/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "pivotmt/binary_io.hpp"
#include "pivotmt/error.hpp"
#include "pivotmt/rng.hpp"
#include "pivotmt/tensor/svd.hpp"
#include "pivotmt/text/vocab.hpp"

namespace pivotmt::adapter {

using tensor::Tensor;

namespace {

constexpr char kMagic[] = "PTLADPT1";

Tensor<double> matmul_nt(const Tensor<double>& a, const Tensor<double>& b) {
  // a [m, n] times b^T with b [k, n] -> [m, k]
  const std::size_t m = a.dim(0), n = a.dim(1), k = b.dim(0);
  Tensor<double> out({m, k});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) acc += a.at(i, t) * b.at(j, t);
      out.at(i, j) = acc;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Pooling p) { return p == Pooling::average ? "average" : "max"; }

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::procrustes: return "procrustes";
    case Provenance::random: return "random";
    case Provenance::identity: return "identity";
  }
  return "?";
}

Pooling pooling_from_string(std::string_view s) {
  if (s == "average" || s == "avg") return Pooling::average;
  if (s == "max") return Pooling::max;
  throw ConfigError("unknown pooling mode '" + std::string(s) + "'");
}

template <typename T>
std::vector<double> pool_sentence(const Tensor<T>& states, std::span<const std::uint8_t> pad, Pooling mode) {
  if (states.rank() != 2 || pad.size() != states.dim(0)) {
    throw ShapeError("pool_sentence: states " + tensor::shape_str(states.shape()) + " with " +
                     std::to_string(pad.size()) + " pad flags");
  }
  const std::size_t len = states.dim(0), d = states.dim(1);
  std::vector<double> out(d, mode == Pooling::max ? -std::numeric_limits<double>::infinity() : 0.0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < len; ++i) {
    if (pad[i]) continue;
    ++used;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = static_cast<double>(states.at(i, j));
      if (mode == Pooling::max) {
        out[j] = std::max(out[j], v);
      } else {
        out[j] += v;
      }
    }
  }
  if (used == 0) throw ShapeError("pool_sentence: every position is padding");
  if (mode == Pooling::average) {
    for (auto& v : out) v /= static_cast<double>(used);
  }
  return out;
}

template std::vector<double> pool_sentence<float>(const Tensor<float>&, std::span<const std::uint8_t>, Pooling);
template std::vector<double> pool_sentence<double>(const Tensor<double>&, std::span<const std::uint8_t>, Pooling);

namespace {

// Pooled columns for a list of sentences, filled into out[:, offset...].
void pool_all(const model::Transformer<float>& m, std::span<const std::vector<std::int32_t>> sentences, Pooling mode,
              std::size_t batch_rows, Tensor<double>& out) {
  const std::size_t d = m.config().model_dim;
  const std::size_t n = sentences.size();
  for (std::size_t start = 0; start < n; start += batch_rows) {
    const std::size_t rows = std::min(batch_rows, n - start);
    std::size_t len = 0;
    for (std::size_t r = 0; r < rows; ++r) len = std::max(len, sentences[start + r].size());
    if (len == 0) throw ShapeError("collect_pairs: empty sentence");
    std::vector<std::int32_t> ids(rows * len, text::Vocabulary::kPadId);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& s = sentences[start + r];
      if (s.empty()) throw ShapeError("collect_pairs: empty sentence at " + std::to_string(start + r));
      std::copy(s.begin(), s.end(), ids.begin() + static_cast<long>(r * len));
    }
    const auto enc = m.encode(ids, rows, len, nullptr, {});
    const auto& states = enc.states.value();
    for (std::size_t r = 0; r < rows; ++r) {
      Tensor<float> one({len, d});
      std::copy_n(states.storage().begin() + static_cast<long>(r * len * d), len * d, one.storage().begin());
      const auto pooled = pool_sentence(
          one, std::span<const std::uint8_t>(enc.src_pad.data() + r * len, len), mode);
      for (std::size_t j = 0; j < d; ++j) out.at(j, start + r) = pooled[j];
    }
  }
}

}  // namespace

PooledPairs collect_pairs(const model::Transformer<float>& src_model, std::span<const std::vector<std::int32_t>> src,
                          const model::Transformer<float>& piv_model, std::span<const std::vector<std::int32_t>> piv,
                          Pooling mode, std::size_t batch_rows) {
  const std::size_t d = src_model.config().model_dim;
  if (piv_model.config().model_dim != d) {
    throw ShapeError("collect_pairs: source encoder has d=" + std::to_string(d) + " but pivot encoder has d=" +
                     std::to_string(piv_model.config().model_dim));
  }
  if (src.size() != piv.size()) throw ShapeError("collect_pairs: unaligned sentence lists");
  if (src.empty()) throw ConfigError("collect_pairs: no sentence pairs");
  if (batch_rows == 0) batch_rows = 1;
  PooledPairs out;
  out.pooling = mode;
  out.s = Tensor<double>({d, src.size()});
  out.p = Tensor<double>({d, src.size()});
  pool_all(src_model, src, mode, batch_rows, out.s);
  pool_all(piv_model, piv, mode, batch_rows, out.p);
  return out;
}

std::vector<std::size_t> fit_subset(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (count >= n) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double orthogonality_error(const Tensor<double>& m) {
  const std::size_t d = m.dim(0);
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += m.at(t, i) * m.at(t, j);
      worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

double fit_residual(const Tensor<double>& m, const PooledPairs& pairs) {
  const std::size_t d = pairs.dim(), n = pairs.count();
  double total = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += m.at(i, t) * pairs.s.at(t, c);
      const double r = acc - pairs.p.at(i, c);
      total += r * r;
    }
  }
  return std::sqrt(total);
}

AdapterMatrix fit_adapter(const PooledPairs& pairs) {
  if (pairs.s.rank() != 2 || pairs.s.shape() != pairs.p.shape()) {
    throw ShapeError("fit_adapter: S " + tensor::shape_str(pairs.s.shape()) + " and P " +
                     tensor::shape_str(pairs.p.shape()) + " differ");
  }
  if (pairs.count() == 0) throw ConfigError("fit_adapter: no sentence pairs");
  if (!pairs.s.all_finite() || !pairs.p.all_finite()) throw NumericError("fit_adapter: non-finite pooled values");
  const auto cross = matmul_nt(pairs.p, pairs.s);  // P S^T, [d, d]
  const auto f = tensor::svd(cross);
  const std::size_t d = pairs.dim();
  AdapterMatrix a;
  a.m = Tensor<double>({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += f.u.at(i, t) * f.vt.at(t, j);
      a.m.at(i, j) = acc;
    }
  }
  a.m32 = a.m.cast<float>();
  a.orthogonality_error = orthogonality_error(a.m);
  a.fit_residual = fit_residual(a.m, pairs);
  a.pooling = pairs.pooling;
  a.provenance = Provenance::procrustes;
  return a;
}

AdapterMatrix make_baseline_adapter(Provenance kind, std::size_t d, std::uint64_t seed) {
  if (d == 0) throw ConfigError("make_baseline_adapter: d must be positive");
  AdapterMatrix a;
  a.provenance = kind;
  if (kind == Provenance::identity) {
    a.m = Tensor<double>::identity(d);
  } else if (kind == Provenance::random) {
    Rng rng(seed);
    const double bound = std::sqrt(3.0 / static_cast<double>(d));
    a.m = Tensor<double>({d, d});
    for (auto& v : a.m.data()) v = rng.uniform(-bound, bound);
  } else {
    throw ConfigError("make_baseline_adapter: kind must be identity or random");
  }
  a.m32 = a.m.cast<float>();
  a.orthogonality_error = orthogonality_error(a.m);
  return a;
}

void save_adapter(const AdapterMatrix& a, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  binary::write_bytes(out, std::string(kMagic, 8));
  binary::write<std::uint64_t>(out, a.dim());
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(a.pooling));
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(a.provenance));
  binary::write<double>(out, a.orthogonality_error);
  binary::write<double>(out, a.fit_residual);
  binary::write_array(out, a.m.storage());
  if (!out) throw IoError("short write to " + path.string());
}

AdapterMatrix load_adapter(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  const std::string what = "adapter " + path.string();
  if (binary::read_bytes(in, 8, what) != std::string(kMagic, 8)) throw IoError(what + ": bad magic");
  AdapterMatrix a;
  const auto d = binary::read<std::uint64_t>(in, what);
  if (d == 0 || d > (1u << 16)) throw IoError(what + ": implausible dimension " + std::to_string(d));
  const auto pooling = binary::read<std::uint32_t>(in, what);
  const auto prov = binary::read<std::uint32_t>(in, what);
  if (pooling > 1 || prov > 2) throw IoError(what + ": bad pooling or provenance tag");
  a.pooling = static_cast<Pooling>(pooling);
  a.provenance = static_cast<Provenance>(prov);
  a.orthogonality_error = binary::read<double>(in, what);
  a.fit_residual = binary::read<double>(in, what);
  a.m = Tensor<double>({d, d}, binary::read_array<double>(in, d * d, what));
  a.m32 = a.m.cast<float>();
  return a;
}

CosineReport cosine_alignment(const PooledPairs& pairs, std::uint64_t seed) {
  const std::size_t d = pairs.dim(), n = pairs.count();
  if (n < 2) throw ConfigError("cosine_alignment: need at least two pairs");
  auto cosine = [&](std::size_t a, std::size_t b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dot += pairs.s.at(i, a) * pairs.p.at(i, b);
      na += pairs.s.at(i, a) * pairs.s.at(i, a);
      nb += pairs.p.at(i, b) * pairs.p.at(i, b);
    }
    return dot / std::max(std::sqrt(na * nb), 1e-300);
  };
  // A random cyclic shift is a derangement.
  Rng rng(seed);
  const std::size_t shift = 1 + static_cast<std::size_t>(rng.below(n - 1));
  CosineReport r;
  for (std::size_t c = 0; c < n; ++c) {
    r.aligned += cosine(c, c);
    r.shuffled += cosine(c, (c + shift) % n);
  }
  r.aligned /= static_cast<double>(n);
  r.shuffled /= static_cast<double>(n);
  return r;
}

}  // namespace pivotmt::adapter
