#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pivotmt/model/transformer.hpp"
#include "pivotmt/tensor/tensor.hpp"

namespace pivotmt::adapter {

enum class Pooling : std::uint32_t { average = 0, max = 1 };
enum class Provenance : std::uint32_t { procrustes = 0, random = 1, identity = 2 };

std::string_view to_string(Pooling p);
std::string_view to_string(Provenance p);
Pooling pooling_from_string(std::string_view s);

// Pools rows of states[L, d] whose pad flag is 0. Throws ShapeError when
// every row is padding or the mask length differs from L.
template <typename T>
std::vector<double> pool_sentence(const tensor::Tensor<T>& states, std::span<const std::uint8_t> pad, Pooling mode);

// Column i of s and p comes from sentence pair i.
struct PooledPairs {
  tensor::Tensor<double> s;  // [d, n]
  tensor::Tensor<double> p;  // [d, n]
  Pooling pooling = Pooling::average;

  std::size_t dim() const { return s.dim(0); }
  std::size_t count() const { return s.dim(1); }
};

// Encodes src with src_model and piv with piv_model (the same model for a
// shared encoder) and pools each sentence. Sentences are unpadded id lists.
PooledPairs collect_pairs(const model::Transformer<float>& src_model, std::span<const std::vector<std::int32_t>> src,
                          const model::Transformer<float>& piv_model, std::span<const std::vector<std::int32_t>> piv,
                          Pooling mode, std::size_t batch_rows = 64);

// Seeded choice of `count` distinct indices out of n (all of them when
// count >= n), in increasing order.
std::vector<std::size_t> fit_subset(std::size_t n, std::size_t count, std::uint64_t seed);

struct AdapterMatrix {
  tensor::Tensor<double> m;   // master copy [d, d]
  tensor::Tensor<float> m32;  // training-precision copy of m
  double orthogonality_error = 0.0;  // max |M^T M - I|
  double fit_residual = -1.0;        // ||M S - P||_F; -1 when not fitted
  Pooling pooling = Pooling::average;
  Provenance provenance = Provenance::identity;

  std::size_t dim() const { return m.dim(0); }
};

double orthogonality_error(const tensor::Tensor<double>& m);
double fit_residual(const tensor::Tensor<double>& m, const PooledPairs& pairs);

// Orthogonal Procrustes: M = U V^T from the SVD of P S^T, the orthogonal map
// minimizing ||M S - P||_F. Throws NumericError on non-finite input.
AdapterMatrix fit_adapter(const PooledPairs& pairs);

// identity: exactly I. random: entries U(-sqrt(3/d), sqrt(3/d)), not
// orthogonal.
AdapterMatrix make_baseline_adapter(Provenance kind, std::size_t d, std::uint64_t seed);

// Binary: magic "PTLADPT1", u64 d, u32 pooling, u32 provenance,
// f64 orthogonality_error, f64 fit_residual, then d*d f64 row-major, all
// little-endian.
void save_adapter(const AdapterMatrix& a, const std::filesystem::path& path);
AdapterMatrix load_adapter(const std::filesystem::path& path);

// Mean cosine similarity of aligned columns and of columns paired with a
// seeded derangement.
struct CosineReport {
  double aligned = 0.0;
  double shuffled = 0.0;
};
CosineReport cosine_alignment(const PooledPairs& pairs, std::uint64_t seed);

}  // namespace pivotmt::adapter
