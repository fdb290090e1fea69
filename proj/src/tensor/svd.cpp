#include "pivotmt/tensor/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pivotmt/error.hpp"

namespace pivotmt::tensor {

namespace {

// Column-major working copy; one-sided Jacobi rotates columns.
struct Columns {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;
  double* col(std::size_t j) { return v.data() + j * rows; }
  const double* col(std::size_t j) const { return v.data() + j * rows; }
};

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Requires m >= n.
SvdResult jacobi_tall(const Tensor<double>& a) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  Columns w{m, n, std::vector<double>(m * n)};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) w.col(j)[i] = a[i * n + j];
  }
  Columns v{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t j = 0; j < n; ++j) v.col(j)[j] = 1.0;

  constexpr double tol = 1e-15;
  constexpr int max_sweeps = 80;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double* ci = w.col(i);
        double* cj = w.col(j);
        const double alpha = dot(ci, ci, m);
        const double beta = dot(cj, cj, m);
        const double gamma = dot(ci, cj, m);
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < m; ++r) {
          const double x = ci[r], y = cj[r];
          ci[r] = c * x - s * y;
          cj[r] = s * x + c * y;
        }
        double* vi = v.col(i);
        double* vj = v.col(j);
        for (std::size_t r = 0; r < n; ++r) {
          const double x = vi[r], y = vj[r];
          vi[r] = c * x - s * y;
          vj[r] = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(dot(w.col(j), w.col(j), m));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult out;
  out.u = Tensor<double>({m, n});
  out.vt = Tensor<double>({n, n});
  out.sigma.resize(n);
  const double largest = n ? norms[order[0]] : 0.0;
  const double null_tol = std::max(1.0, largest) * 1e-13 * static_cast<double>(std::max(m, n));
  std::vector<std::vector<double>> basis;
  std::vector<std::size_t> deficient;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    for (std::size_t r = 0; r < n; ++r) out.vt[k * n + r] = v.col(j)[r];
    if (norms[j] > null_tol) {
      out.sigma[k] = norms[j];
      std::vector<double> col(w.col(j), w.col(j) + m);
      for (auto& x : col) x /= norms[j];
      basis.push_back(std::move(col));
    } else {
      out.sigma[k] = norms[j];
      basis.emplace_back();
      deficient.push_back(k);
    }
  }
  // Null directions: complete the basis with Gram-Schmidt against unit
  // vectors so that U keeps orthonormal columns.
  std::size_t probe = 0;
  for (std::size_t k : deficient) {
    out.sigma[k] = 0.0;
    while (probe < m) {
      std::vector<double> e(m, 0.0);
      e[probe++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& b : basis) {
          if (b.empty()) continue;
          const double p = dot(e.data(), b.data(), m);
          for (std::size_t r = 0; r < m; ++r) e[r] -= p * b[r];
        }
      }
      const double nrm = std::sqrt(dot(e.data(), e.data(), m));
      if (nrm > 1e-6) {
        for (auto& x : e) x /= nrm;
        basis[k] = std::move(e);
        break;
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t r = 0; r < m; ++r) out.u[r * n + k] = basis[k][r];
  }
  return out;
}

}  // namespace

SvdResult svd(const Tensor<double>& a) {
  if (a.rank() != 2) throw ShapeError("svd: expected a matrix, got " + shape_str(a.shape()));
  if (!a.all_finite()) throw NumericError("svd: non-finite input");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (m == 0 || n == 0) throw ShapeError("svd: empty matrix " + shape_str(a.shape()));
  if (m >= n) return jacobi_tall(a);

  Tensor<double> at({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) at[j * m + i] = a[i * n + j];
  }
  // a^T = U' S V'^T  =>  a = V' S U'^T
  SvdResult t = jacobi_tall(at);
  SvdResult out;
  out.sigma = t.sigma;
  out.u = Tensor<double>({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < m; ++k) out.u[i * m + k] = t.vt[k * m + i];
  }
  out.vt = Tensor<double>({m, n});
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t j = 0; j < n; ++j) out.vt[k * n + j] = t.u[j * m + k];
  }
  return out;
}

}  // namespace pivotmt::tensor
