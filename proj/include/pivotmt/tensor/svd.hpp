#pragma once

#include <vector>

#include "pivotmt/tensor/tensor.hpp"

namespace pivotmt::tensor {

// Thin SVD of an m x n matrix: a = u * diag(sigma) * vt with
// k = min(m, n), u m x k with orthonormal columns, vt k x n with
// orthonormal rows, sigma non-increasing and non-negative.
struct SvdResult {
  Tensor<double> u;
  std::vector<double> sigma;
  Tensor<double> vt;
};

// One-sided Jacobi in double precision. Throws NumericError on non-finite
// input.
SvdResult svd(const Tensor<double>& a);

}  // namespace pivotmt::tensor
