// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sinkprune {

/// Row-major dense matrix of doubles. All pruning math runs in 64-bit even
/// though checkpoints store 32-bit payloads.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Throws DimensionMismatch unless data.size() == rows * cols.
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  DenseMatrix transpose() const;
  bool all_finite() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a * b^T without materializing the transpose.
DenseMatrix matmul_transposed(const DenseMatrix& a, const DenseMatrix& b);
double frobenius_norm(const DenseMatrix& a);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

/// Lower-triangular Cholesky factor with strictly positive diagonal.
struct PsdFactor {
  std::size_t dim = 0;
  DenseMatrix lower_triangular;
};

/// Throws DimensionMismatch for non-square or asymmetric input and
/// NotPositiveDefinite on a non-positive pivot. Never regularizes.
PsdFactor cholesky(const DenseMatrix& a);

/// Solves a x = b given the factor of a.
std::vector<double> cholesky_solve(const PsdFactor& factor,
                                   std::span<const double> b);

DenseMatrix psd_inverse(const DenseMatrix& a);
DenseMatrix psd_inverse(const PsdFactor& factor);

/// Least-squares row coefficients for a C x N design whose rows are input
/// features and whose columns are calibration samples:
///   argmin_w || w X - target ||^2  =>  w = (X X^T + damp I)^-1 X target^T.
/// Rows that are identically zero are masked out and get coefficient 0.
std::vector<double> masked_least_squares(const DenseMatrix& x_masked,
                                         std::span<const double> target,
                                         double dampening = 0.0);

/// Same problem stated directly on a Gram matrix: solves
/// gram[keep, keep] w_keep = rhs[keep]; entries outside `keep` are 0.
std::vector<double> masked_gram_solve(const DenseMatrix& gram,
                                      std::span<const std::size_t> keep,
                                      std::span<const double> rhs);

}  // namespace sinkprune
