// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sinkprune/error.hpp"

namespace sinkprune {

namespace {

constexpr double kSymmetryTolerance = 1e-9;
constexpr double kPivotTolerance = 64 * std::numeric_limits<double>::epsilon();

std::string shape_str(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols,
                         std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorCode::kDimensionMismatch,
         "matrix data has " + std::to_string(data_.size()) +
             " entries, expected " + std::to_string(rows_ * cols_));
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> diag) {
  DenseMatrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kDimensionMismatch,
         "matmul " + shape_str(a) + " by " + shape_str(b));
  }
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

DenseMatrix matmul_transposed(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::kDimensionMismatch,
         "matmul_transposed " + shape_str(a) + " by " + shape_str(b) + "^T");
  }
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

double frobenius_norm(const DenseMatrix& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return std::sqrt(acc);
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::kDimensionMismatch,
         "max_abs_diff " + shape_str(a) + " vs " + shape_str(b));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

PsdFactor cholesky(const DenseMatrix& a) {
  if (!a.is_square()) {
    fail(ErrorCode::kDimensionMismatch,
         "cholesky needs a square matrix, got " + shape_str(a));
  }
  const std::size_t n = a.rows();
  double scale = 1.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > kSymmetryTolerance * scale) {
        fail(ErrorCode::kDimensionMismatch,
             "cholesky input is not symmetric at (" + std::to_string(i) + "," +
                 std::to_string(j) + ")");
      }
    }
  }

  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > kPivotTolerance * max_diag)) {
      fail(ErrorCode::kNotPositiveDefinite,
           "non-positive pivot " + std::to_string(diag) + " at column " +
               std::to_string(j) + " (increase dampening)");
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return PsdFactor{n, std::move(l)};
}

std::vector<double> cholesky_solve(const PsdFactor& factor,
                                   std::span<const double> b) {
  const std::size_t n = factor.dim;
  if (b.size() != n) {
    fail(ErrorCode::kDimensionMismatch,
         "cholesky_solve rhs length " + std::to_string(b.size()) + " vs " +
             std::to_string(n));
  }
  const DenseMatrix& l = factor.lower_triangular;
  std::vector<double> y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
    y[i] /= l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) y[ii] -= l(k, ii) * y[k];
    y[ii] /= l(ii, ii);
  }
  return y;
}

DenseMatrix psd_inverse(const PsdFactor& factor) {
  const std::size_t n = factor.dim;
  const DenseMatrix& l = factor.lower_triangular;
  // L^-1 by forward substitution, then A^-1 = L^-T L^-1.
  DenseMatrix linv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    linv(j, j) = 1.0 / l(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = 0.0;
      for (std::size_t k = j; k < i; ++k) v -= l(i, k) * linv(k, j);
      linv(i, j) = v / l(i, i);
    }
  }
  DenseMatrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double v = 0.0;
      for (std::size_t k = i; k < n; ++k) v += linv(k, i) * linv(k, j);
      inv(i, j) = v;
      inv(j, i) = v;
    }
  }
  return inv;
}

DenseMatrix psd_inverse(const DenseMatrix& a) { return psd_inverse(cholesky(a)); }

std::vector<double> masked_gram_solve(const DenseMatrix& gram,
                                      std::span<const std::size_t> keep,
                                      std::span<const double> rhs) {
  if (!gram.is_square() || rhs.size() != gram.rows()) {
    fail(ErrorCode::kDimensionMismatch,
         "masked_gram_solve gram " + shape_str(gram) + " rhs " +
             std::to_string(rhs.size()));
  }
  const std::size_t k = keep.size();
  DenseMatrix sub(k, k);
  std::vector<double> sub_rhs(k);
  for (std::size_t a = 0; a < k; ++a) {
    if (keep[a] >= gram.rows()) {
      fail(ErrorCode::kDimensionMismatch, "masked_gram_solve index out of range");
    }
    sub_rhs[a] = rhs[keep[a]];
    for (std::size_t b = 0; b < k; ++b) sub(a, b) = gram(keep[a], keep[b]);
  }
  std::vector<double> out(gram.rows(), 0.0);
  if (k == 0) return out;
  const auto sol = cholesky_solve(cholesky(sub), sub_rhs);
  for (std::size_t a = 0; a < k; ++a) out[keep[a]] = sol[a];
  return out;
}

std::vector<double> masked_least_squares(const DenseMatrix& x_masked,
                                         std::span<const double> target,
                                         double dampening) {
  if (target.size() != x_masked.cols()) {
    fail(ErrorCode::kDimensionMismatch,
         "target length " + std::to_string(target.size()) +
             " does not match calibration columns " +
             std::to_string(x_masked.cols()));
  }
  if (dampening < 0.0) {
    fail(ErrorCode::kInvalidArgument, "dampening must be non-negative");
  }
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < x_masked.rows(); ++r) {
    const auto row = x_masked.row(r);
    if (std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; }))
      keep.push_back(r);
  }
  DenseMatrix gram = matmul_transposed(x_masked, x_masked);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += dampening;
  std::vector<double> rhs(x_masked.rows(), 0.0);
  for (std::size_t r = 0; r < x_masked.rows(); ++r) {
    const auto row = x_masked.row(r);
    for (std::size_t n = 0; n < row.size(); ++n) rhs[r] += row[n] * target[n];
  }
  return masked_gram_solve(gram, keep, rhs);
}

}  // namespace sinkprune
