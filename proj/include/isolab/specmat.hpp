#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "isolab/rng.hpp"

namespace isolab {

/// Dense row-major matrix of doubles. Representations X (features x samples)
/// and weights W share this type.
using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealVector = Eigen::VectorXd;

/// Singular values below this fraction of the largest one count as zero.
inline constexpr double kRankTolerance = 1e-12;

/// Eigen-spectrum of the Gram matrix X X^T and the isometry quantities
/// derived from it.
struct SpectralSummary {
  std::vector<double> eigenvalues;  // descending, non-negative
  double trace = 0.0;
  double log_det = 0.0;  // -inf when rank-deficient
  double iso_gap = 0.0;  // +inf when rank-deficient
  double lambda_min = 0.0;
};

/// Singular values, descending.
RealVector singular_values(const RealMatrix& x);

/// Number of singular values at or above kRankTolerance * sigma_max.
std::size_t numerical_rank(const RealMatrix& x);

/// Isometry gap phi(X) = log(mean lambda) - mean(log lambda) over the
/// eigenvalues lambda of X X^T, evaluated from singular values so that the
/// determinant is never formed. Returns +inf for rank-deficient or zero X.
/// Requires rows <= cols.
double isometry_gap(const RealMatrix& x);

/// exp(-isometry_gap(x)), in [0, 1].
double isometry(const RealMatrix& x);

/// Requires a square matrix.
SpectralSummary spectral_summary(const RealMatrix& x);

/// Haar-distributed orthogonal d x d matrix: QR of a Gaussian matrix with
/// the columns of Q flipped to make diag(R) positive.
RealMatrix sample_haar_orthogonal(std::size_t d, Rng& rng);

/// i.i.d. N(0, variance) entries.
RealMatrix sample_gaussian(std::size_t rows, std::size_t cols, double variance, Rng& rng);
/// Square d x d with variance 1/d.
RealMatrix sample_gaussian(std::size_t d, Rng& rng);

/// max |W^T W - I| over entries.
double orthogonality_error(const RealMatrix& w);

bool all_finite(const RealMatrix& x);

}  // namespace isolab
