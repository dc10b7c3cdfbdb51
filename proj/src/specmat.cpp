#include "isolab/specmat.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/SVD>

namespace isolab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool rank_deficient(const RealVector& sigma, std::size_t rows) {
  if (static_cast<std::size_t>(sigma.size()) < rows) return true;
  if (sigma.size() == 0) return true;
  const double top = sigma(0);
  if (!(top > 0.0)) return true;
  return sigma(sigma.size() - 1) < kRankTolerance * top;
}

}  // namespace

RealVector singular_values(const RealMatrix& x) {
  if (x.size() == 0) return RealVector();
  Eigen::MatrixXd col_major = x;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(col_major);
  return svd.singularValues();
}

std::size_t numerical_rank(const RealMatrix& x) {
  const RealVector sigma = singular_values(x);
  if (sigma.size() == 0 || !(sigma(0) > 0.0)) return 0;
  const double cutoff = kRankTolerance * sigma(0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) >= cutoff) ++rank;
  }
  return rank;
}

double isometry_gap(const RealMatrix& x) {
  const RealVector sigma = singular_values(x);
  const auto rows = static_cast<std::size_t>(x.rows());
  if (rank_deficient(sigma, rows)) return kInf;

  // Work with lambda / lambda_max so neither the mean nor the logs overflow.
  const double top = sigma(0);
  double mean_ratio = 0.0;
  double mean_log = 0.0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    const double r = sigma(i) / top;
    mean_ratio += r * r;
    mean_log += 2.0 * std::log(r);
  }
  const double d = static_cast<double>(sigma.size());
  mean_ratio /= d;
  mean_log /= d;
  const double gap = std::log(mean_ratio) - mean_log;
  return gap > 0.0 ? gap : 0.0;
}

double isometry(const RealMatrix& x) {
  const double gap = isometry_gap(x);
  return std::isinf(gap) ? 0.0 : std::exp(-gap);
}

SpectralSummary spectral_summary(const RealMatrix& x) {
  if (x.rows() != x.cols()) {
    throw std::invalid_argument("spectral_summary: matrix must be square, got " +
                                std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
  const RealVector sigma = singular_values(x);
  SpectralSummary out;
  out.eigenvalues.reserve(static_cast<std::size_t>(sigma.size()));
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    const double lambda = sigma(i) * sigma(i);
    out.eigenvalues.push_back(lambda);
    out.trace += lambda;
    log_det += 2.0 * std::log(sigma(i));
  }
  const bool degenerate = rank_deficient(sigma, static_cast<std::size_t>(x.rows()));
  out.log_det = degenerate ? -kInf : log_det;
  out.iso_gap = isometry_gap(x);
  out.lambda_min = out.eigenvalues.empty() ? 0.0 : out.eigenvalues.back();
  return out;
}

RealMatrix sample_gaussian(std::size_t rows, std::size_t cols, double variance, Rng& rng) {
  if (!(variance > 0.0)) throw std::invalid_argument("sample_gaussian: variance must be positive");
  const double scale = std::sqrt(variance);
  RealMatrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = scale * rng.normal();
  }
  return out;
}

RealMatrix sample_gaussian(std::size_t d, Rng& rng) {
  return sample_gaussian(d, d, 1.0 / static_cast<double>(d), rng);
}

RealMatrix sample_haar_orthogonal(std::size_t d, Rng& rng) {
  if (d == 0) throw std::invalid_argument("sample_haar_orthogonal: d must be >= 1");
  const Eigen::MatrixXd gauss = sample_gaussian(d, d, 1.0, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ();
  const auto& packed = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (packed(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

double orthogonality_error(const RealMatrix& w) {
  const RealMatrix gram = w.transpose() * w;
  return (gram - RealMatrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

bool all_finite(const RealMatrix& x) { return x.allFinite(); }

}  // namespace isolab
