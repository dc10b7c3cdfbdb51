#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "isolab/specmat.hpp"

namespace isolab {

/// Index patterns of Haar moments:
///   e1   E[W_ik^2 W_jq^2], i != j, k != q
///   e2   E[W_ik^2 W_jk^2], i != j
///   deg2 E[W_ik^2]
enum class MomentPattern { e1, e2, deg2 };

std::string to_string(MomentPattern p);
MomentPattern parse_moment_pattern(const std::string& s);

struct MomentSpec {
  std::size_t d = 3;
  MomentPattern pattern = MomentPattern::e1;
  std::size_t i = 0;
  std::size_t j = 1;
  std::size_t k = 0;
  std::size_t q = 1;

  /// Throws std::invalid_argument on out-of-range or colliding indices, or
  /// d < 3 for the degree-4 patterns.
  void validate() const;
};

/// Closed form: e1 (d+1)/(d(d+2)(d-1)), e2 (d-1)/(d(d+2)(d-1)), deg2 1/d.
double weingarten_moment(const MomentSpec& spec);

struct MomentEstimate {
  MomentSpec spec;
  double closed_form = 0.0;
  double mc_mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  double z_score() const;
  bool within(double sigmas) const;
};

inline constexpr std::size_t kMinMomentSamples = 1000;

/// Monte Carlo mean of the pattern's monomial over `samples` Haar draws. Samples
/// are split into fixed chunks with seeds derived from `seed`, so the result
/// does not depend on `threads`.
MomentEstimate verify_moment_mc(const MomentSpec& spec, std::size_t samples, std::uint64_t seed,
                                std::size_t threads = 0);

/// {d, pattern, closed_form, mc_mean, stderr, z_score, samples, seed}
nlohmann::json to_json(const MomentEstimate& e);

struct IsometryLiftReport {
  std::size_t d = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::vector<double> eigenvalues;  // of X X^T
  double factor = 1.0;              // 1 - sum (lambda - 1)^2 / (2 d^2 (d+2))
  double isometry_x = 0.0;
  double iso_gap_x = 0.0;
  double isometry_mean = 0.0;  // E_W I(BN(W X))
  double isometry_stderr = 0.0;
  double iso_gap_mean = 0.0;  // E_W phi(BN(W X))
  double iso_gap_stderr = 0.0;
  double isometry_bound = 0.0;  // I(X) / factor
  double iso_gap_bound = 0.0;   // phi(X) + log(factor)
  bool isometry_ok = false;
  bool iso_gap_ok = false;

  bool passed() const { return isometry_ok && iso_gap_ok; }
};

/// Checks E_W[I(BN(WX))] >= I(X)/factor and E_W[phi(BN(WX))] <= phi(X) +
/// log(factor), each within `sigmas` standard errors. X must be square with
/// unit rows (a bn_simplified output) and full rank.
IsometryLiftReport verify_isometry_lift(const RealMatrix& x, std::size_t samples, std::uint64_t seed,
                                        double sigmas = 3.0, std::size_t threads = 0);

nlohmann::json to_json(const IsometryLiftReport& r);

}  // namespace isolab
