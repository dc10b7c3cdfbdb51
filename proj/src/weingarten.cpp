#include "isolab/weingarten.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "isolab/netfwd.hpp"
#include "isolab/parallel.hpp"
#include "isolab/rng.hpp"

namespace isolab {

namespace {

constexpr std::size_t kChunk = 1000;

std::size_t chunk_count(std::size_t samples) { return (samples + kChunk - 1) / kChunk; }

// Runs body(w_rng, slot) for every sample; slot indices are global and the
// generator of chunk c depends only on (seed, c).
template <typename Body>
void for_each_sample(std::size_t samples, std::uint64_t seed, std::size_t threads, Body body) {
  parallel_for(chunk_count(samples), threads, [&](std::size_t c) {
    Rng rng(derive_seed(seed, c));
    const std::size_t end = std::min(samples, (c + 1) * kChunk);
    for (std::size_t s = c * kChunk; s < end; ++s) body(rng, s);
  });
}

}  // namespace

std::string to_string(MomentPattern p) {
  switch (p) {
    case MomentPattern::e1: return "E1";
    case MomentPattern::e2: return "E2";
    case MomentPattern::deg2: return "deg2";
  }
  return "E1";
}

MomentPattern parse_moment_pattern(const std::string& s) {
  if (s == "E1" || s == "e1") return MomentPattern::e1;
  if (s == "E2" || s == "e2") return MomentPattern::e2;
  if (s == "deg2") return MomentPattern::deg2;
  throw std::invalid_argument("unknown moment pattern '" + s + "'");
}

void MomentSpec::validate() const {
  if (pattern != MomentPattern::deg2 && d < 3) {
    throw std::invalid_argument("degree-4 moments need d >= 3, got d = " + std::to_string(d));
  }
  if (d < 1) throw std::invalid_argument("d must be >= 1");
  if (i >= d || k >= d) throw std::invalid_argument("moment index out of range");
  if (pattern == MomentPattern::deg2) return;
  if (j >= d || i == j) throw std::invalid_argument("moment needs distinct row indices i != j < d");
  if (pattern == MomentPattern::e1 && (q >= d || k == q)) {
    throw std::invalid_argument("E1 needs distinct column indices k != q < d");
  }
}

double weingarten_moment(const MomentSpec& spec) {
  spec.validate();
  const double d = static_cast<double>(spec.d);
  switch (spec.pattern) {
    case MomentPattern::e1: return (d + 1.0) / (d * (d + 2.0) * (d - 1.0));
    case MomentPattern::e2: return (d - 1.0) / (d * (d + 2.0) * (d - 1.0));
    case MomentPattern::deg2: return 1.0 / d;
  }
  return 0.0;
}

double MomentEstimate::z_score() const {
  if (std_error > 0.0) return (mc_mean - closed_form) / std_error;
  return mc_mean == closed_form ? 0.0 : std::numeric_limits<double>::infinity();
}

bool MomentEstimate::within(double sigmas) const { return std::abs(z_score()) <= sigmas; }

MomentEstimate verify_moment_mc(const MomentSpec& spec, std::size_t samples, std::uint64_t seed,
                                std::size_t threads) {
  spec.validate();
  if (samples < kMinMomentSamples) {
    throw std::invalid_argument("verify_moment_mc: need at least " + std::to_string(kMinMomentSamples) + " samples");
  }
  const auto i = static_cast<Eigen::Index>(spec.i);
  const auto j = static_cast<Eigen::Index>(spec.j);
  const auto k = static_cast<Eigen::Index>(spec.k);
  const auto q = static_cast<Eigen::Index>(spec.q);
  std::vector<double> values(samples);
  for_each_sample(samples, seed, threads, [&](Rng& rng, std::size_t s) {
    const RealMatrix w = sample_haar_orthogonal(spec.d, rng);
    const double a = w(i, k) * w(i, k);
    switch (spec.pattern) {
      case MomentPattern::e1: values[s] = a * w(j, q) * w(j, q); break;
      case MomentPattern::e2: values[s] = a * w(j, k) * w(j, k); break;
      case MomentPattern::deg2: values[s] = a; break;
    }
  });
  const MeanStderr ms = mean_stderr(values);
  MomentEstimate out;
  out.spec = spec;
  out.closed_form = weingarten_moment(spec);
  out.mc_mean = ms.mean;
  out.std_error = ms.std_error;
  out.samples = samples;
  out.seed = seed;
  return out;
}

nlohmann::json to_json(const MomentEstimate& e) {
  return nlohmann::json{{"d", e.spec.d},
                        {"pattern", to_string(e.spec.pattern)},
                        {"closed_form", e.closed_form},
                        {"mc_mean", e.mc_mean},
                        {"stderr", e.std_error},
                        {"z_score", e.z_score()},
                        {"samples", e.samples},
                        {"seed", e.seed}};
}

IsometryLiftReport verify_isometry_lift(const RealMatrix& x, std::size_t samples, std::uint64_t seed, double sigmas,
                                        std::size_t threads) {
  if (x.rows() != x.cols()) throw std::invalid_argument("verify_isometry_lift: X must be square");
  if (samples < 2) throw std::invalid_argument("verify_isometry_lift: need at least 2 samples");
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (std::abs(x.row(r).norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("verify_isometry_lift: X must have unit rows (apply bn_simplified first)");
    }
  }
  IsometryLiftReport rep;
  rep.d = static_cast<std::size_t>(x.rows());
  rep.samples = samples;
  rep.seed = seed;
  const SpectralSummary summary = spectral_summary(x);
  if (!std::isfinite(summary.iso_gap)) throw std::invalid_argument("verify_isometry_lift: X is rank-deficient");
  rep.eigenvalues = summary.eigenvalues;
  const double d = static_cast<double>(rep.d);
  double dev = 0.0;
  for (double lambda : rep.eigenvalues) dev += (lambda - 1.0) * (lambda - 1.0);
  rep.factor = 1.0 - dev / (2.0 * d * d * (d + 2.0));
  rep.iso_gap_x = summary.iso_gap;
  rep.isometry_x = std::exp(-summary.iso_gap);
  rep.isometry_bound = rep.isometry_x / rep.factor;
  rep.iso_gap_bound = rep.iso_gap_x + std::log(rep.factor);

  std::vector<double> iso(samples);
  std::vector<double> gap(samples);
  for_each_sample(samples, seed, threads, [&](Rng& rng, std::size_t s) {
    const RealMatrix w = sample_haar_orthogonal(rep.d, rng);
    const double g = isometry_gap(bn_simplified(w * x));
    gap[s] = g;
    iso[s] = std::exp(-g);
  });
  const MeanStderr mi = mean_stderr(iso);
  const MeanStderr mg = mean_stderr(gap);
  rep.isometry_mean = mi.mean;
  rep.isometry_stderr = mi.std_error;
  rep.iso_gap_mean = mg.mean;
  rep.iso_gap_stderr = mg.std_error;
  // A 1e-12 floor keeps the orthogonal equality case from failing on rounding.
  rep.isometry_ok = rep.isometry_mean >= rep.isometry_bound - sigmas * rep.isometry_stderr - 1e-12;
  rep.iso_gap_ok = rep.iso_gap_mean <= rep.iso_gap_bound + sigmas * rep.iso_gap_stderr + 1e-12;
  return rep;
}

nlohmann::json to_json(const IsometryLiftReport& r) {
  return nlohmann::json{{"d", r.d},
                        {"samples", r.samples},
                        {"seed", r.seed},
                        {"eigenvalues", r.eigenvalues},
                        {"factor", r.factor},
                        {"isometry_x", r.isometry_x},
                        {"iso_gap_x", r.iso_gap_x},
                        {"isometry_mean", r.isometry_mean},
                        {"isometry_stderr", r.isometry_stderr},
                        {"isometry_bound", r.isometry_bound},
                        {"iso_gap_mean", r.iso_gap_mean},
                        {"iso_gap_stderr", r.iso_gap_stderr},
                        {"iso_gap_bound", r.iso_gap_bound},
                        {"passed", r.passed()}};
}

}  // namespace isolab
