#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "json.hpp"

#include "isolab/netfwd.hpp"

namespace isolab {

/// Layer gap of the explosion rate. Fixed so that measurements stay
/// comparable across sweeps.
inline constexpr std::size_t kRateGap = 10;
/// Default measurement layer (1-based), the first layer with a full gap
/// behind it.
inline constexpr std::size_t kDefaultRateLayer = kRateGap + 1;

/// R = (log||grad W_{l-10}|| - log||grad W_l||) / 10 with layers counted from
/// 1, so exploding gradients (larger toward the input) give R > 0.
struct RateMeasurement {
  std::size_t layer = kDefaultRateLayer;
  double alpha = 1.0;
  double rate = 0.0;       // mean over seeds
  double std_error = 0.0;  // over seeds
  std::size_t width = 0;
  std::size_t depth = 0;
  Activation activation = Activation::identity;
  std::uint64_t seed = 0;
  std::vector<double> per_seed;  // rate of seed s at index s
};

/// Rate of a single gradient report (1-based layer).
double explosion_rate(const std::vector<double>& log_grad_fro, std::size_t layer);

/// Mean rate over `seeds` networks drawn from `config` with constant gain
/// alpha, at initialization, on a gaussian d x n batch with random labels
/// and cross-entropy loss. Seed s uses derive_seed(config.seed, s).
RateMeasurement measure_rate(const NetworkConfig& config, std::size_t layer, double alpha, std::size_t seeds,
                             std::size_t threads = 0);

struct RateFit {
  double c1 = 0.0;
  double c2 = 0.0;
  double residual = 0.0;  // RMS in log-log space
  double alpha_min = 0.0;
  double alpha_max = 0.0;
  std::size_t points = 0;

  double predict(double alpha) const;
};

inline constexpr std::size_t kMinFitAlphas = 5;

/// OLS of log R on log alpha. Points with R <= 0 are dropped; fewer than five
/// distinct alphas left is an error.
RateFit fit_power_law(const std::vector<RateMeasurement>& measurements);
RateFit fit_power_law(const std::vector<double>& alphas, const std::vector<double>& rates);

/// Power-law gain alpha_l = l^(-k/c2). Throws when c2 <= 0 or k <= 1.
GainSchedule gain_schedule_from_fit(const RateFit& fit, double k, std::size_t depth);

/// sum_{l=1}^{L} c1 * l^(-k)
double predicted_cumulative_rate(const RateFit& fit, double k, std::size_t depth);
/// c1 * (1 + 1/(k-1)), a depth-free bound on the sum above.
double cumulative_rate_bound(const RateFit& fit, double k);

/// Header "activation,d,L,layer,alpha,rate,seed"; one row per seed.
void write_sweep_csv(const std::vector<RateMeasurement>& measurements, std::ostream& out);

/// {c1, c2, residual, n_points}, plus k when given.
nlohmann::json to_json(const RateFit& fit, std::optional<double> k = std::nullopt);

}  // namespace isolab
