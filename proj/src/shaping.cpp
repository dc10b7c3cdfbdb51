#include "isolab/shaping.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <stdexcept>

#include "isolab/matrix_io.hpp"
#include "isolab/netgrad.hpp"
#include "isolab/parallel.hpp"

namespace isolab {

double explosion_rate(const std::vector<double>& log_grad_fro, std::size_t layer) {
  if (layer <= kRateGap || layer > log_grad_fro.size()) {
    throw std::invalid_argument("rate layer must be in [" + std::to_string(kRateGap + 1) + ", " +
                                std::to_string(log_grad_fro.size()) + "], got " + std::to_string(layer));
  }
  return (log_grad_fro[layer - 1 - kRateGap] - log_grad_fro[layer - 1]) / static_cast<double>(kRateGap);
}

RateMeasurement measure_rate(const NetworkConfig& config, std::size_t layer, double alpha, std::size_t seeds,
                             std::size_t threads) {
  if (!(alpha > 0.0)) throw std::invalid_argument("measure_rate: alpha must be positive");
  if (seeds == 0) throw std::invalid_argument("measure_rate: need at least one seed");
  if (layer > config.depth) throw std::invalid_argument("measure_rate: layer exceeds depth");
  NetworkConfig cfg = config;
  cfg.gain = GainSchedule::constant(alpha);
  cfg.validate();

  RateMeasurement m;
  m.layer = layer;
  m.alpha = alpha;
  m.width = cfg.width;
  m.depth = cfg.depth;
  m.activation = cfg.activation;
  m.seed = cfg.seed;
  m.per_seed.assign(seeds, 0.0);
  parallel_for(seeds, threads, [&](std::size_t s) {
    Rng rng(derive_seed(cfg.seed, s));
    const Network net = init_network(cfg, rng);
    const RealMatrix x0 = sample_gaussian(cfg.width, cfg.batch, 1.0, rng);
    std::vector<std::size_t> labels(cfg.batch);
    for (auto& y : labels) y = rng.below(cfg.classes);
    const LayerTape tape = forward(net, x0);
    BackwardOptions opts;
    opts.skip_iso_gap = true;
    opts.keep_weight_grads = false;
    const GradientReport rep = backward(net, tape, labels, LossKind::cross_entropy_softmax, opts);
    std::vector<double> logs;
    logs.reserve(rep.layers.size());
    for (const auto& lg : rep.layers) logs.push_back(lg.log_grad_fro);
    m.per_seed[s] = explosion_rate(logs, layer);
  });
  const MeanStderr ms = mean_stderr(m.per_seed);
  m.rate = ms.mean;
  m.std_error = ms.std_error;
  return m;
}

double RateFit::predict(double alpha) const { return c1 * std::pow(alpha, c2); }

RateFit fit_power_law(const std::vector<double>& alphas, const std::vector<double>& rates) {
  if (alphas.size() != rates.size()) throw std::invalid_argument("fit_power_law: size mismatch");
  std::vector<double> lx;
  std::vector<double> ly;
  std::set<double> distinct;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(rates[i] > 0.0) || !(alphas[i] > 0.0) || !std::isfinite(rates[i])) continue;
    lx.push_back(std::log(alphas[i]));
    ly.push_back(std::log(rates[i]));
    distinct.insert(alphas[i]);
  }
  if (distinct.size() < kMinFitAlphas) {
    throw std::invalid_argument("fit_power_law: need " + std::to_string(kMinFitAlphas) +
                                " distinct alphas with positive rate, have " + std::to_string(distinct.size()));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  RateFit fit;
  fit.c2 = sxy / sxx;
  const double intercept = my - fit.c2 * mx;
  fit.c1 = std::exp(intercept);
  double ss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - (intercept + fit.c2 * lx[i]);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / n);
  fit.alpha_min = *distinct.begin();
  fit.alpha_max = *distinct.rbegin();
  fit.points = lx.size();
  return fit;
}

RateFit fit_power_law(const std::vector<RateMeasurement>& measurements) {
  std::vector<double> a;
  std::vector<double> r;
  for (const auto& m : measurements) {
    a.push_back(m.alpha);
    r.push_back(m.rate);
  }
  return fit_power_law(a, r);
}

GainSchedule gain_schedule_from_fit(const RateFit& fit, double k, std::size_t depth) {
  if (!(fit.c2 > 0.0)) throw std::invalid_argument("gain schedule needs a fitted c2 > 0");
  if (!(k > 1.0)) throw std::invalid_argument("gain schedule needs k > 1");
  if (depth == 0) throw std::invalid_argument("gain schedule needs depth >= 1");
  return GainSchedule::power_law(k / fit.c2);
}

double predicted_cumulative_rate(const RateFit& fit, double k, std::size_t depth) {
  double s = 0.0;
  for (std::size_t l = depth; l >= 1; --l) s += std::pow(static_cast<double>(l), -k);
  return fit.c1 * s;
}

double cumulative_rate_bound(const RateFit& fit, double k) {
  if (!(k > 1.0)) throw std::invalid_argument("cumulative rate bound needs k > 1");
  return fit.c1 * (1.0 + 1.0 / (k - 1.0));
}

void write_sweep_csv(const std::vector<RateMeasurement>& measurements, std::ostream& out) {
  out << "activation,d,L,layer,alpha,rate,seed\n";
  for (const auto& m : measurements) {
    for (std::size_t s = 0; s < m.per_seed.size(); ++s) {
      out << to_string(m.activation) << ',' << m.width << ',' << m.depth << ',' << m.layer << ','
          << format_double(m.alpha) << ',' << format_double(m.per_seed[s]) << ',' << s << '\n';
    }
  }
}

nlohmann::json to_json(const RateFit& fit, std::optional<double> k) {
  nlohmann::json j{{"c1", fit.c1}, {"c2", fit.c2}, {"residual", fit.residual}, {"n_points", fit.points}};
  if (k) {
    j["k"] = *k;
    if (fit.c2 > 0.0) j["gain_exponent"] = *k / fit.c2;
  }
  return j;
}

}  // namespace isolab
