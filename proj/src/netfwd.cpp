#include "isolab/netfwd.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "isolab/errors.hpp"
#include "isolab/matrix_io.hpp"

namespace isolab {

std::string to_string(WeightInit v) { return v == WeightInit::haar_orthogonal ? "haar" : "gaussian"; }

std::string to_string(Activation v) {
  switch (v) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::sin: return "sin";
  }
  return "identity";
}

std::string to_string(BnVariant v) { return v == BnVariant::simplified ? "simplified" : "standard"; }

WeightInit parse_weight_init(const std::string& s) {
  if (s == "haar" || s == "haar_orthogonal" || s == "orthogonal") return WeightInit::haar_orthogonal;
  if (s == "gaussian") return WeightInit::gaussian;
  throw std::invalid_argument("unknown weight init '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "sin") return Activation::sin;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

BnVariant parse_bn_variant(const std::string& s) {
  if (s == "simplified") return BnVariant::simplified;
  if (s == "standard") return BnVariant::standard;
  throw std::invalid_argument("unknown bn variant '" + s + "'");
}

GainSchedule GainSchedule::constant(double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("gain must be positive");
  return GainSchedule{Kind::constant, alpha, 0.0};
}

GainSchedule GainSchedule::power_law(double exponent) {
  if (!std::isfinite(exponent)) throw std::invalid_argument("gain exponent must be finite");
  return GainSchedule{Kind::power_law, 1.0, exponent};
}

double GainSchedule::at(std::size_t layer) const {
  if (layer == 0) throw std::invalid_argument("gain schedule layers start at 1");
  if (kind == Kind::constant) return alpha;
  return std::pow(static_cast<double>(layer), -exponent);
}

void NetworkConfig::validate() const {
  if (width < 2) throw std::invalid_argument("width must be >= 2");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (classes < 1 || classes > width) throw std::invalid_argument("classes must be in [1, width]");
  if (variance < 0.0) throw std::invalid_argument("variance must be positive");
  if (gain.kind == GainSchedule::Kind::constant && !(gain.alpha > 0.0)) {
    throw std::invalid_argument("gain must be positive");
  }
}

double NetworkConfig::gaussian_variance() const {
  return variance > 0.0 ? variance : 1.0 / static_cast<double>(width);
}

NetworkConfig network_config_from(const KeyValueConfig& kv, NetworkConfig cfg) {
  if (auto v = kv.get_u64("width")) cfg.width = *v;
  if (auto v = kv.get_u64("batch")) cfg.batch = *v;
  if (auto v = kv.get_u64("depth")) cfg.depth = *v;
  if (auto v = kv.get_string("init")) cfg.init = parse_weight_init(*v);
  if (auto v = kv.get_double("variance")) cfg.variance = *v;
  if (auto v = kv.get_string("activation")) cfg.activation = parse_activation(*v);
  const auto kind = kv.get_string("gain_kind");
  const auto alpha = kv.get_double("gain_alpha");
  const auto exponent = kv.get_double("gain_exponent");
  if (kind && *kind == "power_law") {
    cfg.gain = GainSchedule::power_law(exponent.value_or(0.0));
    if (alpha) cfg.gain.alpha = *alpha;
  } else if (!kind || *kind == "constant") {
    if (alpha) cfg.gain = GainSchedule::constant(*alpha);
    if (exponent) cfg.gain.exponent = *exponent;
  } else {
    throw std::invalid_argument("unknown gain_kind '" + *kind + "'");
  }
  if (auto v = kv.get_string("bn")) cfg.bn = parse_bn_variant(*v);
  if (auto v = kv.get_u64("classes")) cfg.classes = *v;
  if (auto v = kv.get_u64("seed")) cfg.seed = *v;
  cfg.validate();
  return cfg;
}

NetworkConfig parse_network_config(std::istream& in) {
  const auto kv = KeyValueConfig::parse(in);
  NetworkConfig cfg = network_config_from(kv);
  if (const auto extra = kv.unused_keys(); !extra.empty()) {
    throw FormatError("unknown network config key '" + extra.front() + "'");
  }
  return cfg;
}

NetworkConfig load_network_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse_network_config(in);
}

std::string to_config_text(const NetworkConfig& cfg) {
  std::ostringstream out;
  out << "width = " << cfg.width << '\n'
      << "batch = " << cfg.batch << '\n'
      << "depth = " << cfg.depth << '\n'
      << "init = " << to_string(cfg.init) << '\n'
      << "variance = " << format_double(cfg.variance) << '\n'
      << "activation = " << to_string(cfg.activation) << '\n'
      << "gain_kind = " << (cfg.gain.kind == GainSchedule::Kind::constant ? "constant" : "power_law") << '\n'
      << "gain_alpha = " << format_double(cfg.gain.alpha) << '\n'
      << "gain_exponent = " << format_double(cfg.gain.exponent) << '\n'
      << "bn = " << to_string(cfg.bn) << '\n'
      << "classes = " << cfg.classes << '\n'
      << "seed = " << cfg.seed << '\n';
  return out.str();
}

namespace {

RealMatrix draw_weight(const NetworkConfig& cfg, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const auto r = static_cast<std::size_t>(rows);
  const auto c = static_cast<std::size_t>(cols);
  if (cfg.init == WeightInit::gaussian) {
    // variance is quoted for fan-in d; rescale for a wider input layer
    const double v = cfg.gaussian_variance() * static_cast<double>(cfg.width) / static_cast<double>(c);
    return sample_gaussian(r, c, v, rng);
  }
  if (r == c) return sample_haar_orthogonal(r, rng);
  // Rectangular: orthonormal rows (r < c) or columns (r > c) from a Haar
  // matrix of the larger size.
  const std::size_t big = std::max(r, c);
  const RealMatrix q = sample_haar_orthogonal(big, rng);
  return r < c ? RealMatrix(q.topRows(rows)) : RealMatrix(q.leftCols(cols));
}

}  // namespace

Network init_network(const NetworkConfig& config, Rng& rng, std::size_t input_features) {
  config.validate();
  Network net;
  net.config = config;
  const auto d = static_cast<Eigen::Index>(config.width);
  const auto f = static_cast<Eigen::Index>(input_features == 0 ? config.width : input_features);
  net.weights.reserve(config.depth);
  for (std::size_t l = 0; l < config.depth; ++l) {
    net.weights.push_back(draw_weight(config, d, l == 0 ? f : d, rng));
  }
  const RealMatrix q = sample_haar_orthogonal(config.width, rng);
  net.classifier = q.topRows(static_cast<Eigen::Index>(config.classes));
  return net;
}

RealMatrix bn_simplified(const RealMatrix& x) {
  RealMatrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw DegenerateRowError(static_cast<std::size_t>(i));
    out.row(i) = x.row(i) / norm;
  }
  return out;
}

RealMatrix bn_standard(const RealMatrix& x, double eps) {
  RealMatrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / n;
    const auto centered = (x.row(i).array() - mean).matrix();
    const double var = centered.squaredNorm() / n;
    out.row(i) = centered / std::sqrt(var + eps);
  }
  return out;
}

RealMatrix batch_norm(const RealMatrix& x, BnVariant variant) {
  return variant == BnVariant::simplified ? bn_simplified(x) : bn_standard(x);
}

RealMatrix apply_activation(const RealMatrix& x, Activation kind, double alpha) {
  switch (kind) {
    case Activation::identity: return x;
    case Activation::tanh: return (alpha * x.array()).tanh().matrix();
    case Activation::sin: return (alpha * x.array()).sin().matrix();
  }
  return x;
}

RealMatrix activation_derivative(const RealMatrix& x, Activation kind, double alpha) {
  switch (kind) {
    case Activation::identity: return RealMatrix::Ones(x.rows(), x.cols());
    case Activation::tanh: {
      const auto t = (alpha * x.array()).tanh();
      return (alpha * (1.0 - t.square())).matrix();
    }
    case Activation::sin: return (alpha * (alpha * x.array()).cos()).matrix();
  }
  return RealMatrix::Ones(x.rows(), x.cols());
}

LayerTape forward(const Network& net, const RealMatrix& x0) {
  const auto& cfg = net.config;
  if (net.weights.empty()) throw std::invalid_argument("forward: network has no layers");
  if (net.weights.front().cols() != x0.rows()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x0.rows()) + " features, first layer expects " +
                                std::to_string(net.weights.front().cols()));
  }
  LayerTape tape;
  tape.activation = cfg.activation;
  tape.bn = cfg.bn;
  tape.layers.reserve(net.weights.size());
  RealMatrix x = x0;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    LayerRecord rec;
    rec.gain = cfg.activation == Activation::identity ? 1.0 : cfg.gain.at(l + 1);
    rec.pre_norm = net.weights[l] * x;
    rec.row_norms = rec.pre_norm.rowwise().norm();
    try {
      rec.normalized = batch_norm(rec.pre_norm, cfg.bn);
    } catch (const DegenerateRowError& e) {
      throw DegenerateRowError(e.row(), l + 1);
    }
    RealMatrix next = apply_activation(rec.normalized, cfg.activation, rec.gain);
    rec.input = std::move(x);
    x = std::move(next);
    tape.layers.push_back(std::move(rec));
  }
  tape.output = std::move(x);
  if (net.classifier.size() > 0) tape.logits = net.classifier * tape.output;
  return tape;
}

}  // namespace isolab
