#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "isolab/kvconfig.hpp"
#include "isolab/specmat.hpp"

namespace isolab {

enum class WeightInit { haar_orthogonal, gaussian };
enum class Activation { identity, tanh, sin };
enum class BnVariant { simplified, standard };

/// Epsilon of the standard (mean-subtracting) batch norm. The simplified
/// variant used by the theory path has none.
inline constexpr double kStandardBnEpsilon = 1e-5;

std::string to_string(WeightInit v);
std::string to_string(Activation v);
std::string to_string(BnVariant v);
WeightInit parse_weight_init(const std::string& s);
Activation parse_activation(const std::string& s);
BnVariant parse_bn_variant(const std::string& s);

/// Per-layer pre-activation gain. Layers are numbered from 1, so the power
/// law alpha_l = l^(-g) is defined at the first layer.
struct GainSchedule {
  enum class Kind { constant, power_law };

  Kind kind = Kind::constant;
  double alpha = 1.0;     // constant gain
  double exponent = 0.0;  // power-law gain exponent g

  static GainSchedule constant(double alpha);
  static GainSchedule power_law(double exponent);

  double at(std::size_t layer) const;
};

struct NetworkConfig {
  std::size_t width = 32;  // d
  std::size_t batch = 32;  // n
  std::size_t depth = 10;  // L
  WeightInit init = WeightInit::haar_orthogonal;
  double variance = 0.0;  // gaussian init; 0 selects 1/d
  Activation activation = Activation::identity;
  GainSchedule gain{};
  BnVariant bn = BnVariant::simplified;
  std::size_t classes = 10;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on violated invariants.
  void validate() const;
  double gaussian_variance() const;
};

/// Reads the documented NetworkConfig keys (width, batch, depth, init,
/// variance, activation, gain_kind, gain_alpha, gain_exponent, bn, classes,
/// seed); missing keys keep their defaults.
NetworkConfig network_config_from(const KeyValueConfig& kv, NetworkConfig base = {});
NetworkConfig parse_network_config(std::istream& in);
NetworkConfig load_network_config(const std::filesystem::path& path);
/// Emits every documented key, one "key = value" per line.
std::string to_config_text(const NetworkConfig& cfg);

/// Weights of one network. weights[0] maps the input features to the width
/// (d x f; f = d on the theory path); the rest are d x d. The classifier is
/// C x d with orthonormal rows.
struct Network {
  NetworkConfig config;
  std::vector<RealMatrix> weights;
  RealMatrix classifier;
};

/// Draws a network for `config`. With haar init every weight is Haar
/// orthogonal and the classifier is the first C rows of a Haar d x d matrix.
/// `input_features` = 0 means the input has `width` features.
Network init_network(const NetworkConfig& config, Rng& rng, std::size_t input_features = 0);

/// Row i of the output is X_i / ||X_i||. Throws DegenerateRowError on a zero
/// row.
RealMatrix bn_simplified(const RealMatrix& x);

/// Per-row mean subtraction and division by sqrt(biased variance + eps).
RealMatrix bn_standard(const RealMatrix& x, double eps = kStandardBnEpsilon);

RealMatrix batch_norm(const RealMatrix& x, BnVariant variant);

/// Elementwise sigma(alpha * x). The identity ignores alpha.
RealMatrix apply_activation(const RealMatrix& x, Activation kind, double alpha);

/// Elementwise d/dx sigma(alpha * x) = alpha * sigma'(alpha * x).
RealMatrix activation_derivative(const RealMatrix& x, Activation kind, double alpha);

struct LayerRecord {
  RealMatrix input;       // X_l
  RealMatrix pre_norm;    // H_l = W_l X_l
  RealMatrix normalized;  // B_l = BN(H_l)
  RealVector row_norms;   // ||H_l,i||
  double gain = 1.0;
};

/// Cached forward state for exact backpropagation.
struct LayerTape {
  Activation activation = Activation::identity;
  BnVariant bn = BnVariant::simplified;
  std::vector<LayerRecord> layers;
  RealMatrix output;  // X_L
  RealMatrix logits;  // classifier * X_L
};

/// Runs X_{l+1} = sigma(alpha_l * BN(W_l X_l)) over every layer of `net`.
/// Errors from the simplified BN are rethrown annotated with the layer index
/// (counted from 1).
LayerTape forward(const Network& net, const RealMatrix& x0);

}  // namespace isolab
