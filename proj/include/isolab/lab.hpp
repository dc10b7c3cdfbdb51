#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "isolab/databatch.hpp"
#include "isolab/kvconfig.hpp"
#include "isolab/netfwd.hpp"
#include "isolab/netgrad.hpp"
#include "isolab/shaping.hpp"
#include "isolab/weingarten.hpp"

namespace isolab {

enum class ExperimentKind { isometry, gradients, degenerate, weingarten, shaping, rank_audit, train };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(const std::string& s);

/// Everything an experiment needs. Defaults depend on the kind; see
/// default_spec().
struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::isometry;
  NetworkConfig network;
  std::vector<std::size_t> depths;
  std::vector<std::size_t> widths;
  std::vector<double> alphas;
  std::size_t seeds = 10;
  std::vector<WeightInit> inits;
  std::string input = "gaussian";  // gaussian | duplicated | orthogonal_cols
  std::string dataset;             // IDX directory or label-first CSV file
  std::filesystem::path out_dir;
  std::size_t threads = 1;

  // isometry
  double c_cal = 0.0;
  double max_final_ratio = 1e-3;

  // gradients / degenerate
  double slope_band = 0.01;
  LossKind loss = LossKind::cross_entropy_softmax;

  // weingarten
  std::vector<std::size_t> dims;
  std::size_t samples = 100000;
  std::vector<std::size_t> lift_dims;
  std::size_t lift_matrices = 50;
  std::size_t lift_samples = 10000;

  // shaping
  double k = 2.0;
  std::size_t rate_layer = kDefaultRateLayer;
  std::size_t rate_depth = 200;

  // rank-audit
  std::vector<std::size_t> audit_sizes;
  std::size_t trials = 100;
  double audit_min_rank_256 = 245.0;

  // train
  std::size_t epochs = 30;
  double lr = 0.001;
  std::size_t train_samples = 5000;
  double min_accuracy = 0.8;
  double max_grad_ratio = 10.0;
  double max_mid_iso_gap = 0.1;
  std::optional<double> shaped_exponent;  // adds a shaped tanh run at the largest depth

  void validate() const;
};

ExperimentSpec default_spec(ExperimentKind kind);

/// Applies config keys over default_spec(kind). Unknown keys are an error.
ExperimentSpec spec_from_config(ExperimentKind kind, const KeyValueConfig& kv);

nlohmann::json to_json(const ExperimentSpec& spec);

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentResult {
  std::vector<Check> checks;
  nlohmann::json summary;
  std::vector<std::filesystem::path> files;

  bool passed() const;
};

/// Plot series: one x per point with per-seed y values.
struct SeriesPoint {
  double x = 0.0;
  std::vector<double> values;
};

struct Series {
  std::string name;
  std::vector<SeriesPoint> points;
};

/// Whitespace-separated "x y" lines, or "x y y_lo y_hi" with the 95% band
/// mean +- 1.96 stderr when a point has more than one value. No header.
/// Throws on an empty series or an IO failure.
void emit_plot_data(const Series& series, const std::filesystem::path& path);

// ---- experiments ----

struct IsometryDecay {
  std::size_t width = 0;
  std::vector<std::vector<double>> runs;  // [seed][layer 0..L]
  std::vector<double> mean;               // over seeds, per layer
  std::vector<double> theory;             // overlay, per layer
  double k_theory = 0.0;
  std::size_t monotone_violations = 0;
  double final_ratio = 0.0;  // mean over seeds of phi(X_L)/phi(X_0)
};

/// Identity/Haar simplified network on a full-rank gaussian d x d batch.
IsometryDecay isometry_decay(const NetworkConfig& cfg, std::size_t seeds, std::uint64_t seed, double c_cal,
                             std::size_t threads);

/// Least-squares decay length of log mean phi against the layer over the
/// second half of the curve, converted to C = k / (d^2 (1 + d phi0)).
double calibrate_c(const IsometryDecay& decay);

struct GradientSweep {
  std::string label;
  std::vector<std::size_t> depths;
  std::vector<std::vector<double>> log_grad_w1;  // [depth][seed]
  std::vector<double> mean;                      // per depth
  double slope = 0.0;                            // OLS of mean on depth
};

/// log||dL/dW_1|| at initialization for every depth and seed. The input
/// batch and labels of seed s are shared across depths; `input` is
/// "gaussian", "orthogonal_cols" or "duplicated" (one repeated column).
GradientSweep gradient_sweep(const NetworkConfig& cfg, const std::vector<std::size_t>& depths, std::size_t seeds,
                             std::uint64_t seed, const std::string& input, LossKind loss, std::size_t threads);

double affine_slope(const std::vector<double>& x, const std::vector<double>& y);

struct TrainRecord {
  std::size_t epoch = 0;  // 0 is the state at initialization
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> iso_gap_w;  // per layer; NaN for the non-square input layer
  std::vector<double> grad_fro;   // per layer, on the fixed telemetry batch
};

struct TrainRun {
  std::size_t depth = 0;
  Activation activation = Activation::identity;
  GainSchedule gain;
  std::vector<TrainRecord> records;
  bool finite = true;
  double max_grad_ratio = 0.0;    // max over epochs and layers of grad / grad at init
  double max_mid_iso_gap = 0.0;   // max over epochs of phi(W_{L/2})
};

/// Mini-batch SGD on `data`. Throws std::runtime_error naming the layer when
/// the loss or a gradient turns non-finite.
TrainRun train_network(const NetworkConfig& cfg, const Batch& data, std::size_t epochs, double lr,
                       LossKind loss = LossKind::cross_entropy_softmax);

/// Loads `path` as an IDX directory (train-images-idx3-ubyte,
/// train-labels-idx1-ubyte) or a label-first CSV file.
Batch load_dataset(const std::filesystem::path& path);

/// Default location of the bundled MNIST subset: $ISOLAB_MNIST_DIR, else
/// <source>/data/mnist5k. Empty when neither exists.
std::filesystem::path default_mnist_dir();

/// Runs one experiment, writes its artifacts and spec.json under
/// spec.out_dir, and returns the checks.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// Reads the frozen calibration file (key = value).
KeyValueConfig load_calibration();
std::filesystem::path calibration_path();

}  // namespace isolab
