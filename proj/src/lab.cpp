#include "isolab/lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "isolab/errors.hpp"
#include "isolab/matrix_io.hpp"
#include "isolab/parallel.hpp"

#ifndef ISOLAB_SOURCE_DIR
#define ISOLAB_SOURCE_DIR "."
#endif

namespace isolab {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string fmt(double x) { return format_double(x); }

template <typename T>
std::vector<std::size_t> to_sizes(const std::vector<T>& v) {
  return std::vector<std::size_t>(v.begin(), v.end());
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? kNaN : pairwise_sum(v) / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::isometry: return "isometry";
    case ExperimentKind::gradients: return "gradients";
    case ExperimentKind::degenerate: return "degenerate";
    case ExperimentKind::weingarten: return "weingarten";
    case ExperimentKind::shaping: return "shaping";
    case ExperimentKind::rank_audit: return "rank-audit";
    case ExperimentKind::train: return "train";
  }
  return "isometry";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::isometry, ExperimentKind::gradients, ExperimentKind::degenerate,
                 ExperimentKind::weingarten, ExperimentKind::shaping, ExperimentKind::rank_audit,
                 ExperimentKind::train}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown experiment '" + s + "'");
}

fs::path calibration_path() {
  if (const char* env = std::getenv("ISOLAB_CALIBRATION")) return env;
  return fs::path(ISOLAB_SOURCE_DIR) / "data" / "calibration.cfg";
}

KeyValueConfig load_calibration() {
  const fs::path p = calibration_path();
  if (!fs::exists(p)) return {};
  return KeyValueConfig::load(p);
}

fs::path default_mnist_dir() {
  if (const char* env = std::getenv("ISOLAB_MNIST_DIR")) {
    if (fs::exists(env)) return env;
    return {};
  }
  const fs::path p = fs::path(ISOLAB_SOURCE_DIR) / "data" / "mnist5k";
  return fs::exists(p / "train-images-idx3-ubyte") ? p : fs::path();
}

ExperimentSpec default_spec(ExperimentKind kind) {
  ExperimentSpec s;
  s.kind = kind;
  const KeyValueConfig calib = load_calibration();
  switch (kind) {
    case ExperimentKind::isometry:
      s.network.width = s.network.batch = 32;
      s.network.depth = 200;
      s.seeds = 20;
      s.c_cal = calib.get_double("c_cal").value_or(0.0);
      break;
    case ExperimentKind::gradients:
      s.network.width = s.network.batch = 32;
      s.depths = {50, 100, 200, 500};
      s.inits = {WeightInit::haar_orthogonal, WeightInit::gaussian};
      break;
    case ExperimentKind::degenerate:
      s.network.width = s.network.batch = 10;
      s.depths = {50, 100, 200, 500};
      s.inits = {WeightInit::haar_orthogonal};
      break;
    case ExperimentKind::weingarten:
      s.dims = {3, 4, 8};
      s.lift_dims = {4, 8};
      break;
    case ExperimentKind::shaping:
      s.network.width = s.network.batch = 100;
      s.network.activation = Activation::tanh;
      s.network.bn = BnVariant::standard;
      s.alphas = {0.25, 0.35, 0.5, 0.7, 1.0, 1.4, 2.0};
      s.depths = {50, 100, 200, 300};
      s.rate_layer = 100;
      s.rate_depth = 200;
      s.seeds = 4;
      break;
    case ExperimentKind::rank_audit:
      s.audit_sizes = {128, 256};
      s.dataset = default_mnist_dir().string();
      break;
    case ExperimentKind::train:
      s.network.width = s.network.batch = 100;
      s.network.bn = BnVariant::standard;
      s.depths = {10, 50, 100};
      s.seeds = 1;
      s.dataset = default_mnist_dir().string();
      if (auto g = calib.get_double("tanh_gain_exponent")) s.shaped_exponent = *g;
      break;
  }
  return s;
}

void ExperimentSpec::validate() const {
  network.validate();
  if (seeds == 0) throw std::invalid_argument("seeds must be >= 1");
  switch (kind) {
    case ExperimentKind::isometry:
      if (network.batch != network.width) throw std::invalid_argument("isometry decay needs batch = width");
      if (network.activation != Activation::identity || network.bn != BnVariant::simplified) {
        throw std::invalid_argument("isometry decay runs the identity network with simplified BN");
      }
      break;
    case ExperimentKind::gradients:
    case ExperimentKind::degenerate:
      if (depths.size() < 2) throw std::invalid_argument("gradient sweep needs at least two depths");
      if (inits.empty()) throw std::invalid_argument("inits must not be empty");
      break;
    case ExperimentKind::weingarten:
      if (dims.empty() && lift_dims.empty()) throw std::invalid_argument("dims must not be empty");
      if (samples < kMinMomentSamples) throw std::invalid_argument("samples must be >= 1000");
      break;
    case ExperimentKind::shaping:
      if (alphas.empty() || depths.empty()) throw std::invalid_argument("alphas and depths must not be empty");
      if (rate_layer > rate_depth || rate_layer <= kRateGap) throw std::invalid_argument("rate_layer must be in (10, rate_depth]");
      if (!(k > 1.0)) throw std::invalid_argument("k must be > 1");
      break;
    case ExperimentKind::rank_audit:
      if (audit_sizes.empty()) throw std::invalid_argument("audit_sizes must not be empty");
      break;
    case ExperimentKind::train:
      if (depths.empty()) throw std::invalid_argument("depths must not be empty");
      if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
      if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
      break;
  }
}

ExperimentSpec spec_from_config(ExperimentKind kind, const KeyValueConfig& kv) {
  ExperimentSpec s = default_spec(kind);
  s.network = network_config_from(kv, s.network);
  if (auto v = kv.get_u64_list("depths")) s.depths = to_sizes(*v);
  if (auto v = kv.get_u64_list("widths")) s.widths = to_sizes(*v);
  if (auto v = kv.get_double_list("alphas")) s.alphas = *v;
  if (auto v = kv.get_u64("seeds")) s.seeds = *v;
  if (auto v = kv.get_string_list("inits")) {
    s.inits.clear();
    for (const auto& name : *v) s.inits.push_back(parse_weight_init(name));
  }
  if (auto v = kv.get_string("input")) s.input = *v;
  if (auto v = kv.get_string("dataset")) s.dataset = *v;
  if (auto v = kv.get_double("c_cal")) s.c_cal = *v;
  if (auto v = kv.get_double("max_final_ratio")) s.max_final_ratio = *v;
  if (auto v = kv.get_double("slope_band")) s.slope_band = *v;
  if (auto v = kv.get_string("loss")) s.loss = parse_loss_kind(*v);
  if (auto v = kv.get_u64_list("dims")) s.dims = to_sizes(*v);
  if (auto v = kv.get_u64("samples")) s.samples = *v;
  if (auto v = kv.get_u64_list("lift_dims")) s.lift_dims = to_sizes(*v);
  if (auto v = kv.get_u64("lift_matrices")) s.lift_matrices = *v;
  if (auto v = kv.get_u64("lift_samples")) s.lift_samples = *v;
  if (auto v = kv.get_double("k")) s.k = *v;
  if (auto v = kv.get_u64("rate_layer")) s.rate_layer = *v;
  if (auto v = kv.get_u64("rate_depth")) s.rate_depth = *v;
  if (auto v = kv.get_u64_list("audit_sizes")) s.audit_sizes = to_sizes(*v);
  if (auto v = kv.get_u64("trials")) s.trials = *v;
  if (auto v = kv.get_double("audit_min_rank_256")) s.audit_min_rank_256 = *v;
  if (auto v = kv.get_u64("epochs")) s.epochs = *v;
  if (auto v = kv.get_double("lr")) s.lr = *v;
  if (auto v = kv.get_u64("train_samples")) s.train_samples = *v;
  if (auto v = kv.get_double("min_accuracy")) s.min_accuracy = *v;
  if (auto v = kv.get_double("max_grad_ratio")) s.max_grad_ratio = *v;
  if (auto v = kv.get_double("max_mid_iso_gap")) s.max_mid_iso_gap = *v;
  if (auto v = kv.get_string("shaped_exponent")) {
    if (*v == "none") {
      s.shaped_exponent.reset();
    } else {
      s.shaped_exponent = parse_double(*v);
    }
  }
  if (const auto extra = kv.unused_keys(); !extra.empty()) {
    throw FormatError("unknown config key '" + extra.front() + "' for " + to_string(kind));
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const ExperimentSpec& s) {
  nlohmann::json net{{"width", s.network.width},
                     {"batch", s.network.batch},
                     {"depth", s.network.depth},
                     {"init", to_string(s.network.init)},
                     {"variance", s.network.variance},
                     {"activation", to_string(s.network.activation)},
                     {"gain_kind", s.network.gain.kind == GainSchedule::Kind::constant ? "constant" : "power_law"},
                     {"gain_alpha", s.network.gain.alpha},
                     {"gain_exponent", s.network.gain.exponent},
                     {"bn", to_string(s.network.bn)},
                     {"classes", s.network.classes},
                     {"seed", s.network.seed}};
  std::vector<std::string> inits;
  for (auto i : s.inits) inits.push_back(to_string(i));
  nlohmann::json j{{"experiment", to_string(s.kind)},
                   {"network", net},
                   {"depths", s.depths},
                   {"widths", s.widths},
                   {"alphas", s.alphas},
                   {"seeds", s.seeds},
                   {"inits", inits},
                   {"input", s.input},
                   {"dataset", s.dataset},
                   {"threads", s.threads},
                   {"c_cal", s.c_cal},
                   {"max_final_ratio", s.max_final_ratio},
                   {"slope_band", s.slope_band},
                   {"loss", to_string(s.loss)},
                   {"dims", s.dims},
                   {"samples", s.samples},
                   {"lift_dims", s.lift_dims},
                   {"lift_matrices", s.lift_matrices},
                   {"lift_samples", s.lift_samples},
                   {"k", s.k},
                   {"rate_layer", s.rate_layer},
                   {"rate_depth", s.rate_depth},
                   {"audit_sizes", s.audit_sizes},
                   {"trials", s.trials},
                   {"epochs", s.epochs},
                   {"lr", s.lr},
                   {"train_samples", s.train_samples},
                   {"min_accuracy", s.min_accuracy},
                   {"max_grad_ratio", s.max_grad_ratio},
                   {"max_mid_iso_gap", s.max_mid_iso_gap}};
  j["shaped_exponent"] = s.shaped_exponent ? nlohmann::json(*s.shaped_exponent) : nlohmann::json(nullptr);
  return j;
}

bool ExperimentResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

void emit_plot_data(const Series& series, const fs::path& path) {
  if (series.points.empty()) throw std::invalid_argument("emit_plot_data: series '" + series.name + "' is empty");
  std::ostringstream out;
  for (const auto& p : series.points) {
    if (p.values.empty()) throw std::invalid_argument("emit_plot_data: point without values in '" + series.name + "'");
    const MeanStderr ms = mean_stderr(p.values);
    out << fmt(p.x) << ' ' << fmt(ms.mean);
    if (p.values.size() > 1) out << ' ' << fmt(ms.mean - 1.96 * ms.std_error) << ' ' << fmt(ms.mean + 1.96 * ms.std_error);
    out << '\n';
  }
  write_text(path, out.str());
}

// ---------------------------------------------------------------- isometry

IsometryDecay isometry_decay(const NetworkConfig& cfg, std::size_t seeds, std::uint64_t seed, double c_cal,
                             std::size_t threads) {
  NetworkConfig c = cfg;
  c.activation = Activation::identity;
  c.bn = BnVariant::simplified;
  c.validate();
  const std::size_t d = c.width;
  const std::size_t depth = c.depth;
  IsometryDecay out;
  out.width = d;
  out.runs.assign(seeds, {});
  std::vector<std::size_t> violations(seeds, 0);
  parallel_for(seeds, threads, [&](std::size_t s) {
    Rng data_rng(derive_seed(seed, s, 0));
    Rng w_rng(derive_seed(seed, s, 1));
    const RealMatrix x0 = sample_gaussian(d, d, 1.0, data_rng);
    const double gap0 = isometry_gap(x0);
    if (!std::isfinite(gap0)) throw std::runtime_error("isometry decay: input batch is rank-deficient");
    std::vector<double>& run = out.runs[s];
    run.reserve(depth + 1);
    run.push_back(gap0);
    RealMatrix x = x0;
    for (std::size_t l = 0; l < depth; ++l) {
      const RealMatrix w = sample_haar_orthogonal(d, w_rng);
      x = bn_simplified(w * x);
      run.push_back(isometry_gap(x));
      if (run.back() > run[run.size() - 2] + 1e-9) ++violations[s];
    }
  });
  out.mean.assign(depth + 1, 0.0);
  std::vector<double> ratios;
  for (std::size_t s = 0; s < seeds; ++s) {
    for (std::size_t l = 0; l <= depth; ++l) out.mean[l] += out.runs[s][l] / static_cast<double>(seeds);
    out.monotone_violations += violations[s];
    ratios.push_back(out.runs[s][depth] / out.runs[s][0]);
  }
  out.final_ratio = mean_of(ratios);
  const double dd = static_cast<double>(d);
  out.k_theory = c_cal * dd * dd * (1.0 + dd * out.mean[0]);
  out.theory.assign(depth + 1, kNaN);
  if (out.k_theory > 0.0) {
    for (std::size_t l = 0; l <= depth; ++l) out.theory[l] = out.mean[0] * std::exp(-static_cast<double>(l) / out.k_theory);
  }
  return out;
}

double affine_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("affine_slope: need >= 2 paired points");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("affine_slope: x values are all equal");
  return sxy / sxx;
}

double calibrate_c(const IsometryDecay& decay) {
  const std::size_t depth = decay.mean.size() - 1;
  std::vector<double> x;
  std::vector<double> y;
  for (std::size_t l = depth / 2; l <= depth; ++l) {
    if (decay.mean[l] > 0.0 && std::isfinite(decay.mean[l])) {
      x.push_back(static_cast<double>(l));
      y.push_back(std::log(decay.mean[l]));
    }
  }
  if (x.size() < 2) return kNaN;
  const double slope = affine_slope(x, y);
  if (!(slope < 0.0)) return kNaN;
  const double d = static_cast<double>(decay.width);
  return (-1.0 / slope) / (d * d * (1.0 + d * decay.mean[0]));
}

// ---------------------------------------------------------------- gradients

namespace {

RealMatrix sweep_input(const std::string& input, std::size_t d, std::size_t n, Rng& rng) {
  if (input == "orthogonal_cols") {
    SynthSpec spec;
    spec.kind = SynthKind::orthogonal_cols;
    return synth_batch(spec, d, n, rng).data;
  }
  RealMatrix x = sample_gaussian(d, n, 1.0, rng);
  if (input == "duplicated") {
    if (n < 2) throw std::invalid_argument("duplicated input needs batch >= 2");
    x.col(1) = x.col(0);
  } else if (input != "gaussian") {
    throw std::invalid_argument("unknown input kind '" + input + "'");
  }
  return x;
}

}  // namespace

GradientSweep gradient_sweep(const NetworkConfig& cfg, const std::vector<std::size_t>& depths, std::size_t seeds,
                             std::uint64_t seed, const std::string& input, LossKind loss, std::size_t threads) {
  GradientSweep out;
  out.depths = depths;
  out.log_grad_w1.assign(depths.size(), std::vector<double>(seeds, kNaN));
  parallel_for(depths.size() * seeds, threads, [&](std::size_t task) {
    const std::size_t di = task / seeds;
    const std::size_t s = task % seeds;
    Rng data_rng(derive_seed(seed, s, 0));
    const RealMatrix x0 = sweep_input(input, cfg.width, cfg.batch, data_rng);
    std::vector<std::size_t> labels(cfg.batch);
    for (auto& y : labels) y = data_rng.below(cfg.classes);
    NetworkConfig c = cfg;
    c.depth = depths[di];
    Rng w_rng(derive_seed(seed, s, 1000 + depths[di]));
    const Network net = init_network(c, w_rng);
    BackwardOptions opts;
    opts.skip_iso_gap = true;
    opts.keep_weight_grads = false;
    const GradientReport rep = backward(net, forward(net, x0), labels, loss, opts);
    out.log_grad_w1[di][s] = rep.layers.front().log_grad_fro;
  });
  std::vector<double> x;
  for (std::size_t di = 0; di < depths.size(); ++di) {
    out.mean.push_back(mean_of(out.log_grad_w1[di]));
    x.push_back(static_cast<double>(depths[di]));
  }
  out.slope = depths.size() >= 2 ? affine_slope(x, out.mean) : kNaN;
  return out;
}

// ---------------------------------------------------------------- training

Batch load_dataset(const fs::path& path) {
  if (path.empty()) throw std::runtime_error("no dataset given");
  if (fs::is_directory(path)) {
    return load_idx(path / "train-images-idx3-ubyte", path / "train-labels-idx1-ubyte");
  }
  if (!fs::exists(path)) throw std::runtime_error("dataset not found: " + path.string());
  return load_csv_batch(path);
}

namespace {

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(const Network& net, const Batch& data, LossKind loss) {
  const std::size_t n = net.config.batch;
  const std::size_t batches = data.samples() / n;
  EvalResult r;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    const auto cols = static_cast<Eigen::Index>(n);
    const RealMatrix x = data.data.middleCols(static_cast<Eigen::Index>(b * n), cols);
    const LayerTape tape = forward(net, x);
    std::vector<std::size_t> labels(data.labels.begin() + static_cast<std::ptrdiff_t>(b * n),
                                    data.labels.begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
    r.loss += loss_and_logit_grad(tape.logits, labels, loss).loss;
    for (Eigen::Index j = 0; j < cols; ++j) {
      Eigen::Index arg = 0;
      tape.logits.col(j).maxCoeff(&arg);
      if (static_cast<std::size_t>(arg) == labels[static_cast<std::size_t>(j)]) ++correct;
    }
  }
  r.loss /= static_cast<double>(batches);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(batches * n);
  return r;
}

TrainRecord snapshot(const Network& net, const Batch& data, const Batch& telemetry, LossKind loss, std::size_t epoch) {
  TrainRecord rec;
  rec.epoch = epoch;
  const EvalResult ev = evaluate(net, data, loss);
  rec.loss = ev.loss;
  rec.accuracy = ev.accuracy;
  for (const auto& w : net.weights) rec.iso_gap_w.push_back(w.rows() == w.cols() ? isometry_gap(w) : kNaN);
  BackwardOptions opts;
  opts.skip_iso_gap = true;
  opts.keep_weight_grads = false;
  const GradientReport rep = backward(net, forward(net, telemetry.data), telemetry.labels, loss, opts);
  for (const auto& lg : rep.layers) rec.grad_fro.push_back(lg.grad_fro);
  return rec;
}

}  // namespace

TrainRun train_network(const NetworkConfig& cfg, const Batch& data, std::size_t epochs, double lr, LossKind loss) {
  cfg.validate();
  const std::size_t n = cfg.batch;
  if (data.samples() < n) throw std::invalid_argument("training set smaller than one batch");
  for (std::size_t y : data.labels) {
    if (y >= cfg.classes) throw std::invalid_argument("label " + std::to_string(y) + " >= classes");
  }
  Rng rng(cfg.seed);
  Network net = init_network(cfg, rng, data.features());
  std::vector<std::size_t> order(data.samples());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto shuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  };
  shuffle();
  const Batch telemetry = data.select(std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n)));
  // batch statistics need mixed-class evaluation batches, so evaluate in a
  // fixed shuffled order rather than file order
  const Batch eval_data = data.select(order);

  TrainRun run;
  run.depth = cfg.depth;
  run.activation = cfg.activation;
  run.gain = cfg.gain;
  run.records.push_back(snapshot(net, eval_data, telemetry, loss, 0));
  const std::vector<double> g0 = run.records.front().grad_fro;
  const std::size_t mid = cfg.depth / 2;
  auto track = [&](const TrainRecord& rec) {
    for (std::size_t l = 0; l < rec.grad_fro.size(); ++l) {
      if (!std::isfinite(rec.grad_fro[l])) run.finite = false;
      if (g0[l] > 0.0) run.max_grad_ratio = std::max(run.max_grad_ratio, rec.grad_fro[l] / g0[l]);
    }
    if (mid > 0 && mid < rec.iso_gap_w.size()) run.max_mid_iso_gap = std::max(run.max_mid_iso_gap, rec.iso_gap_w[mid]);
  };
  track(run.records.front());

  const std::size_t batches = data.samples() / n;
  BackwardOptions opts;
  opts.skip_iso_gap = true;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    shuffle();
    for (std::size_t b = 0; b < batches; ++b) {
      const Batch mb = data.select(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(b * n),
                                                            order.begin() + static_cast<std::ptrdiff_t>((b + 1) * n)));
      const GradientReport rep = backward(net, forward(net, mb.data), mb.labels, loss, opts);
      if (!std::isfinite(rep.loss)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      for (const auto& lg : rep.layers) {
        if (!std::isfinite(lg.grad_fro)) {
          throw std::runtime_error("non-finite gradient at layer " + std::to_string(lg.layer) + ", epoch " +
                                   std::to_string(epoch));
        }
      }
      net.weights = sgd_step(net.weights, rep.weight_grads, lr);
      net.classifier -= lr * rep.classifier_grad;
    }
    run.records.push_back(snapshot(net, eval_data, telemetry, loss, epoch));
    track(run.records.back());
  }
  return run;
}

// ---------------------------------------------------------------- runners

namespace {

Check make_check(std::string name, bool passed, std::string detail) {
  return Check{std::move(name), passed, std::move(detail)};
}

void run_isometry(const ExperimentSpec& spec, ExperimentResult& res) {
  std::vector<std::size_t> widths = spec.widths.empty() ? std::vector<std::size_t>{spec.network.width} : spec.widths;
  std::ostringstream runs_csv;
  runs_csv << "d,seed,layer,iso_gap\n";
  nlohmann::json per_width = nlohmann::json::array();
  for (std::size_t d : widths) {
    NetworkConfig cfg = spec.network;
    cfg.width = cfg.batch = d;
    const IsometryDecay dec = isometry_decay(cfg, spec.seeds, spec.network.seed, spec.c_cal, spec.threads);
    for (std::size_t s = 0; s < dec.runs.size(); ++s) {
      for (std::size_t l = 0; l < dec.runs[s].size(); ++l) runs_csv << d << ',' << s << ',' << l << ',' << fmt(dec.runs[s][l]) << '\n';
    }
    Series mean{"iso_gap_d" + std::to_string(d), {}};
    for (std::size_t l = 0; l <= cfg.depth; ++l) {
      SeriesPoint p{static_cast<double>(l), {}};
      for (const auto& run : dec.runs) p.values.push_back(run[l]);
      mean.points.push_back(std::move(p));
    }
    const fs::path mean_path = spec.out_dir / ("isometry_d" + std::to_string(d) + ".dat");
    emit_plot_data(mean, mean_path);
    res.files.push_back(mean_path);
    if (dec.k_theory > 0.0) {
      Series theory{"theory_d" + std::to_string(d), {}};
      for (std::size_t l = 0; l <= cfg.depth; ++l) theory.points.push_back({static_cast<double>(l), {dec.theory[l]}});
      const fs::path tp = spec.out_dir / ("isometry_theory_d" + std::to_string(d) + ".dat");
      emit_plot_data(theory, tp);
      res.files.push_back(tp);
    }
    const std::string tag = "d=" + std::to_string(d);
    res.checks.push_back(make_check("monotone " + tag, dec.monotone_violations == 0,
                                    std::to_string(dec.monotone_violations) + " violations"));
    res.checks.push_back(make_check("decay ratio " + tag, dec.final_ratio < spec.max_final_ratio,
                                    "mean phi(X_L)/phi(X_0) = " + fmt(dec.final_ratio) + ", limit " + fmt(spec.max_final_ratio)));
    per_width.push_back({{"d", d},
                         {"phi0_mean", dec.mean.front()},
                         {"phiL_mean", dec.mean.back()},
                         {"final_ratio", dec.final_ratio},
                         {"monotone_violations", dec.monotone_violations},
                         {"k_theory", dec.k_theory},
                         {"c_fit", calibrate_c(dec)}});
  }
  const fs::path csv = spec.out_dir / "isometry_runs.csv";
  write_text(csv, runs_csv.str());
  res.files.push_back(csv);
  res.summary["widths"] = per_width;
}

void run_gradients(const ExperimentSpec& spec, ExperimentResult& res, bool degenerate) {
  std::ostringstream csv;
  csv << "init,input,depth,seed,log_grad_w1\n";
  nlohmann::json sweeps = nlohmann::json::array();
  std::vector<std::pair<std::string, std::string>> variants;
  for (auto init : spec.inits) {
    if (degenerate) {
      variants.emplace_back(to_string(init), spec.input == "duplicated" ? "gaussian" : spec.input);
      variants.emplace_back(to_string(init), "duplicated");
    } else {
      variants.emplace_back(to_string(init), spec.input);
    }
  }
  for (const auto& [init_name, input] : variants) {
    NetworkConfig cfg = spec.network;
    cfg.init = parse_weight_init(init_name);
    const GradientSweep sw = gradient_sweep(cfg, spec.depths, spec.seeds, spec.network.seed, input, spec.loss, spec.threads);
    Series series{init_name + "_" + input, {}};
    for (std::size_t di = 0; di < sw.depths.size(); ++di) {
      series.points.push_back({static_cast<double>(sw.depths[di]), sw.log_grad_w1[di]});
      for (std::size_t s = 0; s < spec.seeds; ++s) {
        csv << init_name << ',' << input << ',' << sw.depths[di] << ',' << s << ',' << fmt(sw.log_grad_w1[di][s]) << '\n';
      }
    }
    const fs::path plot = spec.out_dir / ("gradients_" + series.name + ".dat");
    emit_plot_data(series, plot);
    res.files.push_back(plot);

    // per-layer report of seed 0 at the deepest setting
    {
      Rng data_rng(derive_seed(spec.network.seed, 0, 0));
      const RealMatrix x0 = sweep_input(input, cfg.width, cfg.batch, data_rng);
      std::vector<std::size_t> labels(cfg.batch);
      for (auto& y : labels) y = data_rng.below(cfg.classes);
      cfg.depth = spec.depths.back();
      Rng w_rng(derive_seed(spec.network.seed, 0, 1000 + cfg.depth));
      const Network net = init_network(cfg, w_rng);
      BackwardOptions opts;
      opts.keep_weight_grads = false;
      const GradientReport rep = backward(net, forward(net, x0), labels, spec.loss, opts);
      const fs::path rp = spec.out_dir / ("gradient_report_" + series.name + "_L" + std::to_string(cfg.depth) + ".csv");
      auto out = open_out(rp);
      write_gradient_csv(rep, out);
      res.files.push_back(rp);
    }

    bool increasing = true;
    for (std::size_t i = 1; i < sw.mean.size(); ++i) increasing = increasing && sw.mean[i] > sw.mean[i - 1];
    const std::string tag = init_name + "/" + input;
    const bool exploding_expected = cfg.init == WeightInit::gaussian || input == "duplicated";
    if (exploding_expected) {
      res.checks.push_back(make_check("explodes " + tag, sw.slope > spec.slope_band && increasing,
                                      "slope " + fmt(sw.slope) + (increasing ? ", increasing" : ", not increasing")));
    } else {
      res.checks.push_back(make_check("bounded " + tag, std::abs(sw.slope) < spec.slope_band, "slope " + fmt(sw.slope)));
    }
    sweeps.push_back({{"init", init_name}, {"input", input}, {"depths", sw.depths}, {"mean_log_grad_w1", sw.mean}, {"slope", sw.slope}});
  }
  const fs::path p = spec.out_dir / "gradient_sweep.csv";
  write_text(p, csv.str());
  res.files.push_back(p);
  res.summary["sweeps"] = sweeps;
}

MomentEstimate moment_with_rerun(const MomentSpec& m, std::size_t samples, std::uint64_t seed, std::size_t threads,
                                 bool& rerun) {
  MomentEstimate e = verify_moment_mc(m, samples, seed, threads);
  rerun = false;
  if (!e.within(3.0)) {
    rerun = true;
    e = verify_moment_mc(m, samples, mix64(seed), threads);
  }
  return e;
}

void run_weingarten(const ExperimentSpec& spec, ExperimentResult& res) {
  const std::uint64_t base = spec.network.seed;
  nlohmann::json moments = nlohmann::json::array();
  for (std::size_t d : spec.dims) {
    for (auto pat : {MomentPattern::e1, MomentPattern::e2, MomentPattern::deg2}) {
      MomentSpec m;
      m.d = d;
      m.pattern = pat;
      bool rerun = false;
      const MomentEstimate e = moment_with_rerun(m, spec.samples, derive_seed(base, d, static_cast<std::uint64_t>(pat)),
                                                 spec.threads, rerun);
      nlohmann::json j = to_json(e);
      j["rerun"] = rerun;
      moments.push_back(j);
      res.checks.push_back(make_check(to_string(pat) + " d=" + std::to_string(d), e.within(3.0),
                                      "z = " + fmt(e.z_score()) + (rerun ? " (after rerun)" : "")));
    }
  }
  const fs::path mp = spec.out_dir / "weingarten.json";
  write_json(mp, moments);
  res.files.push_back(mp);

  nlohmann::json lifts = nlohmann::json::array();
  for (std::size_t d : spec.lift_dims) {
    Rng rng(derive_seed(base, d, 7777));
    // equality case
    const RealMatrix q = sample_haar_orthogonal(d, rng);
    const IsometryLiftReport eq = verify_isometry_lift(q, std::max<std::size_t>(spec.lift_samples / 10, 100), rng.next_u64(), 3.0, spec.threads);
    const bool equal = std::abs(eq.isometry_mean - 1.0) <= 1e-9 && std::abs(eq.isometry_bound - 1.0) <= 1e-9 &&
                       std::abs(eq.iso_gap_mean) <= 1e-9 && std::abs(eq.iso_gap_bound) <= 1e-9;
    res.checks.push_back(make_check("lift equality d=" + std::to_string(d), equal,
                                    "E[I] = " + fmt(eq.isometry_mean) + ", bound " + fmt(eq.isometry_bound)));
    nlohmann::json je = to_json(eq);
    je["case"] = "orthogonal";
    lifts.push_back(je);
    std::size_t failures = 0;
    for (std::size_t m = 0; m < spec.lift_matrices; ++m) {
      const RealMatrix x = bn_simplified(sample_gaussian(d, d, 1.0, rng));
      const std::uint64_t s = derive_seed(base, d, 10000 + m);
      IsometryLiftReport rep = verify_isometry_lift(x, spec.lift_samples, s, 3.0, spec.threads);
      bool rerun = false;
      if (!rep.passed()) {
        rerun = true;
        rep = verify_isometry_lift(x, spec.lift_samples, mix64(s), 3.0, spec.threads);
      }
      if (!rep.passed()) ++failures;
      nlohmann::json j = to_json(rep);
      j["case"] = "random";
      j["rerun"] = rerun;
      lifts.push_back(j);
    }
    res.checks.push_back(make_check("lift bound d=" + std::to_string(d), failures == 0,
                                    std::to_string(failures) + " of " + std::to_string(spec.lift_matrices) + " failed"));
  }
  const fs::path lp = spec.out_dir / "isometry_lift.json";
  write_json(lp, lifts);
  res.files.push_back(lp);
}

void run_shaping(const ExperimentSpec& spec, ExperimentResult& res) {
  NetworkConfig rate_cfg = spec.network;
  rate_cfg.depth = spec.rate_depth;
  std::vector<RateMeasurement> ms;
  for (double a : spec.alphas) ms.push_back(measure_rate(rate_cfg, spec.rate_layer, a, spec.seeds, spec.threads));
  {
    const fs::path p = spec.out_dir / "rate_sweep.csv";
    auto out = open_out(p);
    write_sweep_csv(ms, out);
    res.files.push_back(p);
    Series series{"rate", {}};
    for (const auto& m : ms) series.points.push_back({m.alpha, m.per_seed});
    const fs::path pp = spec.out_dir / "rate_sweep.dat";
    emit_plot_data(series, pp);
    res.files.push_back(pp);
  }
  std::vector<double> rates;
  for (const auto& m : ms) rates.push_back(m.rate);
  res.summary["alphas"] = spec.alphas;
  res.summary["rates"] = rates;
  res.summary["k"] = spec.k;

  if (spec.network.activation == Activation::identity) {
    double worst = 0.0;
    for (double r : rates) worst = std::max(worst, std::abs(r));
    res.checks.push_back(make_check("identity rate ~ 0", worst < 0.05, "max |R| = " + fmt(worst)));
    return;
  }

  RateFit fit;
  try {
    fit = fit_power_law(ms);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string(e.what()) + "; alphas [" + join(spec.alphas) + "], rates [" + join(rates) + "]");
  }
  const fs::path fp = spec.out_dir / "rate_fit.json";
  write_json(fp, to_json(fit, spec.k));
  res.files.push_back(fp);
  res.summary["fit"] = to_json(fit, spec.k);
  res.checks.push_back(make_check("fit c2 > 0", fit.c2 > 0.0, "c2 = " + fmt(fit.c2) + ", c1 = " + fmt(fit.c1)));
  if (!(fit.c2 > 0.0)) return;

  const GainSchedule shaped = gain_schedule_from_fit(fit, spec.k, spec.depths.back());
  res.summary["gain_exponent"] = shaped.exponent;
  res.summary["cumulative_rate_bound"] = cumulative_rate_bound(fit, spec.k);

  NetworkConfig unshaped_cfg = spec.network;
  unshaped_cfg.gain = GainSchedule::constant(1.0);
  NetworkConfig shaped_cfg = spec.network;
  shaped_cfg.gain = shaped;
  std::ostringstream csv;
  csv << "schedule,depth,seed,log_grad_w1\n";
  std::vector<std::vector<double>> means;
  for (const auto& [name, cfg] : {std::pair<std::string, NetworkConfig>{"unshaped", unshaped_cfg},
                                  std::pair<std::string, NetworkConfig>{"shaped", shaped_cfg}}) {
    const GradientSweep sw = gradient_sweep(cfg, spec.depths, spec.seeds, spec.network.seed, "gaussian", spec.loss, spec.threads);
    Series series{name, {}};
    for (std::size_t di = 0; di < sw.depths.size(); ++di) {
      series.points.push_back({static_cast<double>(sw.depths[di]), sw.log_grad_w1[di]});
      for (std::size_t s = 0; s < spec.seeds; ++s) csv << name << ',' << sw.depths[di] << ',' << s << ',' << fmt(sw.log_grad_w1[di][s]) << '\n';
    }
    const fs::path pp = spec.out_dir / ("shaping_gradients_" + name + ".dat");
    emit_plot_data(series, pp);
    res.files.push_back(pp);
    res.summary[name + "_mean_log_grad_w1"] = sw.mean;
    means.push_back(sw.mean);
  }
  const fs::path gp = spec.out_dir / "shaping_gradients.csv";
  write_text(gp, csv.str());
  res.files.push_back(gp);
  if (spec.depths.size() >= 2) {
    const std::size_t last = spec.depths.size() - 1;
    const double inc_unshaped = means[0][last] - means[0][last - 1];
    const double inc_shaped = means[1][last] - means[1][last - 1];
    res.summary["increment_unshaped"] = inc_unshaped;
    res.summary["increment_shaped"] = inc_shaped;
    res.checks.push_back(make_check("shaped increment < half unshaped", inc_shaped < 0.5 * inc_unshaped,
                                    "L " + std::to_string(spec.depths[last - 1]) + "->" + std::to_string(spec.depths[last]) +
                                        ": shaped " + fmt(inc_shaped) + ", unshaped " + fmt(inc_unshaped)));
  }
}

std::string dataset_tag(const std::string& path) {
  const fs::path p(path);
  const std::string name = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
  return name.empty() ? "dataset" : name;
}

void run_rank_audit(const ExperimentSpec& spec, ExperimentResult& res) {
  const Batch data = load_dataset(spec.dataset);
  const std::string tag = dataset_tag(spec.dataset);
  std::vector<RankAudit> all;
  nlohmann::json sizes = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.audit_sizes.size(); ++i) {
    const std::size_t n = spec.audit_sizes[i];
    const auto rows = rank_audit(data, spec.trials, n, derive_seed(spec.network.seed, n), tag, spec.threads);
    std::vector<double> ranks;
    std::vector<double> cos;
    for (const auto& r : rows) {
      ranks.push_back(static_cast<double>(r.rank));
      cos.push_back(r.mean_cosine);
    }
    const MeanStderr mr = mean_stderr(ranks);
    sizes.push_back({{"n", n}, {"mean_rank", mr.mean}, {"std_rank", mr.stddev}, {"mean_cosine", mean_of(cos)}});
    if (n == 128) res.checks.push_back(make_check("rank n=128", mr.mean == 128.0, "mean rank " + fmt(mr.mean)));
    if (n == 256) {
      res.checks.push_back(make_check("rank n=256", mr.mean >= spec.audit_min_rank_256 && mr.mean <= 256.0,
                                      "mean rank " + fmt(mr.mean)));
    }
    all.insert(all.end(), rows.begin(), rows.end());
  }
  const fs::path p = spec.out_dir / "rank_audit.csv";
  auto out = open_out(p);
  write_audit_csv(all, out);
  res.files.push_back(p);
  res.summary["dataset"] = spec.dataset;
  res.summary["samples"] = data.samples();
  res.summary["features"] = data.features();
  res.summary["sizes"] = sizes;
}

void run_train(const ExperimentSpec& spec, ExperimentResult& res) {
  Batch data = load_dataset(spec.dataset);
  if (spec.train_samples > 0 && spec.train_samples < data.samples()) {
    std::vector<std::size_t> idx(spec.train_samples);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    data = data.select(idx);
  }
  struct Plan {
    std::string name;
    NetworkConfig cfg;
    bool shaped;
  };
  std::vector<Plan> plans;
  for (std::size_t depth : spec.depths) {
    NetworkConfig cfg = spec.network;
    cfg.depth = depth;
    plans.push_back({to_string(cfg.activation) + "_L" + std::to_string(depth), cfg, false});
  }
  if (spec.shaped_exponent) {
    NetworkConfig cfg = spec.network;
    cfg.depth = *std::max_element(spec.depths.begin(), spec.depths.end());
    cfg.activation = Activation::tanh;
    cfg.gain = GainSchedule::power_law(*spec.shaped_exponent);
    plans.push_back({"shaped_tanh_L" + std::to_string(cfg.depth), cfg, true});
  }
  std::vector<TrainRun> runs(plans.size());
  parallel_for(plans.size(), spec.threads, [&](std::size_t i) {
    runs[i] = train_network(plans[i].cfg, data, spec.epochs, spec.lr, spec.loss);
  });

  std::ostringstream log;
  log << "run,depth,activation,gain_exponent,epoch,loss,accuracy,max_grad_ratio,mid_iso_gap_w\n";
  std::ostringstream layers;
  layers << "run,depth,epoch,layer,iso_gap_w,grad_fro\n";
  nlohmann::json summary = nlohmann::json::array();
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const TrainRun& run = runs[i];
    const Plan& plan = plans[i];
    const std::size_t mid = run.depth / 2;
    Series acc{plan.name, {}};
    for (const auto& rec : run.records) {
      double ratio = 0.0;
      for (std::size_t l = 0; l < rec.grad_fro.size(); ++l) ratio = std::max(ratio, rec.grad_fro[l] / run.records.front().grad_fro[l]);
      const double mid_gap = mid < rec.iso_gap_w.size() ? rec.iso_gap_w[mid] : kNaN;
      log << plan.name << ',' << run.depth << ',' << to_string(run.activation) << ','
          << fmt(run.gain.kind == GainSchedule::Kind::power_law ? run.gain.exponent : 0.0) << ',' << rec.epoch << ','
          << fmt(rec.loss) << ',' << fmt(rec.accuracy) << ',' << fmt(ratio) << ',' << fmt(mid_gap) << '\n';
      for (std::size_t l = 0; l < rec.grad_fro.size(); ++l) {
        layers << plan.name << ',' << run.depth << ',' << rec.epoch << ',' << (l + 1) << ',' << fmt(rec.iso_gap_w[l]) << ','
               << fmt(rec.grad_fro[l]) << '\n';
      }
      acc.points.push_back({static_cast<double>(rec.epoch), {rec.accuracy}});
    }
    const fs::path pp = spec.out_dir / ("train_accuracy_" + plan.name + ".dat");
    emit_plot_data(acc, pp);
    res.files.push_back(pp);

    const double final_acc = run.records.back().accuracy;
    res.checks.push_back(make_check(plan.name + " finite", run.finite, run.finite ? "ok" : "non-finite gradient norm"));
    res.checks.push_back(make_check(plan.name + " grad ratio", run.max_grad_ratio < spec.max_grad_ratio,
                                    "max grad/init = " + fmt(run.max_grad_ratio)));
    if (plan.shaped) {
      res.checks.push_back(make_check(plan.name + " mid-layer orthogonality", run.max_mid_iso_gap < spec.max_mid_iso_gap,
                                      "max phi(W_mid) = " + fmt(run.max_mid_iso_gap)));
    } else {
      res.checks.push_back(make_check(plan.name + " accuracy", final_acc > spec.min_accuracy, "final train accuracy " + fmt(final_acc)));
    }
    summary.push_back({{"run", plan.name},
                       {"depth", run.depth},
                       {"final_accuracy", final_acc},
                       {"final_loss", run.records.back().loss},
                       {"max_grad_ratio", run.max_grad_ratio},
                       {"max_mid_iso_gap_w", run.max_mid_iso_gap}});
  }
  const fs::path lp = spec.out_dir / "train_log.csv";
  write_text(lp, log.str());
  const fs::path yp = spec.out_dir / "train_layers.csv";
  write_text(yp, layers.str());
  res.files.push_back(lp);
  res.files.push_back(yp);
  res.summary["runs"] = summary;
  res.summary["samples"] = data.samples();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  fs::create_directories(spec.out_dir);
  const fs::path sidecar = spec.out_dir / "spec.json";
  write_json(sidecar, to_json(spec));
  ExperimentResult res;
  res.files.push_back(sidecar);
  switch (spec.kind) {
    case ExperimentKind::isometry: run_isometry(spec, res); break;
    case ExperimentKind::gradients: run_gradients(spec, res, false); break;
    case ExperimentKind::degenerate: run_gradients(spec, res, true); break;
    case ExperimentKind::weingarten: run_weingarten(spec, res); break;
    case ExperimentKind::shaping: run_shaping(spec, res); break;
    case ExperimentKind::rank_audit: run_rank_audit(spec, res); break;
    case ExperimentKind::train: run_train(spec, res); break;
  }
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : res.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  res.summary["experiment"] = to_string(spec.kind);
  res.summary["checks"] = checks;
  res.summary["passed"] = res.passed();
  const fs::path sp = spec.out_dir / "summary.json";
  write_json(sp, res.summary);
  res.files.push_back(sp);
  return res;
}

}  // namespace isolab
