#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "isolab/lab.hpp"

using namespace isolab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("isolab_lab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

KeyValueConfig kv_of(const std::string& text) {
  std::istringstream in(text);
  return KeyValueConfig::parse(in);
}

}  // namespace

TEST_CASE("plot data lines") {
  const fs::path dir = scratch("plot");
  Series s{"demo", {{0.0, {1.0}}, {1.0, {1.0, 3.0}}, {2.5, {2.0, 2.0, 2.0}}}};
  emit_plot_data(s, dir / "demo.dat");
  std::istringstream in(slurp(dir / "demo.dat"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "0 1");
  // mean 2, stderr 1, band 2 -+ 1.96
  CHECK(lines[1] == "1 2 0.040000000000000036 3.96");
  CHECK(lines[2] == "2.5 2 2 2");
  CHECK_THROWS(emit_plot_data(Series{"empty", {}}, dir / "empty.dat"));
  CHECK_THROWS(emit_plot_data(Series{"novals", {{1.0, {}}}}, dir / "novals.dat"));
  CHECK_THROWS(emit_plot_data(s, dir / "missing_dir" / "x.dat"));
  fs::remove_all(dir);
}

TEST_CASE("experiment kinds") {
  for (auto k : {ExperimentKind::isometry, ExperimentKind::gradients, ExperimentKind::degenerate,
                 ExperimentKind::weingarten, ExperimentKind::shaping, ExperimentKind::rank_audit, ExperimentKind::train}) {
    CHECK(parse_experiment_kind(to_string(k)) == k);
  }
  CHECK(to_string(ExperimentKind::rank_audit) == "rank-audit");
  CHECK_THROWS(parse_experiment_kind("plot"));
}

TEST_CASE("spec from config") {
  const ExperimentSpec s = spec_from_config(ExperimentKind::gradients, kv_of("depths = 5, 10\nseeds = 3\ninits = gaussian\nwidth = 8\nbatch = 8\nclasses = 4\n"));
  CHECK(s.depths == std::vector<std::size_t>{5, 10});
  CHECK(s.seeds == 3);
  CHECK(s.inits == std::vector<WeightInit>{WeightInit::gaussian});
  CHECK(s.network.width == 8);

  CHECK_THROWS_WITH(spec_from_config(ExperimentKind::gradients, kv_of("dpeths = 5\n")), doctest::Contains("dpeths"));
  CHECK_THROWS(spec_from_config(ExperimentKind::gradients, kv_of("depths = 5\n")));
  CHECK_THROWS(spec_from_config(ExperimentKind::shaping, kv_of("k = 1\n")));
  CHECK_THROWS(spec_from_config(ExperimentKind::isometry, kv_of("activation = tanh\n")));
  const ExperimentSpec t = spec_from_config(ExperimentKind::train, kv_of("shaped_exponent = none\n"));
  CHECK_FALSE(t.shaped_exponent.has_value());
  const ExperimentSpec u = spec_from_config(ExperimentKind::train, kv_of("shaped_exponent = 0.5\n"));
  CHECK(u.shaped_exponent == 0.5);

  const nlohmann::json j = to_json(s);
  CHECK(j["experiment"] == "gradients");
  CHECK(j["network"]["width"] == 8);
}

TEST_CASE("defaults") {
  const ExperimentSpec iso = default_spec(ExperimentKind::isometry);
  CHECK(iso.network.width == 32);
  CHECK(iso.network.depth == 200);
  CHECK(iso.seeds == 20);
  const ExperimentSpec g = default_spec(ExperimentKind::gradients);
  CHECK(g.depths == std::vector<std::size_t>{50, 100, 200, 500});
  const ExperimentSpec sh = default_spec(ExperimentKind::shaping);
  CHECK(sh.network.width == 100);
  CHECK(sh.alphas.size() >= kMinFitAlphas);
}

TEST_CASE("affine slope") {
  CHECK(affine_slope({1, 2, 3, 4}, {3, 5, 7, 9}) == doctest::Approx(2.0));
  CHECK(affine_slope({0, 10}, {1, 1}) == 0.0);
  CHECK_THROWS(affine_slope({1}, {1}));
  CHECK_THROWS(affine_slope({2, 2}, {1, 3}));
}

TEST_CASE("calibration recovers a synthetic decay length") {
  IsometryDecay dec;
  dec.width = 4;
  const double k = 50.0;
  for (int l = 0; l <= 200; ++l) dec.mean.push_back(0.5 * std::exp(-l / k));
  const double c = calibrate_c(dec);
  CHECK(c == doctest::Approx(k / (16.0 * (1.0 + 4.0 * 0.5))).epsilon(1e-9));
}

TEST_CASE("isometry decay is monotone and reproducible") {
  NetworkConfig cfg;
  cfg.width = cfg.batch = 8;
  cfg.classes = 4;
  cfg.depth = 60;
  const IsometryDecay a = isometry_decay(cfg, 4, 7, 0.01, 1);
  const IsometryDecay b = isometry_decay(cfg, 4, 7, 0.01, 3);
  CHECK(a.monotone_violations == 0);
  REQUIRE(a.runs.size() == 4);
  CHECK(a.runs == b.runs);
  CHECK(a.final_ratio < 1.0);
  CHECK(a.mean.size() == 61);
  CHECK(a.theory.size() == 61);
  CHECK(a.k_theory == doctest::Approx(0.01 * 64.0 * (1.0 + 8.0 * a.mean[0])));
}

TEST_CASE("gradient sweep") {
  NetworkConfig cfg;
  cfg.width = cfg.batch = 8;
  cfg.classes = 4;
  const GradientSweep a = gradient_sweep(cfg, {5, 10, 20}, 3, 11, "gaussian", LossKind::cross_entropy_softmax, 1);
  const GradientSweep b = gradient_sweep(cfg, {5, 10, 20}, 3, 11, "gaussian", LossKind::cross_entropy_softmax, 2);
  CHECK(a.log_grad_w1 == b.log_grad_w1);
  REQUIRE(a.mean.size() == 3);
  for (const auto& row : a.log_grad_w1) {
    CHECK(row.size() == 3);
    for (double v : row) CHECK(std::isfinite(v));
  }
  CHECK(a.slope == doctest::Approx(affine_slope({5, 10, 20}, a.mean)));
  CHECK_THROWS(gradient_sweep(cfg, {5, 10}, 1, 1, "cifar", LossKind::cross_entropy_softmax, 1));
}

TEST_CASE("training on a separable toy problem") {
  Rng rng(3);
  Batch data;
  const std::size_t n = 200;
  data.data.resize(6, static_cast<Eigen::Index>(n));
  data.labels.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t y = s % 2;
    data.labels[s] = y;
    for (Eigen::Index f = 0; f < 6; ++f) data.data(f, static_cast<Eigen::Index>(s)) = rng.normal() * 0.3;
    data.data(0, static_cast<Eigen::Index>(s)) += y == 0 ? 2.0 : -2.0;
  }
  NetworkConfig cfg;
  cfg.width = 8;
  cfg.batch = 20;
  cfg.depth = 3;
  cfg.classes = 2;
  cfg.bn = BnVariant::standard;
  cfg.seed = 4;
  const TrainRun run = train_network(cfg, data, 15, 0.05);
  REQUIRE(run.records.size() == 16);
  CHECK(run.finite);
  CHECK(run.records.back().loss < run.records.front().loss);
  CHECK(run.records.back().accuracy > 0.9);
  CHECK(std::isnan(run.records.front().iso_gap_w[0]));
  CHECK(std::abs(run.records.front().iso_gap_w[1]) < 1e-12);
  CHECK(run.max_grad_ratio >= 1.0);

  data.labels[0] = 5;
  CHECK_THROWS(train_network(cfg, data, 1, 0.05));
}

TEST_CASE("datasets load from csv") {
  const fs::path dir = scratch("dataset");
  {
    std::ofstream out(dir / "toy.csv");
    out << "1,0.5,0.5\n0,0,1\n";
  }
  const Batch b = load_dataset(dir / "toy.csv");
  CHECK(b.samples() == 2);
  CHECK(b.features() == 2);
  CHECK_THROWS(load_dataset(dir / "nothing_here"));
  fs::remove_all(dir);
}

TEST_CASE("run_experiment writes spec.json and summary.json") {
  const fs::path dir = scratch("run");
  ExperimentSpec spec = spec_from_config(ExperimentKind::weingarten,
                                         kv_of("dims = 3\nsamples = 2000\nlift_dims = 4\nlift_matrices = 2\nlift_samples = 200\n"));
  spec.out_dir = dir;
  const ExperimentResult res = run_experiment(spec);
  CHECK(fs::exists(dir / "spec.json"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "weingarten.json"));
  const auto sidecar = nlohmann::json::parse(slurp(dir / "spec.json"));
  CHECK(sidecar["experiment"] == "weingarten");
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(summary["passed"] == res.passed());
  CHECK(!res.checks.empty());

  // same spec, same bytes
  const std::string first = slurp(dir / "weingarten.json");
  run_experiment(spec);
  CHECK(slurp(dir / "weingarten.json") == first);
  fs::remove_all(dir);
}
