// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "genemu/config.hpp"
#include "genemu/errors.hpp"
#include "genemu/experiment.hpp"

using namespace genemu;
namespace fs = std::filesystem;

namespace {

/// Small, fast config: short trajectories, a rapidly switching fault
/// process so every trajectory sees both states regardless of seed, and an
/// explicit fault reactance so no calibration sweep runs.
ExperimentConfig tiny(ModelKind model, Regime regime, std::uint64_t seed,
                      const std::string& out_name) {
  ExperimentConfig cfg;
  cfg.model = model;
  cfg.regime = regime;
  cfg.seed = seed;
  cfg.out_dir = (fs::temp_directory_path() / out_name).string();
  cfg.fault.reactance = 1.0;
  cfg.telegraph.rate_to_fault = 0.5;
  cfg.telegraph.rate_to_clear = 0.5;
  cfg.data.train_trajectories = 3;
  cfg.data.test_trajectories = 2;
  cfg.data.duration_seconds = 12.0;
  cfg.var.p_max = 3;
  cfg.lstm.hidden_dim = 4;
  cfg.lstm.num_layers = 1;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 8;
  cfg.train.base_window_len = 16;
  cfg.train.window_len_jitter = 4;
  cfg.fine_tune.epochs = 1;
  cfg.diag.duration_seconds = 30.0;
  cfg.diag.max_lag = 3;
  return cfg;
}

bool same_series(const MultiSeries& a, const MultiSeries& b) {
  if (a.channels.size() != b.channels.size()) return false;
  for (std::size_t c = 0; c < a.channels.size(); ++c) {
    if (a.channels[c].label != b.channels[c].label) return false;
    if (a.channels[c].values != b.channels[c].values) return false;
  }
  return true;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string first_line(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  return line;
}

long count_lines(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  long n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

bool manifest_has(const RunManifest& m, const std::string& rel) {
  for (const auto& f : m.files)
    if (f.path == rel) return true;
  return false;
}

void scrub(const fs::path& dir) {
  std::error_code ec;
  fs::remove_all(dir, ec);
}

}  // namespace

TEST_CASE("telemetry bundle follows the regime and model recipe") {
  SUBCASE("regular splits share one fault and skip the adapt set") {
    const auto cfg = tiny(ModelKind::Var, Regime::Regular, 11, "genemu_tb1");
    const TelemetryBundle b = generate_telemetry(cfg);
    CHECK(b.train.size() == 3);
    CHECK(b.test.size() == 2);
    CHECK(b.adapt.empty());
    CHECK(b.train_fault.resistance == b.test_fault.resistance);
    CHECK(b.train_fault.reactance == 1.0);
    CHECK(b.train[0].has_channel("fault"));
    CHECK(b.train[0].length() == 121);
  }

  SUBCASE("fine-tuned model in the regular regime adapts on its train set") {
    const auto cfg = tiny(ModelKind::FtWdLstm, Regime::Regular, 11, "genemu_tb2");
    const TelemetryBundle b = generate_telemetry(cfg);
    REQUIRE(b.adapt.size() == b.train.size());
    CHECK(same_series(b.adapt[0], b.train[0]));
  }

  SUBCASE("networks keep the fixed-plant train split under randomization") {
    const auto fixed = generate_telemetry(
        tiny(ModelKind::Var, Regime::Regular, 11, "genemu_tb3"));
    const auto net = generate_telemetry(
        tiny(ModelKind::WdLstm, Regime::Randomized, 11, "genemu_tb4"));
    const auto lin = generate_telemetry(
        tiny(ModelKind::Var, Regime::Randomized, 11, "genemu_tb5"));
    // Same seed: the network's train data is the regular-plant data, the
    // linear model's comes from per-trajectory randomized plants.
    CHECK(same_series(net.train[0], fixed.train[0]));
    CHECK_FALSE(same_series(lin.train[0], fixed.train[0]));
    // The test split is the regime's and does not depend on the model.
    CHECK(same_series(net.test[0], lin.test[0]));
    CHECK_FALSE(same_series(net.test[0], fixed.test[0]));
  }

  SUBCASE("fine-tuned model under randomization adapts on fresh plants") {
    const auto cfg =
        tiny(ModelKind::FtWdLstm, Regime::Randomized, 11, "genemu_tb6");
    const TelemetryBundle b = generate_telemetry(cfg);
    REQUIRE(b.adapt.size() == b.train.size());
    CHECK_FALSE(same_series(b.adapt[0], b.train[0]));
    CHECK_FALSE(same_series(b.adapt[0], b.test[0]));
  }

  SUBCASE("near-limit testing drops the resistance but stays survivable") {
    const auto cfg =
        tiny(ModelKind::Var, Regime::HighOrderNoise, 11, "genemu_tb7");
    const TelemetryBundle b = generate_telemetry(cfg);
    CHECK(b.test_fault.resistance < b.train_fault.resistance);
    CHECK(b.test_fault.resistance > 0.0);
    CHECK(b.test_fault.reactance == b.train_fault.reactance);
  }
}

TEST_CASE("destandardization maps a zero network onto the channel means") {
  // All-zero weights force h = 0, so the standardized prediction is zero
  // and the destandardized one is exactly the stored mean.
  LstmModel zero;
  zero.input_dim = 2;
  zero.hidden_dim = 3;
  zero.num_layers = 1;
  zero.output_dim = 2;
  zero.layers.resize(1);
  zero.layers[0].w = Eigen::MatrixXd::Zero(12, 2);
  zero.layers[0].u = Eigen::MatrixXd::Zero(12, 3);
  zero.layers[0].bias = Eigen::VectorXd::Zero(12);
  zero.w_out = Eigen::MatrixXd::Zero(2, 3);
  zero.b_out = Eigen::VectorXd::Zero(2);

  MultiSeries telem = MultiSeries::with_labels(10.0, {"P", "Q", "V", "phi"});
  for (auto& c : telem.channels) c.values.assign(10, 4.0);

  StandardizeStats stats;
  stats.input = {{0.0, 1.0}, {0.0, 1.0}};
  stats.output = {{2.0, 3.0}, {2.0, 3.0}};

  const auto values = evaluate_lstm(zero, stats, {telem});
  REQUIRE(values.size() == 1);
  // Truth is 4, prediction is the mean 2: NRMSE = 2/4, reported in percent.
  CHECK(values[0] == doctest::Approx(50.0).epsilon(1e-12));

  // Without stats the raw zero prediction scores 100 percent error.
  const auto raw = evaluate_lstm(zero, std::nullopt, {telem});
  CHECK(raw[0] == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("linear pipeline fits, scores, and stays reproducible") {
  const auto cfg = tiny(ModelKind::Var, Regime::Regular, 21, "genemu_pl1");
  const PipelineResult r = run_pipeline(cfg);
  REQUIRE(r.summary.values.size() == 2);
  CHECK(r.var_order >= 1);
  CHECK(r.var_order <= cfg.var.p_max);
  for (double v : r.summary.values) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
  const PipelineResult again = run_pipeline(cfg);
  CHECK(again.summary.values == r.summary.values);
  CHECK(again.var_order == r.var_order);
}

TEST_CASE("fine-tuned pipeline reports both training passes") {
  const auto cfg =
      tiny(ModelKind::FtWdLstm, Regime::Randomized, 21, "genemu_pl2");
  const PipelineResult r = run_pipeline(cfg);
  CHECK(r.summary.values.size() == 2);
  CHECK(r.train_report.train_mse.size() == 2);
  CHECK(r.fine_tune_report.train_mse.size() == 1);
  CHECK(r.stats.has_value());
  CHECK(r.lstm_model.hidden_dim == 4);
}

TEST_CASE("experiment run emits a complete hashed bundle") {
  auto cfg = tiny(ModelKind::Var, Regime::Regular, 31, "genemu_run1");
  scrub(cfg.out_dir);
  const RunManifest man = run_experiment(cfg);

  CHECK(man.complete);
  CHECK(man.failure.empty());
  CHECK(man.config_text == serialize_config(cfg));
  for (const char* stage :
       {"generate", "write_datasets", "fit", "evaluate", "write_outputs"}) {
    CHECK(man.stage_seconds.count(stage) == 1);
  }

  // Every emitted file is listed with a hash that matches the bytes on
  // disk, and the manifest does not list itself.
  CHECK_FALSE(manifest_has(man, "manifest.json"));
  CHECK(manifest_has(man, "config.txt"));
  CHECK(manifest_has(man, "metrics.json"));
  CHECK(manifest_has(man, "model.varx.json"));
  CHECK(manifest_has(man, "data/train_000.csv"));
  CHECK(manifest_has(man, "data/train_manifest.json"));
  CHECK(manifest_has(man, "data/test_001.csv"));
  CHECK(manifest_has(man, "data/test_manifest.json"));
  for (const auto& f : man.files) {
    CHECK(sha256_file(fs::path(cfg.out_dir) / f.path) == f.sha256);
  }

  CHECK(first_line(fs::path(cfg.out_dir) / "data/train_000.csv") ==
        "t,P,Q,V,phi,fault");

  const RunManifest reloaded =
      load_manifest(fs::path(cfg.out_dir) / "manifest.json");
  CHECK(reloaded.complete);
  CHECK(reloaded.files.size() == man.files.size());

  const auto metrics =
      nlohmann::json::parse(read_bytes(fs::path(cfg.out_dir) / "metrics.json"));
  CHECK(metrics.at("model") == "var");
  CHECK(metrics.at("regime") == "regular");
  CHECK(metrics.at("seed") == 31);
  CHECK(metrics.at("n_samples") == 2);
  CHECK(metrics.at("values").size() == 2);
  CHECK(metrics.at("mean").get<double>() >= 0.0);

  // A second run of the same config is byte-identical where it matters.
  auto cfg2 = cfg;
  cfg2.out_dir = (fs::temp_directory_path() / "genemu_run2").string();
  scrub(cfg2.out_dir);
  run_experiment(cfg2);
  CHECK(read_bytes(fs::path(cfg.out_dir) / "metrics.json") ==
        read_bytes(fs::path(cfg2.out_dir) / "metrics.json"));
  CHECK(read_bytes(fs::path(cfg.out_dir) / "data/test_000.csv") ==
        read_bytes(fs::path(cfg2.out_dir) / "data/test_000.csv"));
  scrub(cfg.out_dir);
  scrub(cfg2.out_dir);
}

TEST_CASE("failing stage leaves an incomplete manifest naming itself") {
  auto cfg = tiny(ModelKind::Var, Regime::Regular, 31, "genemu_fail1");
  cfg.plant.mechanical_power = 2.0;  // beyond the static transfer limit
  scrub(cfg.out_dir);
  CHECK_THROWS_AS(run_experiment(cfg), NoEquilibrium);

  const RunManifest man =
      load_manifest(fs::path(cfg.out_dir) / "manifest.json");
  CHECK_FALSE(man.complete);
  CHECK(man.failure.rfind("generate:", 0) == 0);
  CHECK(man.stage_seconds.count("generate") == 1);
  CHECK(manifest_has(man, "config.txt"));  // partial outputs stay listed
  scrub(cfg.out_dir);
}

TEST_CASE("network run round trips through its checkpoint") {
  auto cfg = tiny(ModelKind::WdLstm, Regime::Regular, 41, "genemu_net1");
  scrub(cfg.out_dir);
  const RunManifest man = run_experiment(cfg);
  CHECK(man.complete);
  CHECK(manifest_has(man, "model.lstm.ckpt"));
  CHECK(manifest_has(man, "training_curve.csv"));
  CHECK(first_line(fs::path(cfg.out_dir) / "training_curve.csv") ==
        "epoch,train_mse,valid_mse");
  CHECK(count_lines(fs::path(cfg.out_dir) / "training_curve.csv") == 3);

  // Scoring the saved checkpoint against freshly generated test data
  // reproduces the run's metrics byte for byte.
  auto eval_cfg = cfg;
  eval_cfg.out_dir = (fs::temp_directory_path() / "genemu_net1_eval").string();
  scrub(eval_cfg.out_dir);
  const RunManifest eval_man =
      evaluate_saved(eval_cfg, fs::path(cfg.out_dir) / "model.lstm.ckpt");
  CHECK(eval_man.complete);
  CHECK(read_bytes(fs::path(cfg.out_dir) / "metrics.json") ==
        read_bytes(fs::path(eval_cfg.out_dir) / "metrics.json"));
  scrub(cfg.out_dir);
  scrub(eval_cfg.out_dir);
}

TEST_CASE("fit-only run emits the model but no metrics") {
  auto cfg = tiny(ModelKind::Var, Regime::Regular, 41, "genemu_fit1");
  scrub(cfg.out_dir);
  const RunManifest man = run_fit(cfg);
  CHECK(man.complete);
  CHECK(manifest_has(man, "model.varx.json"));
  CHECK_FALSE(manifest_has(man, "metrics.json"));
  CHECK_FALSE(fs::exists(fs::path(cfg.out_dir) / "metrics.json"));
  scrub(cfg.out_dir);
}

TEST_CASE("generate-only run emits datasets with split manifests") {
  auto cfg = tiny(ModelKind::Var, Regime::Regular, 41, "genemu_gen1");
  scrub(cfg.out_dir);
  const RunManifest man = run_generate(cfg);
  CHECK(man.complete);
  CHECK(manifest_has(man, "data/train_002.csv"));
  CHECK(manifest_has(man, "data/test_manifest.json"));
  CHECK_FALSE(manifest_has(man, "model.varx.json"));

  const auto split = nlohmann::json::parse(
      read_bytes(fs::path(cfg.out_dir) / "data/train_manifest.json"));
  CHECK(split.at("role") == "train");
  CHECK(split.at("transform") == "raw");
  CHECK(split.at("seed") == 41);
  CHECK(split.at("trajectories") == 3);
  CHECK(split.at("plant").at("inertia_h") == 3.5);
  CHECK(split.at("telegraph").at("rate_to_fault") == 0.5);
  CHECK(split.at("fault").at("reactance") == 1.0);
  scrub(cfg.out_dir);
}

TEST_CASE("diagnostics probe lag, order, and decay structure") {
  auto cfg = tiny(ModelKind::Var, Regime::Regular, 51, "genemu_diag1");
  scrub(cfg.out_dir);
  const RunManifest man = run_diagnostics(cfg);
  CHECK(man.complete);

  for (const char* pair :
       {"lag_P_Q", "lag_P_V", "lag_P_phi", "lag_Q_V", "lag_Q_phi", "lag_V_phi"}) {
    const std::string rel = std::string("diag/") + pair + ".csv";
    CHECK(manifest_has(man, rel));
    // header plus one row per (i, j) pair up to max_lag
    CHECK(count_lines(fs::path(cfg.out_dir) / rel) == 1 + 4 * 4);
  }

  CHECK(count_lines(fs::path(cfg.out_dir) / "diag/criteria.csv") ==
        1 + cfg.var.p_max);
  CHECK(first_line(fs::path(cfg.out_dir) / "diag/criteria.csv") ==
        "order,aic,bic,hqic,fpe");
  CHECK(count_lines(fs::path(cfg.out_dir) / "diag/decay.csv") ==
        1 + cfg.var.p_max - 1);

  const auto summary = nlohmann::json::parse(
      read_bytes(fs::path(cfg.out_dir) / "diag/summary.json"));
  CHECK(summary.at("pairs").size() == 6);
  const int ic_order = summary.at("ic_order").get<int>();
  CHECK(ic_order >= 1);
  CHECK(ic_order <= cfg.var.p_max);
  const int decay_order = summary.at("decay_order").get<int>();
  CHECK(decay_order >= 2);
  CHECK(decay_order <= cfg.var.p_max);
  for (const auto& [name, entry] : summary.at("pairs").items()) {
    CHECK(entry.at("detected_lag").get<int>() >= 0);
    CHECK(entry.at("detected_lag").get<int>() <= cfg.diag.max_lag);
  }
  scrub(cfg.out_dir);
}

TEST_CASE("resistance sweep marks broken cells and keeps the rest") {
  auto cfg = tiny(ModelKind::Var, Regime::Regular, 61, "genemu_sweep1");
  cfg.fault.reactance.reset();  // sweep convention: auto means bolted fault
  cfg.data.duration_seconds = 40.0;
  scrub(cfg.out_dir);

  const RunManifest man = run_sweep(cfg, {1.0, 0.01});
  CHECK(man.complete);
  CHECK(manifest_has(man, "grid.csv"));

  const RegimeGrid grid = load_grid_csv(fs::path(cfg.out_dir) / "grid.csv");
  REQUIRE(grid.cells.size() == 1);
  REQUIRE(grid.cells[0].size() == 2);
  CHECK(grid.cells[0][0].valid);
  CHECK(grid.cells[0][0].value >= 0.0);
  // A near-bolted fault at this severity cannot ride through a multi-second
  // burst, so its cell must be marked rather than poisoning the sweep.
  CHECK_FALSE(grid.cells[0][1].valid);
  scrub(cfg.out_dir);
}
