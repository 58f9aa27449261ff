// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genemu/config.hpp"
#include "genemu/dataset.hpp"
#include "genemu/lstm.hpp"
#include "genemu/metrics.hpp"
#include "genemu/var.hpp"

namespace genemu {

/// SHA-256 of a file's bytes, as lowercase hex.
std::string sha256_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  // relative to the run directory
  std::string sha256;
};

/// Record of one run: the exact config it executed, every file it wrote
/// (with content hashes), per-stage wall times, and whether it finished.
/// An incomplete manifest means a stage threw after earlier outputs were
/// already on disk; `failure` then names the stage and the reason.
struct RunManifest {
  std::string config_text;
  std::vector<ManifestEntry> files;  // sorted by path
  std::map<std::string, double> stage_seconds;
  bool complete = false;
  std::string failure;

  void validate() const;
};

void save_manifest(const RunManifest& manifest,
                   const std::filesystem::path& path);
RunManifest load_manifest(const std::filesystem::path& path);

/// Raw telemetry for one run, before any model-specific slicing. Which
/// plants generated each split depends on the regime and model:
///   - `train` is what the configured model's primary fit uses: the fixed
///     plant for every LSTM variant (they adapt later, if at all), the
///     regime's own plants for the linear model.
///   - `adapt` is the fine-tuning set, filled only for the fine-tuned
///     model: fresh randomized-plant trajectories for the randomized and
///     high-order-noise regimes, the training set itself otherwise.
///   - `test` comes from the regime: fixed plant, per-trajectory randomized
///     plants, or the fixed plant under the near-limit fault.
struct TelemetryBundle {
  std::vector<MultiSeries> train;
  std::vector<MultiSeries> adapt;
  std::vector<MultiSeries> test;
  FaultParams train_fault;  // base fault after reactance calibration
  FaultParams test_fault;   // equals train_fault except near-limit testing
};

TelemetryBundle generate_telemetry(const ExperimentConfig& cfg);

/// The base fault with a concrete reactance: the configured value, or the
/// calibrated largest surviving one when the config says auto.
FaultParams resolve_fault(const ExperimentConfig& cfg);

struct VarFit {
  VarxModel model;
  int order = 0;  // the fitted order (selected or configured)
};

/// Difference the telemetry, map (P, Q) -> (V, phi), pick the order by the
/// configured criterion when var.order is auto, and fit.
VarFit fit_var_model(const ExperimentConfig& cfg,
                     const std::vector<MultiSeries>& train);

struct LstmFit {
  LstmModel model;
  std::optional<StandardizeStats> stats;  // set when standardization is on
  TrainReport report;
};

/// Map (V, phi) -> (P, Q), optionally standardize with train moments, and
/// train a fresh network with the experiment-derived seed.
LstmFit fit_lstm_model(const ExperimentConfig& cfg,
                       const std::vector<MultiSeries>& train);

/// Continue training `base` on `adapt` at the reduced fine-tune rate. The
/// base model's standardization moments are kept: the network's scaling is
/// baked into its weights, so adaptation data must pass through the same
/// transform.
LstmFit fine_tune_lstm_model(const ExperimentConfig& cfg, const LstmFit& base,
                             const std::vector<MultiSeries>& adapt);

/// Per-trajectory NRMSE in percent, in original units. Both models are
/// scored as emulators conditioned on measured data: the linear model
/// predicts each increment one step ahead from the true lagged history and
/// is scored on the rebuilt levels; the network maps the full measured
/// input channels to outputs in one pass per trajectory.
std::vector<double> evaluate_var(const VarxModel& model,
                                 const std::vector<MultiSeries>& test,
                                 bool literal = false);
std::vector<double> evaluate_lstm(const LstmModel& model,
                                  const std::optional<StandardizeStats>& stats,
                                  const std::vector<MultiSeries>& test,
                                  bool literal = false);

/// Everything one in-memory experiment produces.
struct PipelineResult {
  NrmseSummary summary;  // percent units
  int var_order = 0;
  VarxModel var_model;            // filled when model == var
  LstmModel lstm_model;           // filled for the network models
  std::optional<StandardizeStats> stats;
  TrainReport train_report;       // base training (network models)
  TrainReport fine_tune_report;   // fine-tuning pass only
};

/// generate -> fit -> evaluate, no files touched.
PipelineResult run_pipeline(const ExperimentConfig& cfg);

/// Full run with outputs under cfg.out_dir: canonical config, dataset CSVs
/// with split manifests, the model file, metrics JSON, fit diagnostics, and
/// the run manifest. A failing stage still writes the manifest (complete =
/// false, failure = "stage: reason") before the error propagates.
RunManifest run_experiment(const ExperimentConfig& cfg);

/// Structure probes on one long fixed-plant trajectory: cross-lag matrices
/// for all six channel pairs (on first differences), criterion-versus-order
/// curves, the coefficient decay series, and a summary JSON.
RunManifest run_diagnostics(const ExperimentConfig& cfg);

/// Fit the configured linear recipe on one fresh trajectory per resistance
/// and score one held-out trajectory. Cells whose simulation or fit fails
/// are marked, not fatal. Values are NRMSE fractions.
RegimeGrid resistance_sweep(const ExperimentConfig& cfg,
                            const std::vector<double>& resistances);

/// resistance_sweep plus grid CSV and manifest under cfg.out_dir.
RunManifest run_sweep(const ExperimentConfig& cfg,
                      const std::vector<double>& resistances);

/// Dataset CSVs and split manifests only (no fitting).
RunManifest run_generate(const ExperimentConfig& cfg);

/// Generate, fit, and save the model file plus fit diagnostics (no test
/// scoring).
RunManifest run_fit(const ExperimentConfig& cfg);

/// Score a saved model file against freshly generated test data from the
/// config. The model kind comes from the file itself.
RunManifest evaluate_saved(const ExperimentConfig& cfg,
                           const std::filesystem::path& model_path);

}  // namespace genemu
