// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "genemu/lstm.hpp"
#include "genemu/plant.hpp"
#include "genemu/telegraph.hpp"
#include "genemu/var.hpp"

namespace genemu {

/// How train and test data relate in one experiment.
enum class Regime {
  Regular,         // one fixed plant for both splits
  Randomized,      // every trajectory gets its own perturbed plant
  HighOrderNoise,  // train on the stock fault, test near the severity limit
};

/// Which emulator the experiment fits and evaluates.
enum class ModelKind { Var, WdLstm, FtWdLstm };

std::string to_string(Regime regime);
std::string to_string(ModelKind model);

/// Accepts the canonical lowercase name with either '_' or '-' separators.
/// Throws ConfigError on anything else.
Regime parse_regime(const std::string& text);
ModelKind parse_model_kind(const std::string& text);

struct DataSection {
  int train_trajectories = 200;
  int test_trajectories = 200;
  double duration_seconds = 60.0;
};

/// Base fault impedance. A missing reactance means "calibrate": pick the
/// largest surviving value on the standard grid for this resistance.
struct FaultSection {
  double resistance = 0.01;
  std::optional<double> reactance;
};

struct VarSection {
  int order = 0;  // 0 selects the order by information criterion
  int p_max = 12;
  OrderCriterion criterion = OrderCriterion::Aic;
  double decay_epsilon = 0.3;
};

struct LstmSection {
  int hidden_dim = 64;
  int num_layers = 2;
  bool standardize = true;
};

struct FineTuneSection {
  int epochs = 10;
};

struct RandomizeSection {
  double spread = 0.1;
};

struct MetricsSection {
  bool nrmse_literal = false;
};

struct DiagSection {
  double duration_seconds = 600.0;
  int max_lag = 8;
};

/// Everything one run needs, with working defaults for every field. The
/// text form is flat "section.key = value" lines; '#' starts a comment.
/// All randomness in a run flows from `seed`: there is no wall-clock
/// seeding anywhere, so a config fixes the outputs bit for bit.
struct ExperimentConfig {
  Regime regime = Regime::Regular;
  ModelKind model = ModelKind::Var;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";

  PlantConfig plant;
  TelegraphParams telegraph;
  FaultSection fault;
  DataSection data;
  VarSection var;
  LstmSection lstm;
  TrainConfig train;  // train.seed is derived from `seed`, not a config key
  FineTuneSection fine_tune;
  RandomizeSection randomize;
  MetricsSection metrics;
  DiagSection diag;

  /// Throws ConfigError (or the section's own error type) on any value a
  /// run could not execute with.
  void validate() const;
};

/// Parse config text into a validated ExperimentConfig. Unknown keys,
/// malformed values, and out-of-range settings all throw ConfigError with
/// the offending line number; structurally broken lines throw ParseError.
ExperimentConfig parse_config(const std::string& text);

/// Canonical text form: every key in a fixed order, one per line, values
/// printed shortest-round-trip. parse(serialize(c)) reproduces c exactly,
/// and serialize(parse(s)) is a fixed point of serialize.
std::string serialize_config(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config,
                 const std::filesystem::path& path);

}  // namespace genemu
