// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "genemu/series.hpp"

namespace genemu {

enum class Transform { Raw, FirstDifference, Standardized };

/// Which half of the telemetry drives the model and which half it predicts.
enum class Direction {
  PQtoVPhi,  // inputs (P, Q), outputs (V, phi)
  VPhiToPQ,  // inputs (V, phi), outputs (P, Q)
};

struct ChannelStats {
  double mean = 0.0;
  double stddev = 1.0;
};

/// One trajectory split into model inputs and outputs, with a record of the
/// transform applied so predictions can be mapped back to original units.
struct Dataset {
  MultiSeries inputs;
  MultiSeries outputs;
  Transform transform = Transform::Raw;

  // Filled by difference_dataset: first value per channel, the anchor that
  // undifference needs to rebuild levels.
  std::vector<double> input_anchors;
  std::vector<double> output_anchors;

  // Filled by standardization: per-channel training moments.
  std::vector<ChannelStats> input_stats;
  std::vector<ChannelStats> output_stats;

  void validate() const;
};

enum class Role { Train, Test };

/// A batch of trajectories sharing one role and transform state.
struct SampleSet {
  std::vector<Dataset> items;
  Role role = Role::Train;

  void validate() const;
};

/// Split raw telemetry (P, Q, V, phi channels) into a model dataset.
Dataset select_direction(const MultiSeries& telemetry, Direction direction);

/// First difference of every channel: element t is x[t+1] - x[t]. Returns
/// the shortened series plus the per-channel anchors x[0].
std::pair<MultiSeries, std::vector<double>> difference(const MultiSeries& s);

/// Inverse of difference: y[0] = anchor, y[t+1] = y[t] + inc[t].
MultiSeries undifference(const MultiSeries& increments,
                         const std::vector<double>& anchors);

/// difference() applied to both halves of a dataset.
Dataset difference_dataset(const Dataset& d);

/// Per-channel moments of a training set (population stddev).
struct StandardizeStats {
  std::vector<ChannelStats> input;
  std::vector<ChannelStats> output;
};

/// Estimate standardization moments from training data only.
StandardizeStats fit_standardize(const SampleSet& train);

/// Map every trajectory to zero-mean unit-variance channels using the given
/// (training) moments. Works for any role, so test data reuses train stats.
SampleSet apply_standardize(const StandardizeStats& stats, const SampleSet& s);

/// Invert standardization on a model-output series using stored stats.
MultiSeries destandardize_outputs(const MultiSeries& outputs,
                                  const std::vector<ChannelStats>& stats);

/// Telemetry CSV: header "t,<labels...>", one row per sample, full-precision
/// decimal values. Loading rebuilds the identical series for finite data.
void save_csv(const MultiSeries& s, const std::filesystem::path& path);
MultiSeries load_csv(const std::filesystem::path& path);

}  // namespace genemu
