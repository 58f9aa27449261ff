// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "genemu/dataset.hpp"
#include "genemu/rng.hpp"

namespace genemu {

/// One recurrent layer. Gate rows are packed [i; f; g; o], each block
/// hidden_dim tall, so w.topRows(H) feeds the input gate and so on.
struct LstmLayer {
  Eigen::MatrixXd w;     // 4H x layer_input
  Eigen::MatrixXd u;     // 4H x H, hidden-to-hidden
  Eigen::VectorXd bias;  // 4H
};

/// Stacked LSTM regressor with a linear per-step readout of the top layer.
struct LstmModel {
  int input_dim = 0;
  int hidden_dim = 0;
  int num_layers = 0;
  int output_dim = 0;
  std::vector<LstmLayer> layers;
  Eigen::MatrixXd w_out;  // output_dim x H
  Eigen::VectorXd b_out;  // output_dim

  void validate() const;
};

/// Fresh model with forget-gate biases at 1 and every other weight uniform
/// in +-1/sqrt(hidden_dim); remaining biases start at zero.
LstmModel init_lstm(int input_dim, int hidden_dim, int num_layers,
                    int output_dim, Rng& rng);

/// DropConnect masks for the hidden-to-hidden matrices plus a variational
/// dropout mask over the top hidden state, all held for a whole batch.
/// Entries are {0,1}; forward applies inverted scaling 1/(1-p).
struct DropMasks {
  std::vector<Eigen::MatrixXd> hidden;  // per layer, 4H x H
  Eigen::VectorXd output;               // H
  double weight_drop_prob = 0.0;
  double output_dropout_prob = 0.0;
};

DropMasks sample_masks(const LstmModel& model, double weight_drop_prob,
                       double output_dropout_prob, Rng& rng);

/// Run the recurrence over a window (channels are the model inputs, in
/// order) and emit one output row per step, labeled out1..outN. Masks, when
/// given, replace each U with U .* mask / (1 - p).
MultiSeries forward(const LstmModel& model, const MultiSeries& window,
                    const DropMasks* masks = nullptr);

/// Mean squared error pooled over steps and channels.
double mse_loss(const MultiSeries& outputs, const MultiSeries& targets);

struct LstmGradients {
  std::vector<LstmLayer> layers;
  Eigen::MatrixXd w_out;
  Eigen::VectorXd b_out;
};

/// Exact gradients of mse_loss(forward(model, window, masks), targets)
/// with respect to every parameter, via backpropagation through time.
LstmGradients backward(const LstmModel& model, const MultiSeries& window,
                       const MultiSeries& targets,
                       const DropMasks* masks = nullptr);

/// Gradient of the penalty decay * sum(w^2), element-wise 2 * decay * w.
/// The optimizer applies this decoupled from the adaptive step.
Eigen::MatrixXd weight_decay_gradient(double decay, const Eigen::MatrixXd& w);

struct TrainConfig {
  double weight_drop_prob = 0.3;
  double output_dropout_prob = 0.1;
  double weight_decay = 1e-6;
  int base_window_len = 64;
  int window_len_jitter = 16;
  double learning_rate = 2e-3;
  int epochs = 40;
  int batch_size = 32;
  double grad_clip_norm = 1.0;
  double fine_tune_lr_scale = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-epoch curves. train_mse is measured after the epoch's updates on the
/// full training set with dropout off, so it is comparable across epochs.
struct TrainReport {
  std::vector<double> train_mse;
  std::vector<double> valid_mse;
  double wall_seconds = 0.0;
};

/// Minibatch training: adaptive moment steps with decoupled weight decay
/// (biases exempt), global gradient-norm clipping, a window length drawn
/// uniformly from base +- jitter per batch, and fresh DropConnect masks per
/// batch. Deterministic given cfg.seed.
std::pair<LstmModel, TrainReport> train(const LstmModel& model,
                                        const SampleSet& train_set,
                                        const SampleSet& valid_set,
                                        const TrainConfig& cfg);

/// Continue training on new data at learning_rate * fine_tune_lr_scale with
/// a fresh optimizer state. Validation in the report is the new data.
std::pair<LstmModel, TrainReport> fine_tune(const LstmModel& model,
                                            const SampleSet& new_train,
                                            const TrainConfig& cfg);

/// Pooled full-trajectory MSE with dropout off.
double evaluate_mse(const LstmModel& model, const SampleSet& data);

/// Checkpoint: one JSON header line (dims, layout, caller note) followed by
/// a flat little-endian float64 payload ordered layer by layer (W, U, bias)
/// then the readout (W, bias), each column-major. The loader validates the
/// header dimensions before touching the payload.
void save_lstm(const LstmModel& model, const std::filesystem::path& path,
               const std::string& note_json = "{}");
std::pair<LstmModel, std::string> load_lstm(const std::filesystem::path& path);

}  // namespace genemu
