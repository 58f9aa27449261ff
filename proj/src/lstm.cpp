// SPDX-License-Identifier: Apache-2.0
#include "genemu/lstm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

#include "genemu/errors.hpp"

namespace genemu {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd sigmoid(const MatrixXd& z) {
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

// Hidden-to-hidden matrices with DropConnect applied (inverted scaling).
std::vector<MatrixXd> effective_u(const LstmModel& model,
                                  const DropMasks* masks) {
  std::vector<MatrixXd> u;
  u.reserve(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (masks == nullptr || masks->weight_drop_prob == 0.0) {
      u.push_back(model.layers[l].u);
    } else {
      const double keep = 1.0 - masks->weight_drop_prob;
      u.push_back(
          (model.layers[l].u.array() * masks->hidden[l].array() / keep)
              .matrix());
    }
  }
  return u;
}

VectorXd output_keep_scale(const LstmModel& model, const DropMasks* masks) {
  if (masks == nullptr || masks->output_dropout_prob == 0.0) {
    return VectorXd::Ones(model.hidden_dim);
  }
  return masks->output / (1.0 - masks->output_dropout_prob);
}

void check_masks(const LstmModel& model, const DropMasks* masks) {
  if (masks == nullptr) return;
  if (static_cast<int>(masks->hidden.size()) != model.num_layers) {
    throw ShapeError("mask layer count does not match the model");
  }
  for (const auto& m : masks->hidden) {
    if (m.rows() != 4 * model.hidden_dim || m.cols() != model.hidden_dim) {
      throw ShapeError("hidden mask shape does not match U");
    }
  }
  if (masks->output.size() != model.hidden_dim) {
    throw ShapeError("output mask length does not match hidden_dim");
  }
}

// Per-step per-layer activations kept for backpropagation.
struct LayerTrace {
  std::vector<MatrixXd> gi, gf, gg, go, c, h;  // each H x B
};

struct Trace {
  std::vector<MatrixXd> x;          // per step, input_dim x B
  std::vector<LayerTrace> layers;   // [layer][step]
  std::vector<MatrixXd> h_dropped;  // per step, top hidden after dropout
  std::vector<MatrixXd> y;          // per step, output_dim x B
};

// Core batched recurrence. xs[t] holds one step of every batch item. When
// trace is null the pass streams with O(H*B) state (used for evaluation);
// otherwise everything needed by the backward pass is recorded.
std::vector<MatrixXd> run_forward(const LstmModel& model,
                                  const std::vector<MatrixXd>& xs,
                                  const DropMasks* masks, Trace* trace) {
  const int h_dim = model.hidden_dim;
  const int n_layers = model.num_layers;
  const long t_len = static_cast<long>(xs.size());
  const long batch = xs.empty() ? 0 : xs[0].cols();
  const auto u_eff = effective_u(model, masks);
  const VectorXd out_scale = output_keep_scale(model, masks);

  std::vector<MatrixXd> h(n_layers), c(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    h[l] = MatrixXd::Zero(h_dim, batch);
    c[l] = MatrixXd::Zero(h_dim, batch);
  }
  if (trace != nullptr) {
    trace->x = xs;
    trace->layers.resize(n_layers);
  }

  std::vector<MatrixXd> ys(t_len);
  for (long t = 0; t < t_len; ++t) {
    const MatrixXd* below = &xs[t];
    for (int l = 0; l < n_layers; ++l) {
      MatrixXd a = model.layers[l].w * (*below) + u_eff[l] * h[l];
      a.colwise() += model.layers[l].bias;
      const MatrixXd gi = sigmoid(a.topRows(h_dim));
      const MatrixXd gf = sigmoid(a.middleRows(h_dim, h_dim));
      const MatrixXd gg = a.middleRows(2 * h_dim, h_dim).array().tanh();
      const MatrixXd go = sigmoid(a.bottomRows(h_dim));
      c[l] = (gf.array() * c[l].array() + gi.array() * gg.array()).matrix();
      h[l] = (go.array() * c[l].array().tanh()).matrix();
      if (trace != nullptr) {
        auto& lt = trace->layers[l];
        lt.gi.push_back(gi);
        lt.gf.push_back(gf);
        lt.gg.push_back(gg);
        lt.go.push_back(go);
        lt.c.push_back(c[l]);
        lt.h.push_back(h[l]);
      }
      below = &h[l];
    }
    const MatrixXd top =
        (h[n_layers - 1].array().colwise() * out_scale.array()).matrix();
    MatrixXd y = model.w_out * top;
    y.colwise() += model.b_out;
    if (trace != nullptr) {
      trace->h_dropped.push_back(top);
      trace->y.push_back(y);
    }
    ys[t] = std::move(y);
  }
  return ys;
}

LstmGradients zero_gradients(const LstmModel& model) {
  LstmGradients g;
  for (const auto& layer : model.layers) {
    g.layers.push_back({MatrixXd::Zero(layer.w.rows(), layer.w.cols()),
                        MatrixXd::Zero(layer.u.rows(), layer.u.cols()),
                        VectorXd::Zero(layer.bias.size())});
  }
  g.w_out = MatrixXd::Zero(model.w_out.rows(), model.w_out.cols());
  g.b_out = VectorXd::Zero(model.b_out.size());
  return g;
}

// BPTT over a recorded trace. The loss is the pooled mean of squared
// errors, so every output entry carries weight 2 / (T * B * d).
LstmGradients run_backward(const LstmModel& model, const Trace& trace,
                           const std::vector<MatrixXd>& tgt,
                           const DropMasks* masks) {
  const int h_dim = model.hidden_dim;
  const int n_layers = model.num_layers;
  const long t_len = static_cast<long>(trace.x.size());
  const long batch = trace.x[0].cols();
  const double scale =
      2.0 / (static_cast<double>(t_len) * static_cast<double>(batch) *
             static_cast<double>(model.output_dim));
  const auto u_eff = effective_u(model, masks);
  const VectorXd out_scale = output_keep_scale(model, masks);

  LstmGradients g = zero_gradients(model);

  // Readout layer, and the loss gradient flowing into the top hidden state.
  std::vector<MatrixXd> dh_above(t_len);
  for (long t = 0; t < t_len; ++t) {
    const MatrixXd dy = scale * (trace.y[t] - tgt[t]);
    g.w_out.noalias() += dy * trace.h_dropped[t].transpose();
    g.b_out += dy.rowwise().sum();
    const MatrixXd dtop = model.w_out.transpose() * dy;
    dh_above[t] = (dtop.array().colwise() * out_scale.array()).matrix();
  }

  for (int l = n_layers - 1; l >= 0; --l) {
    const auto& lt = trace.layers[l];
    MatrixXd dh_next = MatrixXd::Zero(h_dim, batch);
    MatrixXd dc_next = MatrixXd::Zero(h_dim, batch);
    MatrixXd gu_eff = MatrixXd::Zero(4 * h_dim, h_dim);
    std::vector<MatrixXd> dx(t_len);
    for (long t = t_len - 1; t >= 0; --t) {
      const MatrixXd dh = dh_above[t] + dh_next;
      const Eigen::ArrayXXd tanh_c = lt.c[t].array().tanh();
      const auto go = lt.go[t].array();
      const MatrixXd do_ = (dh.array() * tanh_c).matrix();
      const MatrixXd dc =
          (dh.array() * go * (1.0 - tanh_c.square())).matrix() + dc_next;
      const auto gi = lt.gi[t].array();
      const auto gf = lt.gf[t].array();
      const auto gg = lt.gg[t].array();
      Eigen::ArrayXXd c_prev = Eigen::ArrayXXd::Zero(h_dim, batch);
      if (t > 0) c_prev = lt.c[t - 1].array();

      MatrixXd da(4 * h_dim, batch);
      da.topRows(h_dim) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
      da.middleRows(h_dim, h_dim) =
          (dc.array() * c_prev * gf * (1.0 - gf)).matrix();
      da.middleRows(2 * h_dim, h_dim) =
          (dc.array() * gi * (1.0 - gg.square())).matrix();
      da.bottomRows(h_dim) = (do_.array() * go * (1.0 - go)).matrix();

      const MatrixXd& x_l = l == 0 ? trace.x[t] : trace.layers[l - 1].h[t];
      const MatrixXd h_prev =
          t > 0 ? lt.h[t - 1] : MatrixXd::Zero(h_dim, batch);
      g.layers[l].w.noalias() += da * x_l.transpose();
      gu_eff.noalias() += da * h_prev.transpose();
      g.layers[l].bias += da.rowwise().sum();
      dx[t] = model.layers[l].w.transpose() * da;
      dh_next = u_eff[l].transpose() * da;
      dc_next = (dc.array() * gf).matrix();
    }
    if (masks != nullptr && masks->weight_drop_prob > 0.0) {
      const double keep = 1.0 - masks->weight_drop_prob;
      g.layers[l].u =
          (gu_eff.array() * masks->hidden[l].array() / keep).matrix();
    } else {
      g.layers[l].u = std::move(gu_eff);
    }
    dh_above = std::move(dx);
  }
  return g;
}

// Pack a set of (trajectory, offset) windows into per-step batch matrices.
void gather_windows(const SampleSet& data,
                    const std::vector<std::pair<int, long>>& picks,
                    long win_len, std::vector<MatrixXd>& xs,
                    std::vector<MatrixXd>& tgt) {
  const int in_dim = static_cast<int>(data.items[0].inputs.channels.size());
  const int out_dim = static_cast<int>(data.items[0].outputs.channels.size());
  const long batch = static_cast<long>(picks.size());
  xs.assign(win_len, MatrixXd(in_dim, batch));
  tgt.assign(win_len, MatrixXd(out_dim, batch));
  for (long k = 0; k < batch; ++k) {
    const auto& [idx, offset] = picks[static_cast<std::size_t>(k)];
    const Dataset& d = data.items[static_cast<std::size_t>(idx)];
    for (long t = 0; t < win_len; ++t) {
      for (int j = 0; j < in_dim; ++j) {
        xs[t](j, k) = d.inputs.channels[j].values[offset + t];
      }
      for (int j = 0; j < out_dim; ++j) {
        tgt[t](j, k) = d.outputs.channels[j].values[offset + t];
      }
    }
  }
}

void check_compatible(const LstmModel& model, const SampleSet& data,
                      const char* which) {
  data.validate();
  const auto& first = data.items.front();
  if (static_cast<int>(first.inputs.channels.size()) != model.input_dim ||
      static_cast<int>(first.outputs.channels.size()) != model.output_dim) {
    throw ShapeError(std::string(which) +
                     " set channel counts do not match the model");
  }
  for (const auto& d : data.items) {
    if (d.outputs.length() < 2) {
      throw TooShort(std::string(which) + " trajectory shorter than 2 steps");
    }
  }
}

// Flat views over every parameter, in checkpoint order. Biases are flagged
// so weight decay can skip them.
struct ParamRef {
  double* data;
  long size;
  bool decays;
};

std::vector<ParamRef> param_refs(LstmModel& model) {
  std::vector<ParamRef> refs;
  for (auto& layer : model.layers) {
    refs.push_back({layer.w.data(), layer.w.size(), true});
    refs.push_back({layer.u.data(), layer.u.size(), true});
    refs.push_back({layer.bias.data(), layer.bias.size(), false});
  }
  refs.push_back({model.w_out.data(), model.w_out.size(), true});
  refs.push_back({model.b_out.data(), model.b_out.size(), false});
  return refs;
}

std::vector<ParamRef> grad_refs(LstmGradients& g) {
  std::vector<ParamRef> refs;
  for (auto& layer : g.layers) {
    refs.push_back({layer.w.data(), layer.w.size(), true});
    refs.push_back({layer.u.data(), layer.u.size(), true});
    refs.push_back({layer.bias.data(), layer.bias.size(), false});
  }
  refs.push_back({g.w_out.data(), g.w_out.size(), true});
  refs.push_back({g.b_out.data(), g.b_out.size(), false});
  return refs;
}

long total_param_count(const LstmModel& model) {
  long n = 0;
  for (const auto& layer : model.layers) {
    n += layer.w.size() + layer.u.size() + layer.bias.size();
  }
  return n + model.w_out.size() + model.b_out.size();
}

std::vector<MatrixXd> series_to_steps(const MultiSeries& s) {
  const long t_len = static_cast<long>(s.length());
  const int dim = static_cast<int>(s.channels.size());
  std::vector<MatrixXd> xs(t_len, MatrixXd(dim, 1));
  for (long t = 0; t < t_len; ++t) {
    for (int j = 0; j < dim; ++j) xs[t](j, 0) = s.channels[j].values[t];
  }
  return xs;
}

}  // namespace

void LstmModel::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || num_layers < 1 || output_dim < 1) {
    throw InvalidArgument("model dimensions must be positive");
  }
  if (static_cast<int>(layers.size()) != num_layers) {
    throw ShapeError("layer count does not match num_layers");
  }
  for (int l = 0; l < num_layers; ++l) {
    const auto& layer = layers[static_cast<std::size_t>(l)];
    const int expect_in = l == 0 ? input_dim : hidden_dim;
    if (layer.w.rows() != 4 * hidden_dim || layer.w.cols() != expect_in) {
      throw ShapeError("layer " + std::to_string(l) + " W shape mismatch");
    }
    if (layer.u.rows() != 4 * hidden_dim || layer.u.cols() != hidden_dim) {
      throw ShapeError("layer " + std::to_string(l) + " U shape mismatch");
    }
    if (layer.bias.size() != 4 * hidden_dim) {
      throw ShapeError("layer " + std::to_string(l) + " bias shape mismatch");
    }
    if (!layer.w.allFinite() || !layer.u.allFinite() ||
        !layer.bias.allFinite()) {
      throw InvalidArgument("layer " + std::to_string(l) + " not finite");
    }
  }
  if (w_out.rows() != output_dim || w_out.cols() != hidden_dim ||
      b_out.size() != output_dim) {
    throw ShapeError("readout shape mismatch");
  }
  if (!w_out.allFinite() || !b_out.allFinite()) {
    throw InvalidArgument("readout not finite");
  }
}

LstmModel init_lstm(int input_dim, int hidden_dim, int num_layers,
                    int output_dim, Rng& rng) {
  if (input_dim < 1 || hidden_dim < 1 || num_layers < 1 || output_dim < 1) {
    throw InvalidArgument("model dimensions must be positive");
  }
  const double r = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  auto fill = [&](MatrixXd& m) {
    for (long i = 0; i < m.size(); ++i) {
      m.data()[i] = (2.0 * rng.uniform() - 1.0) * r;
    }
  };
  LstmModel model;
  model.input_dim = input_dim;
  model.hidden_dim = hidden_dim;
  model.num_layers = num_layers;
  model.output_dim = output_dim;
  for (int l = 0; l < num_layers; ++l) {
    LstmLayer layer;
    layer.w.resize(4 * hidden_dim, l == 0 ? input_dim : hidden_dim);
    layer.u.resize(4 * hidden_dim, hidden_dim);
    fill(layer.w);
    fill(layer.u);
    layer.bias = VectorXd::Zero(4 * hidden_dim);
    layer.bias.segment(hidden_dim, hidden_dim).setOnes();  // forget gate
    model.layers.push_back(std::move(layer));
  }
  model.w_out.resize(output_dim, hidden_dim);
  fill(model.w_out);
  model.b_out = VectorXd::Zero(output_dim);
  model.validate();
  return model;
}

DropMasks sample_masks(const LstmModel& model, double weight_drop_prob,
                       double output_dropout_prob, Rng& rng) {
  if (!(weight_drop_prob >= 0.0 && weight_drop_prob < 1.0) ||
      !(output_dropout_prob >= 0.0 && output_dropout_prob < 1.0)) {
    throw InvalidArgument("drop probabilities must lie in [0, 1)");
  }
  DropMasks masks;
  masks.weight_drop_prob = weight_drop_prob;
  masks.output_dropout_prob = output_dropout_prob;
  for (int l = 0; l < model.num_layers; ++l) {
    MatrixXd m(4 * model.hidden_dim, model.hidden_dim);
    for (long i = 0; i < m.size(); ++i) {
      m.data()[i] = rng.bernoulli(1.0 - weight_drop_prob) ? 1.0 : 0.0;
    }
    masks.hidden.push_back(std::move(m));
  }
  masks.output.resize(model.hidden_dim);
  for (long i = 0; i < masks.output.size(); ++i) {
    masks.output[i] = rng.bernoulli(1.0 - output_dropout_prob) ? 1.0 : 0.0;
  }
  return masks;
}

MultiSeries forward(const LstmModel& model, const MultiSeries& window,
                    const DropMasks* masks) {
  model.validate();
  window.validate();
  check_masks(model, masks);
  if (window.length() == 0) throw EmptyInput("empty input window");
  if (static_cast<int>(window.channels.size()) != model.input_dim) {
    throw ShapeError("window channel count does not match input_dim");
  }
  const auto ys = run_forward(model, series_to_steps(window), masks, nullptr);
  MultiSeries out;
  out.sample_rate = window.sample_rate;
  for (int j = 0; j < model.output_dim; ++j) {
    Channel ch;
    ch.label = "out" + std::to_string(j + 1);
    ch.values.reserve(ys.size());
    out.channels.push_back(std::move(ch));
  }
  for (const auto& y : ys) {
    for (int j = 0; j < model.output_dim; ++j) {
      out.channels[j].values.push_back(y(j, 0));
    }
  }
  return out;
}

double mse_loss(const MultiSeries& outputs, const MultiSeries& targets) {
  if (outputs.channels.size() != targets.channels.size() ||
      outputs.length() != targets.length()) {
    throw ShapeError("outputs and targets are shaped differently");
  }
  if (outputs.length() == 0) throw EmptyInput("empty series in the loss");
  double acc = 0.0;
  for (std::size_t j = 0; j < outputs.channels.size(); ++j) {
    const auto& a = outputs.channels[j].values;
    const auto& b = targets.channels[j].values;
    for (std::size_t t = 0; t < a.size(); ++t) {
      const double e = a[t] - b[t];
      acc += e * e;
    }
  }
  return acc / (static_cast<double>(outputs.length()) *
                static_cast<double>(outputs.channels.size()));
}

LstmGradients backward(const LstmModel& model, const MultiSeries& window,
                       const MultiSeries& targets, const DropMasks* masks) {
  model.validate();
  window.validate();
  targets.validate();
  check_masks(model, masks);
  if (window.length() == 0) throw EmptyInput("empty input window");
  if (static_cast<int>(window.channels.size()) != model.input_dim) {
    throw ShapeError("window channel count does not match input_dim");
  }
  if (static_cast<int>(targets.channels.size()) != model.output_dim ||
      targets.length() != window.length()) {
    throw ShapeError("target series does not match the output shape");
  }
  Trace trace;
  run_forward(model, series_to_steps(window), masks, &trace);
  return run_backward(model, trace, series_to_steps(targets), masks);
}

Eigen::MatrixXd weight_decay_gradient(double decay, const Eigen::MatrixXd& w) {
  if (!(decay >= 0.0) || !std::isfinite(decay)) {
    throw InvalidArgument("decay must be a nonnegative finite number");
  }
  return 2.0 * decay * w;
}

void TrainConfig::validate() const {
  if (!(weight_drop_prob >= 0.0 && weight_drop_prob < 1.0)) {
    throw ConfigError("weight_drop_prob must lie in [0, 1)");
  }
  if (!(output_dropout_prob >= 0.0 && output_dropout_prob < 1.0)) {
    throw ConfigError("output_dropout_prob must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight_decay must be nonnegative and finite");
  }
  if (window_len_jitter < 0) throw ConfigError("window_len_jitter negative");
  if (base_window_len - window_len_jitter < 2) {
    throw ConfigError("base_window_len - jitter must be at least 2");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be nonnegative and finite");
  }
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be positive");
  if (!(fine_tune_lr_scale > 0.0) || !std::isfinite(fine_tune_lr_scale)) {
    throw ConfigError("fine_tune_lr_scale must be positive and finite");
  }
}

std::pair<LstmModel, TrainReport> train(const LstmModel& model,
                                        const SampleSet& train_set,
                                        const SampleSet& valid_set,
                                        const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  model.validate();
  check_compatible(model, train_set, "train");
  check_compatible(model, valid_set, "validation");

  LstmModel current = model;
  Rng rng(cfg.seed);

  long total_steps = 0;
  long min_len = std::numeric_limits<long>::max();
  for (const auto& d : train_set.items) {
    const long len = static_cast<long>(d.outputs.length());
    total_steps += len;
    min_len = std::min(min_len, len);
  }
  const long batches_per_epoch = std::max<long>(
      1, total_steps / (static_cast<long>(cfg.batch_size) *
                        static_cast<long>(cfg.base_window_len)));
  const int n_items = static_cast<int>(train_set.items.size());
  const bool any_dropout =
      cfg.weight_drop_prob > 0.0 || cfg.output_dropout_prob > 0.0;

  // Adaptive moment state over the flat parameter vector.
  auto refs = param_refs(current);
  const long n_params = total_param_count(current);
  VectorXd adam_m = VectorXd::Zero(n_params);
  VectorXd adam_v = VectorXd::Zero(n_params);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  long adam_t = 0;

  TrainReport report;
  std::vector<MatrixXd> xs, tgt;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (long b = 0; b < batches_per_epoch; ++b) {
      long win_len = cfg.base_window_len;
      if (cfg.window_len_jitter > 0) {
        win_len += static_cast<long>(
                       rng.uniform_int(2 * cfg.window_len_jitter + 1)) -
                   cfg.window_len_jitter;
      }
      win_len = std::max<long>(2, std::min(win_len, min_len));

      std::vector<std::pair<int, long>> picks(cfg.batch_size);
      for (auto& p : picks) {
        const int idx = static_cast<int>(rng.uniform_int(n_items));
        const long len =
            static_cast<long>(train_set.items[idx].outputs.length());
        p = {idx, static_cast<long>(rng.uniform_int(len - win_len + 1))};
      }
      gather_windows(train_set, picks, win_len, xs, tgt);

      DropMasks masks;
      if (any_dropout) {
        masks = sample_masks(current, cfg.weight_drop_prob,
                             cfg.output_dropout_prob, rng);
      }
      const DropMasks* mask_ptr = any_dropout ? &masks : nullptr;

      Trace trace;
      run_forward(current, xs, mask_ptr, &trace);
      double loss = 0.0;
      for (long t = 0; t < win_len; ++t) {
        loss += (trace.y[t] - tgt[t]).squaredNorm();
      }
      loss /= static_cast<double>(win_len * cfg.batch_size *
                                  current.output_dim);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("minibatch loss is not finite", epoch + 1);
      }
      LstmGradients grads = run_backward(current, trace, tgt, mask_ptr);
      auto grefs = grad_refs(grads);

      double sq_norm = 0.0;
      for (const auto& gr : grefs) {
        sq_norm += Eigen::Map<const VectorXd>(gr.data, gr.size).squaredNorm();
      }
      if (!std::isfinite(sq_norm)) {
        throw TrainingDiverged("gradient is not finite", epoch + 1);
      }
      const double norm = std::sqrt(sq_norm);
      const double clip_scale =
          norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;

      ++adam_t;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t));
      long cursor = 0;
      for (std::size_t r = 0; r < refs.size(); ++r) {
        Eigen::Map<VectorXd> theta(refs[r].data, refs[r].size);
        Eigen::Map<const VectorXd> grad(grefs[r].data, grefs[r].size);
        auto m_seg = adam_m.segment(cursor, refs[r].size);
        auto v_seg = adam_v.segment(cursor, refs[r].size);
        const VectorXd g = clip_scale * grad;
        m_seg = kBeta1 * m_seg + (1.0 - kBeta1) * g;
        v_seg = kBeta2 * v_seg + (1.0 - kBeta2) * g.cwiseProduct(g);
        theta.array() -= cfg.learning_rate * (m_seg.array() / bc1) /
                         ((v_seg.array() / bc2).sqrt() + kEps);
        if (refs[r].decays && cfg.weight_decay > 0.0) {
          // Decoupled decay: the shrink step uses the raw penalty gradient
          // 2 * decay * theta, bypassing the moment estimates.
          theta -= cfg.learning_rate *
                   weight_decay_gradient(cfg.weight_decay, theta);
        }
        cursor += refs[r].size;
      }
    }
    report.train_mse.push_back(evaluate_mse(current, train_set));
    report.valid_mse.push_back(evaluate_mse(current, valid_set));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return {std::move(current), std::move(report)};
}

std::pair<LstmModel, TrainReport> fine_tune(const LstmModel& model,
                                            const SampleSet& new_train,
                                            const TrainConfig& cfg) {
  TrainConfig ft = cfg;
  ft.learning_rate = cfg.learning_rate * cfg.fine_tune_lr_scale;
  return train(model, new_train, new_train, ft);
}

double evaluate_mse(const LstmModel& model, const SampleSet& data) {
  model.validate();
  check_compatible(model, data, "evaluation");
  // Batch trajectories of equal length together so the pass runs on wide
  // matrix products instead of per-trajectory vector ops.
  std::map<long, std::vector<int>> by_length;
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    by_length[static_cast<long>(data.items[i].outputs.length())].push_back(
        static_cast<int>(i));
  }
  double acc = 0.0;
  long count = 0;
  std::vector<MatrixXd> xs, tgt;
  for (const auto& [len, idxs] : by_length) {
    std::vector<std::pair<int, long>> picks;
    picks.reserve(idxs.size());
    for (int i : idxs) picks.emplace_back(i, 0);
    gather_windows(data, picks, len, xs, tgt);
    const auto ys = run_forward(model, xs, nullptr, nullptr);
    for (long t = 0; t < len; ++t) {
      acc += (ys[t] - tgt[t]).squaredNorm();
      count += ys[t].size();
    }
  }
  return acc / static_cast<double>(count);
}

void save_lstm(const LstmModel& model, const std::filesystem::path& path,
               const std::string& note_json) {
  model.validate();
  nlohmann::json header;
  header["format"] = "genemu-lstm";
  header["version"] = 1;
  header["input_dim"] = model.input_dim;
  header["hidden_dim"] = model.hidden_dim;
  header["num_layers"] = model.num_layers;
  header["output_dim"] = model.output_dim;
  header["gate_order"] = "ifgo";
  header["layout"] = "column-major";
  header["dtype"] = "f64-le";
  header["payload_doubles"] = total_param_count(model);
  header["note"] = nlohmann::json::parse(note_json);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << header.dump() << '\n';
  auto dump = [&out](const double* data, long size) {
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(size) *
                  static_cast<std::streamsize>(sizeof(double)));
  };
  for (const auto& layer : model.layers) {
    dump(layer.w.data(), layer.w.size());
    dump(layer.u.data(), layer.u.size());
    dump(layer.bias.data(), layer.bias.size());
  }
  dump(model.w_out.data(), model.w_out.size());
  dump(model.b_out.data(), model.b_out.size());
  if (!out.good()) throw Error("write failed for '" + path.string() + "'");
}

std::pair<LstmModel, std::string> load_lstm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing checkpoint header", 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format") != "genemu-lstm") {
      throw ParseError("not an LSTM checkpoint", 1);
    }
    LstmModel model;
    model.input_dim = header.at("input_dim").get<int>();
    model.hidden_dim = header.at("hidden_dim").get<int>();
    model.num_layers = header.at("num_layers").get<int>();
    model.output_dim = header.at("output_dim").get<int>();
    if (model.input_dim < 1 || model.hidden_dim < 1 || model.num_layers < 1 ||
        model.output_dim < 1) {
      throw ParseError("checkpoint declares nonpositive dimensions", 1);
    }
    for (int l = 0; l < model.num_layers; ++l) {
      LstmLayer layer;
      const int in = l == 0 ? model.input_dim : model.hidden_dim;
      layer.w = MatrixXd::Zero(4 * model.hidden_dim, in);
      layer.u = MatrixXd::Zero(4 * model.hidden_dim, model.hidden_dim);
      layer.bias = VectorXd::Zero(4 * model.hidden_dim);
      model.layers.push_back(std::move(layer));
    }
    model.w_out = MatrixXd::Zero(model.output_dim, model.hidden_dim);
    model.b_out = VectorXd::Zero(model.output_dim);

    const long expect = total_param_count(model);
    if (header.at("payload_doubles").get<long>() != expect) {
      throw ParseError("payload size does not match the declared dimensions",
                       1);
    }
    for (const auto& ref : param_refs(model)) {
      in.read(reinterpret_cast<char*>(ref.data),
              static_cast<std::streamsize>(ref.size) *
                  static_cast<std::streamsize>(sizeof(double)));
      if (!in.good()) throw ParseError("checkpoint payload truncated", 2);
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw ParseError("trailing bytes after the checkpoint payload", 2);
    }
    model.validate();
    return {std::move(model), header.value("note", nlohmann::json::object()).dump()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what(), 1);
  }
}

}  // namespace genemu
