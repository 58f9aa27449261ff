// SPDX-License-Identifier: Apache-2.0
#include "genemu/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <type_traits>
#include <utility>

#include <json.hpp>

#include "genemu/errors.hpp"
#include "genemu/plant.hpp"
#include "genemu/rng.hpp"
#include "genemu/telegraph.hpp"

namespace genemu {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Every random draw in a run descends from the config seed through fixed
// fork tags. Two runs of one config agree bit for bit, and the test split
// for a given (seed, regime) does not depend on which model is fitted.
constexpr std::uint64_t kRoleTrain = 1;
constexpr std::uint64_t kRoleTest = 2;
constexpr std::uint64_t kRoleAdapt = 3;
constexpr std::uint64_t kRoleDiag = 4;
constexpr std::uint64_t kRoleSweep = 5;
constexpr std::uint64_t kTagInit = 0x10;
constexpr std::uint64_t kTagTrainSeed = 0x11;
constexpr std::uint64_t kTagFineTuneSeed = 0x12;

std::uint64_t traj_tag(std::uint64_t role, int index) {
  return (role << 32) | static_cast<std::uint64_t>(index);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

MultiSeries slice(const MultiSeries& s, std::size_t from, std::size_t len) {
  MultiSeries out;
  out.sample_rate = s.sample_rate;
  out.channels.reserve(s.channels.size());
  for (const auto& c : s.channels) {
    if (from + len > c.values.size())
      throw ShapeError("series slice out of range");
    out.channels.push_back(
        {c.label,
         std::vector<double>(c.values.begin() + static_cast<long>(from),
                             c.values.begin() + static_cast<long>(from + len))});
  }
  return out;
}

MultiSeries standardize_channels(const MultiSeries& s,
                                 const std::vector<ChannelStats>& stats) {
  if (stats.size() != s.channels.size())
    throw ShapeError("standardization stats do not match channel count");
  MultiSeries out = s;
  for (std::size_t c = 0; c < out.channels.size(); ++c) {
    for (double& v : out.channels[c].values)
      v = (v - stats[c].mean) / stats[c].stddev;
  }
  return out;
}

std::vector<MultiSeries> make_set(const ExperimentConfig& cfg,
                                  const Rng& master, std::uint64_t role,
                                  int count, bool randomized_plants,
                                  const FaultParams& fault) {
  std::vector<MultiSeries> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const Rng traj = master.fork(traj_tag(role, k));
    Rng plant_rng = traj.fork(1);
    Rng sim_rng = traj.fork(2);
    const PlantConfig plant =
        randomized_plants
            ? randomize_plant(cfg.plant, plant_rng, cfg.randomize.spread)
            : cfg.plant;
    out.push_back(simulate(plant, cfg.telegraph, fault,
                           cfg.data.duration_seconds, sim_rng));
  }
  return out;
}

/// The fault the test split runs under, plus the trajectories themselves.
std::pair<FaultParams, std::vector<MultiSeries>> make_test_split(
    const ExperimentConfig& cfg, const Rng& master,
    const FaultParams& train_fault) {
  FaultParams test_fault = train_fault;
  if (cfg.regime == Regime::HighOrderNoise) {
    // Aim three decades below the training resistance; the plant itself
    // decides how low the probe may actually go and still ride through.
    test_fault.resistance = find_survivable_resistance(
        cfg.plant, train_fault.reactance, train_fault.resistance / 1000.0);
  }
  auto test = make_set(cfg, master, kRoleTest, cfg.data.test_trajectories,
                       cfg.regime == Regime::Randomized, test_fault);
  return {test_fault, std::move(test)};
}

SampleSet to_var_train(const std::vector<MultiSeries>& telem) {
  SampleSet s;
  s.role = Role::Train;
  s.items.reserve(telem.size());
  for (const auto& t : telem)
    s.items.push_back(
        difference_dataset(select_direction(t, Direction::PQtoVPhi)));
  return s;
}

SampleSet to_lstm_set(const std::vector<MultiSeries>& telem, Role role) {
  SampleSet s;
  s.role = role;
  s.items.reserve(telem.size());
  for (const auto& t : telem)
    s.items.push_back(select_direction(t, Direction::VPhiToPQ));
  return s;
}

void fit_stage(const ExperimentConfig& cfg, const TelemetryBundle& bundle,
               PipelineResult& r) {
  switch (cfg.model) {
    case ModelKind::Var: {
      VarFit f = fit_var_model(cfg, bundle.train);
      r.var_model = std::move(f.model);
      r.var_order = f.order;
      break;
    }
    case ModelKind::WdLstm: {
      LstmFit f = fit_lstm_model(cfg, bundle.train);
      r.lstm_model = std::move(f.model);
      r.stats = std::move(f.stats);
      r.train_report = std::move(f.report);
      break;
    }
    case ModelKind::FtWdLstm: {
      LstmFit base = fit_lstm_model(cfg, bundle.train);
      r.train_report = base.report;
      LstmFit tuned = fine_tune_lstm_model(cfg, base, bundle.adapt);
      r.lstm_model = std::move(tuned.model);
      r.stats = std::move(tuned.stats);
      r.fine_tune_report = std::move(tuned.report);
      break;
    }
  }
}

std::vector<double> eval_stage(const ExperimentConfig& cfg,
                               const PipelineResult& r,
                               const std::vector<MultiSeries>& test) {
  if (cfg.model == ModelKind::Var)
    return evaluate_var(r.var_model, test, cfg.metrics.nrmse_literal);
  return evaluate_lstm(r.lstm_model, r.stats, test, cfg.metrics.nrmse_literal);
}

// ---- emitted files ----

json plant_json(const PlantConfig& p) {
  return json{{"inertia_h", p.inertia_h},
              {"damping_d", p.damping_d},
              {"transient_reactance_xd", p.transient_reactance_xd},
              {"transformer_reactance_xt", p.transformer_reactance_xt},
              {"line_reactance_1", p.line_reactance_1},
              {"line_reactance_2", p.line_reactance_2},
              {"infinite_bus_voltage", p.infinite_bus_voltage},
              {"mechanical_power", p.mechanical_power},
              {"internal_emf", p.internal_emf},
              {"base_frequency", p.base_frequency},
              {"fine_dt", p.fine_dt},
              {"sample_dt", p.sample_dt}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

/// One dataset split: numbered trajectory CSVs plus a manifest describing
/// how the split was produced.
void write_split(const fs::path& out, const std::string& name,
                 const std::vector<MultiSeries>& telem,
                 const ExperimentConfig& cfg, const FaultParams& fault,
                 bool randomized_plants, std::vector<std::string>& written) {
  char buf[64];
  for (std::size_t k = 0; k < telem.size(); ++k) {
    std::snprintf(buf, sizeof buf, "data/%s_%03zu.csv", name.c_str(), k);
    save_csv(telem[k], out / buf);
    written.emplace_back(buf);
  }
  json manifest{{"role", name},
                {"transform", "raw"},
                {"seed", cfg.seed},
                {"trajectories", telem.size()},
                {"duration_seconds", cfg.data.duration_seconds},
                {"plant", plant_json(cfg.plant)},
                {"plant_randomized", randomized_plants},
                {"randomize_spread", cfg.randomize.spread},
                {"telegraph",
                 {{"rate_to_fault", cfg.telegraph.rate_to_fault},
                  {"rate_to_clear", cfg.telegraph.rate_to_clear}}},
                {"fault",
                 {{"resistance", fault.resistance},
                  {"reactance", fault.reactance}}}};
  const std::string rel = "data/" + name + "_manifest.json";
  write_json(out / rel, manifest);
  written.push_back(rel);
}

void write_metrics(const fs::path& path, const ExperimentConfig& cfg,
                   const NrmseSummary& summary) {
  json j{{"model", to_string(cfg.model)}, {"regime", to_string(cfg.regime)},
         {"mean", summary.mean},         {"median", summary.median},
         {"p95", summary.p95},           {"n_samples", summary.values.size()},
         {"seed", cfg.seed},             {"values", summary.values}};
  write_json(path, j);
}

void write_curve(const fs::path& path, const TrainReport& report) {
  std::ostringstream out;
  out << "epoch,train_mse,valid_mse\n";
  for (std::size_t e = 0; e < report.train_mse.size(); ++e) {
    out << (e + 1) << ',' << format_double(report.train_mse[e]) << ','
        << format_double(report.valid_mse[e]) << '\n';
  }
  write_text(path, out.str());
}

/// Model checkpoint plus fit diagnostics, shared by the fit-only and full
/// experiment entry points. The checkpoint note carries the direction and
/// the standardization moments so a later evaluation can rebuild the exact
/// preprocessing from the file alone.
void write_model_outputs(const fs::path& out, const ExperimentConfig& cfg,
                         const PipelineResult& result,
                         std::vector<std::string>& written) {
  if (cfg.model == ModelKind::Var) {
    const json meta{{"direction", "PQ_to_VPhi"},
                    {"transform", "first_difference"},
                    {"order", result.var_order}};
    save_varx(result.var_model, out / "model.varx.json", meta.dump());
    written.emplace_back("model.varx.json");
    return;
  }

  json note{{"direction", "VPhi_to_PQ"},
            {"standardize", result.stats.has_value()}};
  if (result.stats) {
    const auto stats_json = [](const std::vector<ChannelStats>& v) {
      json arr = json::array();
      for (const auto& s : v)
        arr.push_back({{"mean", s.mean}, {"stddev", s.stddev}});
      return arr;
    };
    note["input_stats"] = stats_json(result.stats->input);
    note["output_stats"] = stats_json(result.stats->output);
  }
  save_lstm(result.lstm_model, out / "model.lstm.ckpt", note.dump());
  written.emplace_back("model.lstm.ckpt");

  write_curve(out / "training_curve.csv", result.train_report);
  written.emplace_back("training_curve.csv");
  if (cfg.model == ModelKind::FtWdLstm) {
    write_curve(out / "fine_tune_curve.csv", result.fine_tune_report);
    written.emplace_back("fine_tune_curve.csv");
  }
}

std::vector<ManifestEntry> hash_entries(const fs::path& out,
                                        std::vector<std::string> written) {
  std::sort(written.begin(), written.end());
  std::vector<ManifestEntry> entries;
  entries.reserve(written.size());
  for (const auto& rel : written)
    entries.push_back({rel, sha256_file(out / rel)});
  return entries;
}

/// Runs one named stage, records its wall time, and on any library error
/// writes the manifest (incomplete, failure = "stage: reason") with the
/// files emitted so far before letting the error propagate.
class StageRunner {
 public:
  StageRunner(RunManifest& manifest, fs::path out_dir,
              std::vector<std::string>& written)
      : manifest_(manifest), out_(std::move(out_dir)), written_(written) {}

  template <class F>
  auto operator()(const std::string& name, F&& f) -> decltype(f()) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        record(name, t0);
      } else {
        auto result = f();
        record(name, t0);
        return result;
      }
    } catch (const Error& e) {
      record(name, t0);
      manifest_.complete = false;
      manifest_.failure = name + ": " + e.what();
      try {
        manifest_.files = hash_entries(out_, written_);
        save_manifest(manifest_, out_ / "manifest.json");
      } catch (...) {
        // The failure manifest is best effort; the original error matters.
      }
      throw;
    }
  }

 private:
  void record(const std::string& name,
              std::chrono::steady_clock::time_point t0) {
    manifest_.stage_seconds[name] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
  }

  RunManifest& manifest_;
  fs::path out_;
  std::vector<std::string>& written_;
};

/// Shared preamble: create the run directory, start the manifest, and drop
/// the canonical config next to the outputs.
struct RunContext {
  fs::path out;
  RunManifest manifest;
  std::vector<std::string> written;

  explicit RunContext(const ExperimentConfig& cfg) : out(cfg.out_dir) {
    fs::create_directories(out);
    manifest.config_text = serialize_config(cfg);
    write_text(out / "config.txt", manifest.config_text);
    written.emplace_back("config.txt");
  }

  StageRunner stage() { return StageRunner(manifest, out, written); }

  RunManifest finish() {
    manifest.files = hash_entries(out, written);
    manifest.complete = true;
    save_manifest(manifest, out / "manifest.json");
    return manifest;
  }
};

std::string hex_digest(const unsigned char* digest, unsigned len) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for hashing");

  const std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(
      EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 context initialization failed");

  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    const std::streamsize got = in.gcount();
    if (got > 0 &&
        EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(got)) != 1)
      throw Error("SHA-256 update failed");
  }
  if (in.bad()) throw Error("read error while hashing '" + path.string() + "'");

  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error("SHA-256 finalization failed");
  return hex_digest(digest, len);
}

void RunManifest::validate() const {
  if (complete && !failure.empty())
    throw InvalidArgument("complete manifest cannot carry a failure");
  std::string prev;
  for (const auto& f : files) {
    if (f.path.empty()) throw InvalidArgument("manifest entry without a path");
    if (f.sha256.size() != 64)
      throw InvalidArgument("manifest hash for '" + f.path +
                            "' is not SHA-256 hex");
    if (!prev.empty() && !(prev < f.path))
      throw InvalidArgument("manifest files must be sorted and unique");
    prev = f.path;
  }
  for (const auto& [name, seconds] : stage_seconds) {
    if (name.empty()) throw InvalidArgument("unnamed stage time");
    if (!(seconds >= 0.0) || !std::isfinite(seconds))
      throw InvalidArgument("stage '" + name + "' has an invalid wall time");
  }
}

void save_manifest(const RunManifest& manifest,
                   const std::filesystem::path& path) {
  manifest.validate();
  json files = json::array();
  for (const auto& f : manifest.files)
    files.push_back({{"path", f.path}, {"sha256", f.sha256}});
  const json j{{"complete", manifest.complete},
               {"failure", manifest.failure},
               {"config", manifest.config_text},
               {"files", files},
               {"stage_seconds", manifest.stage_seconds},
               {"versions",
                {{"manifest_format", 1},
                 {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                               std::to_string(EIGEN_MAJOR_VERSION) + "." +
                               std::to_string(EIGEN_MINOR_VERSION)}}}};
  write_json(path, j);
}

RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path.string() + "'");
  RunManifest m;
  try {
    const json j = json::parse(in);
    m.complete = j.at("complete").get<bool>();
    m.failure = j.at("failure").get<std::string>();
    m.config_text = j.at("config").get<std::string>();
    for (const auto& f : j.at("files"))
      m.files.push_back({f.at("path").get<std::string>(),
                         f.at("sha256").get<std::string>()});
    m.stage_seconds =
        j.at("stage_seconds").get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what(), 0);
  }
  m.validate();
  return m;
}

FaultParams resolve_fault(const ExperimentConfig& cfg) {
  FaultParams f;
  f.resistance = cfg.fault.resistance;
  f.reactance = cfg.fault.reactance
                    ? *cfg.fault.reactance
                    : calibrate_fault_reactance(cfg.plant, f.resistance);
  f.validate();
  return f;
}

TelemetryBundle generate_telemetry(const ExperimentConfig& cfg) {
  cfg.validate();
  const Rng master(cfg.seed);
  TelemetryBundle b;
  b.train_fault = resolve_fault(cfg);

  // The linear model fits the regime's own training data; the networks
  // always start from the fixed plant and adapt afterwards if configured.
  const bool train_randomized =
      cfg.regime == Regime::Randomized && cfg.model == ModelKind::Var;
  b.train = make_set(cfg, master, kRoleTrain, cfg.data.train_trajectories,
                     train_randomized, b.train_fault);

  if (cfg.model == ModelKind::FtWdLstm) {
    b.adapt = cfg.regime == Regime::Regular
                  ? b.train
                  : make_set(cfg, master, kRoleAdapt,
                             cfg.data.train_trajectories, true, b.train_fault);
  }

  auto [test_fault, test] = make_test_split(cfg, master, b.train_fault);
  b.test_fault = test_fault;
  b.test = std::move(test);
  return b;
}

VarFit fit_var_model(const ExperimentConfig& cfg,
                     const std::vector<MultiSeries>& telem) {
  const SampleSet set = to_var_train(telem);
  VarFit fit;
  fit.order = cfg.var.order > 0
                  ? cfg.var.order
                  : select_order_ic(set, cfg.var.p_max, cfg.var.criterion);
  fit.model = fit_varx(set, fit.order);
  return fit;
}

LstmFit fit_lstm_model(const ExperimentConfig& cfg,
                       const std::vector<MultiSeries>& telem) {
  const Rng master(cfg.seed);
  SampleSet set = to_lstm_set(telem, Role::Train);
  LstmFit fit;
  if (cfg.lstm.standardize) {
    fit.stats = fit_standardize(set);
    set = apply_standardize(*fit.stats, set);
  }
  Rng init_rng = master.fork(kTagInit);
  const LstmModel fresh =
      init_lstm(2, cfg.lstm.hidden_dim, cfg.lstm.num_layers, 2, init_rng);
  TrainConfig tc = cfg.train;
  tc.seed = master.fork(kTagTrainSeed).seed();
  auto [model, report] = train(fresh, set, set, tc);
  fit.model = std::move(model);
  fit.report = std::move(report);
  return fit;
}

LstmFit fine_tune_lstm_model(const ExperimentConfig& cfg, const LstmFit& base,
                             const std::vector<MultiSeries>& adapt) {
  const Rng master(cfg.seed);
  SampleSet set = to_lstm_set(adapt, Role::Train);
  LstmFit out;
  // Refit the scaler on the adaptation fleet: its operating points differ
  // from the base fleet's, and stale moments would force the weights to
  // absorb the affine mismatch instead of the actual dynamics shift.
  if (base.stats) {
    out.stats = fit_standardize(set);
    set = apply_standardize(*out.stats, set);
  }
  TrainConfig tc = cfg.train;
  tc.epochs = cfg.fine_tune.epochs;
  tc.seed = master.fork(kTagFineTuneSeed).seed();
  auto [model, report] = fine_tune(base.model, set, tc);
  out.model = std::move(model);
  out.report = std::move(report);
  return out;
}

std::vector<double> evaluate_var(const VarxModel& model,
                                 const std::vector<MultiSeries>& test,
                                 bool literal) {
  model.validate();
  const int p = model.order;
  std::vector<double> out;
  out.reserve(test.size());
  for (const auto& telem : test) {
    const Dataset raw = select_direction(telem, Direction::PQtoVPhi);
    const Dataset diff = difference_dataset(raw);
    const std::size_t n = diff.outputs.length();
    if (n <= static_cast<std::size_t>(p))
      throw TooShort("test trajectory shorter than the model order");
    const std::size_t count = n - static_cast<std::size_t>(p);

    // One-step scoring, like the network's: every prediction conditions on
    // measured history only. Increment k of the one-step table predicts
    // diff.outputs[p + k], i.e. the level change onto raw index p + k + 1,
    // so each predicted level is the measured previous level plus the
    // predicted increment. (Recursive multi-step forecasts are a separate
    // operation; a long closed-loop rollout of a marginally stable fit
    // explodes and would say nothing about emulation quality.)
    const MultiSeries inc = one_step_predictions(model, diff);
    MultiSeries pred = slice(raw.outputs, static_cast<std::size_t>(p), count);
    for (std::size_t j = 0; j < pred.channels.size(); ++j) {
      auto& values = pred.channels[j].values;
      const auto& steps = inc.channels[j].values;
      for (std::size_t k = 0; k < values.size(); ++k) values[k] += steps[k];
    }

    const MultiSeries truth =
        slice(raw.outputs, static_cast<std::size_t>(p) + 1, count);
    out.push_back(100.0 * nrmse(truth, pred, literal));
  }
  return out;
}

std::vector<double> evaluate_lstm(const LstmModel& model,
                                  const std::optional<StandardizeStats>& stats,
                                  const std::vector<MultiSeries>& test,
                                  bool literal) {
  std::vector<double> out;
  out.reserve(test.size());
  for (const auto& telem : test) {
    const Dataset raw = select_direction(telem, Direction::VPhiToPQ);
    MultiSeries in = raw.inputs;
    if (stats) in = standardize_channels(in, stats->input);
    MultiSeries pred = forward(model, in);
    if (stats) pred = destandardize_outputs(pred, stats->output);
    if (pred.channels.size() != raw.outputs.channels.size())
      throw ShapeError("model output width does not match the telemetry");
    for (std::size_t c = 0; c < pred.channels.size(); ++c)
      pred.channels[c].label = raw.outputs.channels[c].label;
    pred.sample_rate = raw.outputs.sample_rate;
    out.push_back(100.0 * nrmse(raw.outputs, pred, literal));
  }
  return out;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  const TelemetryBundle bundle = generate_telemetry(cfg);
  PipelineResult r;
  fit_stage(cfg, bundle, r);
  r.summary = summarize(eval_stage(cfg, r, bundle.test));
  return r;
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx(cfg);
  fs::create_directories(ctx.out / "data");
  StageRunner stage = ctx.stage();

  const TelemetryBundle bundle =
      stage("generate", [&] { return generate_telemetry(cfg); });

  stage("write_datasets", [&] {
    const bool train_randomized =
        cfg.regime == Regime::Randomized && cfg.model == ModelKind::Var;
    write_split(ctx.out, "train", bundle.train, cfg, bundle.train_fault,
                train_randomized, ctx.written);
    if (cfg.model == ModelKind::FtWdLstm && cfg.regime != Regime::Regular) {
      write_split(ctx.out, "adapt", bundle.adapt, cfg, bundle.train_fault,
                  true, ctx.written);
    }
    write_split(ctx.out, "test", bundle.test, cfg, bundle.test_fault,
                cfg.regime == Regime::Randomized, ctx.written);
  });

  PipelineResult result;
  stage("fit", [&] { fit_stage(cfg, bundle, result); });

  stage("evaluate", [&] {
    result.summary = summarize(eval_stage(cfg, result, bundle.test));
  });

  stage("write_outputs", [&] {
    write_model_outputs(ctx.out, cfg, result, ctx.written);
    write_metrics(ctx.out / "metrics.json", cfg, result.summary);
    ctx.written.emplace_back("metrics.json");
  });

  return ctx.finish();
}

RunManifest run_generate(const ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx(cfg);
  fs::create_directories(ctx.out / "data");
  StageRunner stage = ctx.stage();

  const TelemetryBundle bundle =
      stage("generate", [&] { return generate_telemetry(cfg); });
  stage("write_datasets", [&] {
    const bool train_randomized =
        cfg.regime == Regime::Randomized && cfg.model == ModelKind::Var;
    write_split(ctx.out, "train", bundle.train, cfg, bundle.train_fault,
                train_randomized, ctx.written);
    if (cfg.model == ModelKind::FtWdLstm && cfg.regime != Regime::Regular) {
      write_split(ctx.out, "adapt", bundle.adapt, cfg, bundle.train_fault,
                  true, ctx.written);
    }
    write_split(ctx.out, "test", bundle.test, cfg, bundle.test_fault,
                cfg.regime == Regime::Randomized, ctx.written);
  });
  return ctx.finish();
}

RunManifest run_fit(const ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx(cfg);
  StageRunner stage = ctx.stage();

  const TelemetryBundle bundle =
      stage("generate", [&] { return generate_telemetry(cfg); });
  PipelineResult result;
  stage("fit", [&] { fit_stage(cfg, bundle, result); });
  stage("write_outputs",
        [&] { write_model_outputs(ctx.out, cfg, result, ctx.written); });
  return ctx.finish();
}

RunManifest evaluate_saved(const ExperimentConfig& cfg,
                           const std::filesystem::path& model_path) {
  cfg.validate();
  RunContext ctx(cfg);
  StageRunner stage = ctx.stage();

  // Load first: a bad model file should fail before simulation starts.
  VarxModel var_model;
  LstmModel lstm_model;
  std::optional<StandardizeStats> stats;
  stage("load_model", [&] {
    if (cfg.model == ModelKind::Var) {
      auto [m, meta_text] = load_varx(model_path);
      json meta;
      try {
        meta = json::parse(meta_text);
      } catch (const json::exception& e) {
        throw ParseError(std::string("model metadata: ") + e.what(), 0);
      }
      if (meta.value("direction", "PQ_to_VPhi") != "PQ_to_VPhi")
        throw ConfigError("model file was fitted in an unsupported direction");
      var_model = std::move(m);
    } else {
      auto [m, note_text] = load_lstm(model_path);
      json note;
      try {
        note = json::parse(note_text);
      } catch (const json::exception& e) {
        throw ParseError(std::string("model note: ") + e.what(), 0);
      }
      if (note.value("direction", "VPhi_to_PQ") != "VPhi_to_PQ")
        throw ConfigError("model file was fitted in an unsupported direction");
      if (note.value("standardize", false)) {
        StandardizeStats s;
        for (const auto& e : note.at("input_stats"))
          s.input.push_back({e.at("mean").get<double>(),
                             e.at("stddev").get<double>()});
        for (const auto& e : note.at("output_stats"))
          s.output.push_back({e.at("mean").get<double>(),
                              e.at("stddev").get<double>()});
        stats = std::move(s);
      }
      lstm_model = std::move(m);
    }
  });

  const auto test = stage("generate", [&] {
    const Rng master(cfg.seed);
    return make_test_split(cfg, master, resolve_fault(cfg)).second;
  });

  stage("evaluate", [&] {
    const std::vector<double> values =
        cfg.model == ModelKind::Var
            ? evaluate_var(var_model, test, cfg.metrics.nrmse_literal)
            : evaluate_lstm(lstm_model, stats, test, cfg.metrics.nrmse_literal);
    write_metrics(ctx.out / "metrics.json", cfg, summarize(values));
    ctx.written.emplace_back("metrics.json");
  });

  return ctx.finish();
}

RunManifest run_diagnostics(const ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx(cfg);
  fs::create_directories(ctx.out / "diag");
  StageRunner stage = ctx.stage();

  const MultiSeries telem = stage("generate", [&] {
    const Rng master(cfg.seed);
    Rng sim_rng = master.fork(traj_tag(kRoleDiag, 0)).fork(2);
    return simulate(cfg.plant, cfg.telegraph, resolve_fault(cfg),
                    cfg.diag.duration_seconds, sim_rng);
  });

  json summary;
  summary["criterion"] = [&] {
    switch (cfg.var.criterion) {
      case OrderCriterion::Aic: return "aic";
      case OrderCriterion::Bic: return "bic";
      case OrderCriterion::Hqic: return "hqic";
      case OrderCriterion::Fpe: return "fpe";
    }
    return "aic";
  }();

  stage("lag_structure", [&] {
    const std::vector<std::string> names{"P", "Q", "V", "phi"};
    // Differencing first keeps slow level drift from swamping the
    // correlations the probe is after.
    std::map<std::string, std::vector<double>> diffed;
    for (const auto& name : names) {
      const auto& v = telem.values(name);
      std::vector<double> d(v.size() - 1);
      for (std::size_t i = 0; i + 1 < v.size(); ++i) d[i] = v[i + 1] - v[i];
      diffed[name] = std::move(d);
    }
    for (std::size_t a = 0; a < names.size(); ++a) {
      for (std::size_t b = a + 1; b < names.size(); ++b) {
        LagDiagnostic d = lag_diagnostic(diffed[names[a]], diffed[names[b]],
                                         cfg.diag.max_lag);
        d.label_a = names[a];
        d.label_b = names[b];

        std::ostringstream csv;
        csv << "i,j,corr,inverse\n";
        for (int i = 0; i <= cfg.diag.max_lag; ++i)
          for (int j = 0; j <= cfg.diag.max_lag; ++j)
            csv << i << ',' << j << ',' << format_double(d.corr(i, j)) << ','
                << format_double(d.inverse_corr(i, j)) << '\n';
        const std::string rel = "diag/lag_" + names[a] + "_" + names[b] + ".csv";
        write_text(ctx.out / rel, csv.str());
        ctx.written.push_back(rel);

        summary["pairs"][names[a] + "_" + names[b]] = {
            {"detected_lag", d.detected_lag}, {"regularized", d.regularized}};
      }
    }
  });

  stage("order_structure", [&] {
    SampleSet set;
    set.role = Role::Train;
    set.items.push_back(
        difference_dataset(select_direction(telem, Direction::PQtoVPhi)));

    const auto rows = scan_orders(set, cfg.var.p_max);
    std::ostringstream criteria;
    criteria << "order,aic,bic,hqic,fpe\n";
    for (const auto& r : rows)
      criteria << r.order << ',' << format_double(r.aic) << ','
               << format_double(r.bic) << ',' << format_double(r.hqic) << ','
               << format_double(r.fpe) << '\n';
    write_text(ctx.out / "diag/criteria.csv", criteria.str());
    ctx.written.emplace_back("diag/criteria.csv");

    summary["ic_order"] =
        select_order_ic(set, cfg.var.p_max, cfg.var.criterion);

    if (cfg.var.p_max >= 2) {
      const VarxModel deep = fit_varx(set, cfg.var.p_max);
      std::ostringstream decay;
      decay << "lag,delta_frobenius\n";
      for (int i = 2; i <= cfg.var.p_max; ++i) {
        const double delta = (deep.endo_coeffs[static_cast<std::size_t>(i - 1)] -
                              deep.endo_coeffs[static_cast<std::size_t>(i - 2)])
                                 .norm();
        decay << i << ',' << format_double(delta) << '\n';
      }
      write_text(ctx.out / "diag/decay.csv", decay.str());
      ctx.written.emplace_back("diag/decay.csv");

      summary["decay_order"] =
          select_order_decay(set, cfg.var.p_max, cfg.var.decay_epsilon);
    }
  });

  write_json(ctx.out / "diag/summary.json", summary);
  ctx.written.emplace_back("diag/summary.json");

  return ctx.finish();
}

RegimeGrid resistance_sweep(const ExperimentConfig& cfg,
                            const std::vector<double>& resistances) {
  cfg.validate();
  const Rng master(cfg.seed);
  // The sweep studies severity versus resistance, so a configured reactance
  // is honored but "auto" means a bolted (purely resistive) fault here, not
  // the calibrated value: per-level calibration would hold severity flat.
  const double reactance = cfg.fault.reactance.value_or(0.0);

  int cell = 0;
  const auto make_pair_fn = [&](double r) {
    FaultParams f;
    f.resistance = r;
    f.reactance = reactance;
    f.validate();
    const Rng cell_rng = master.fork(traj_tag(kRoleSweep, cell++));
    Rng train_rng = cell_rng.fork(1);
    Rng test_rng = cell_rng.fork(2);
    MultiSeries tr = simulate(cfg.plant, cfg.telegraph, f,
                              cfg.data.duration_seconds, train_rng);
    MultiSeries te = simulate(cfg.plant, cfg.telegraph, f,
                              cfg.data.duration_seconds, test_rng);
    return std::pair<MultiSeries, MultiSeries>(std::move(tr), std::move(te));
  };

  const auto fit_eval = [&](const MultiSeries& tr, const MultiSeries& te) {
    const VarFit fit = fit_var_model(cfg, {tr});
    // Grid cells carry fractions by convention; percent is a report unit.
    return evaluate_var(fit.model, {te}, cfg.metrics.nrmse_literal)[0] / 100.0;
  };

  return regime_sweep(resistances, make_pair_fn, fit_eval, "var_nrmse");
}

RunManifest run_sweep(const ExperimentConfig& cfg,
                      const std::vector<double>& resistances) {
  cfg.validate();
  RunContext ctx(cfg);
  StageRunner stage = ctx.stage();

  const RegimeGrid grid =
      stage("sweep", [&] { return resistance_sweep(cfg, resistances); });
  stage("write_outputs", [&] {
    save_grid_csv(grid, ctx.out / "grid.csv");
    ctx.written.emplace_back("grid.csv");
  });
  return ctx.finish();
}

}  // namespace genemu
