// SPDX-License-Identifier: Apache-2.0
//
// Command line front end. Every subcommand reads an optional config file,
// applies flag overrides, and writes its outputs plus a hashed manifest
// under the output directory. Examples:
//
//   genemu experiment --model wd-lstm --regime randomized --seed 7 --out runs/a
//   genemu generate --config configs/base.cfg --out runs/data
//   genemu evaluate --model-file runs/a/model.lstm.ckpt --model wd-lstm --out runs/b
//   genemu sweep --resistances 10,1,0.1,0.01 --out runs/sweep
//
// Exit codes: 0 success, 2 bad flags or config, 3 the plant could not be
// simulated, 4 model fitting or training failed, 1 anything else.

#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "genemu/config.hpp"
#include "genemu/errors.hpp"
#include "genemu/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPhysics = 3;
constexpr int kExitFit = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string model;
  std::string regime;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("-c,--config", o.config_path,
                  "config file of flat `key = value` lines")
      ->check(CLI::ExistingFile);
  sub->add_option("-o,--out", o.out_dir, "output directory (overrides config)");
  sub->add_option("-s,--seed", o.seed, "master seed (overrides config)");
  sub->add_option("-m,--model", o.model, "var | wd-lstm | ft-wd-lstm");
  sub->add_option("-r,--regime", o.regime,
                  "regular | randomized | high-order-noise");
}

genemu::ExperimentConfig build_config(const CommonOpts& o) {
  genemu::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = genemu::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.model.empty()) cfg.model = genemu::parse_model_kind(o.model);
  if (!o.regime.empty()) cfg.regime = genemu::parse_regime(o.regime);
  cfg.validate();
  return cfg;
}

void print_metrics(const std::filesystem::path& out_dir) {
  std::ifstream in(out_dir / "metrics.json");
  if (!in) return;
  const auto j = nlohmann::json::parse(in);
  std::printf("%s / %s: mean %.3f%%  median %.3f%%  p95 %.3f%%  (n=%d)\n",
              j.at("model").get<std::string>().c_str(),
              j.at("regime").get<std::string>().c_str(),
              j.at("mean").get<double>(), j.at("median").get<double>(),
              j.at("p95").get<double>(), j.at("n_samples").get<int>());
}

void print_diagnostics(const std::filesystem::path& out_dir) {
  std::ifstream in(out_dir / "diag" / "summary.json");
  if (!in) return;
  const auto j = nlohmann::json::parse(in);
  std::printf("order by %s: %d, order by coefficient decay: %d\n",
              j.at("criterion").get<std::string>().c_str(),
              j.at("ic_order").get<int>(), j.at("decay_order").get<int>());
  for (const auto& [pair, entry] : j.at("pairs").items()) {
    std::printf("  %s: detected lag %d%s\n", pair.c_str(),
                entry.at("detected_lag").get<int>(),
                entry.at("regularized").get<bool>() ? " (regularized)" : "");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale generator telemetry emulation toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto* generate = app.add_subcommand(
      "generate", "simulate train/test telemetry and write CSV datasets");
  add_common(generate, opts);

  auto* fit = app.add_subcommand(
      "fit", "generate telemetry, fit the chosen model, save it");
  add_common(fit, opts);

  auto* evaluate = app.add_subcommand(
      "evaluate", "score a saved model on freshly generated test data");
  add_common(evaluate, opts);
  std::string model_file;
  evaluate
      ->add_option("--model-file", model_file,
                   "saved model; --model must name its kind")
      ->required()
      ->check(CLI::ExistingFile);

  auto* diagnose = app.add_subcommand(
      "diagnose", "lag, order, and decay structure of one long trajectory");
  add_common(diagnose, opts);

  auto* experiment = app.add_subcommand(
      "experiment", "full generate / fit / evaluate run with manifest");
  add_common(experiment, opts);

  auto* sweep = app.add_subcommand(
      "sweep", "linear-model error across fault resistance levels");
  add_common(sweep, opts);
  std::vector<double> resistances;
  sweep
      ->add_option("--resistances", resistances,
                   "comma separated fault resistances, most severe last")
      ->required()
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const genemu::ExperimentConfig cfg = build_config(opts);
    const std::filesystem::path out(cfg.out_dir);
    if (app.got_subcommand(generate)) {
      genemu::run_generate(cfg);
      std::printf("wrote datasets under %s\n", cfg.out_dir.c_str());
    } else if (app.got_subcommand(fit)) {
      genemu::run_fit(cfg);
      std::printf("wrote model under %s\n", cfg.out_dir.c_str());
    } else if (app.got_subcommand(evaluate)) {
      genemu::evaluate_saved(cfg, model_file);
      print_metrics(out);
    } else if (app.got_subcommand(diagnose)) {
      genemu::run_diagnostics(cfg);
      print_diagnostics(out);
    } else if (app.got_subcommand(experiment)) {
      genemu::run_experiment(cfg);
      print_metrics(out);
    } else if (app.got_subcommand(sweep)) {
      genemu::run_sweep(cfg, resistances);
      std::printf("wrote %s\n", (out / "grid.csv").string().c_str());
    }
    return kExitOk;
  } catch (const genemu::ConfigError& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitUsage;
  } catch (const genemu::ParseError& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitUsage;
  } catch (const genemu::SimulationDiverged& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitPhysics;
  } catch (const genemu::NoEquilibrium& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitPhysics;
  } catch (const genemu::RandomizationFailed& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitPhysics;
  } catch (const genemu::SingularDesign& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitFit;
  } catch (const genemu::IdentifiabilityError& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitFit;
  } catch (const genemu::NoValidOrder& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitFit;
  } catch (const genemu::TrainingDiverged& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitFit;
  } catch (const genemu::Error& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitOther;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "genemu: %s\n", e.what());
    return kExitOther;
  }
}
