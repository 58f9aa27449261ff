// SPDX-License-Identifier: Apache-2.0
#include "genemu/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <system_error>
#include <vector>

#include "genemu/errors.hpp"

namespace genemu {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class T>
std::string format_int(T v) {
  return std::to_string(v);
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

[[noreturn]] void bad_value(const std::string& key, const char* expected,
                            const std::string& got) {
  throw ConfigError("config key '" + key + "': expected " + expected +
                    ", got '" + got + "'");
}

double read_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end)
    bad_value(key, "a number", v);
  return out;
}

int read_int(const std::string& key, const std::string& v) {
  int out = 0;
  const char* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end)
    bad_value(key, "an integer", v);
  return out;
}

std::uint64_t read_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end)
    bad_value(key, "an unsigned integer", v);
  return out;
}

bool read_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, "true or false", v);
}

std::string normalize_separators(std::string s) {
  for (char& c : s)
    if (c == '-') c = '_';
  return s;
}

std::string to_string(OrderCriterion c) {
  switch (c) {
    case OrderCriterion::Aic: return "aic";
    case OrderCriterion::Bic: return "bic";
    case OrderCriterion::Hqic: return "hqic";
    case OrderCriterion::Fpe: return "fpe";
  }
  throw InvalidArgument("unhandled order criterion");
}

OrderCriterion read_criterion(const std::string& key, const std::string& v) {
  if (v == "aic") return OrderCriterion::Aic;
  if (v == "bic") return OrderCriterion::Bic;
  if (v == "hqic") return OrderCriterion::Hqic;
  if (v == "fpe") return OrderCriterion::Fpe;
  bad_value(key, "one of aic, bic, hqic, fpe", v);
}

struct KeyDef {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// `field` maps a (const or mutable) config reference to the target member.
template <class F>
KeyDef double_key(std::string key, F field) {
  return {key,
          [key, field](ExperimentConfig& c, const std::string& v) {
            field(c) = read_double(key, v);
          },
          [field](const ExperimentConfig& c) { return format_double(field(c)); }};
}

template <class F>
KeyDef int_key(std::string key, F field) {
  return {key,
          [key, field](ExperimentConfig& c, const std::string& v) {
            field(c) = read_int(key, v);
          },
          [field](const ExperimentConfig& c) { return format_int(field(c)); }};
}

template <class F>
KeyDef bool_key(std::string key, F field) {
  return {key,
          [key, field](ExperimentConfig& c, const std::string& v) {
            field(c) = read_bool(key, v);
          },
          [field](const ExperimentConfig& c) { return format_bool(field(c)); }};
}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    t.push_back({"regime",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.regime = parse_regime(v);
                 },
                 [](const ExperimentConfig& c) { return to_string(c.regime); }});
    t.push_back({"model",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.model = parse_model_kind(v);
                 },
                 [](const ExperimentConfig& c) { return to_string(c.model); }});
    t.push_back({"seed",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.seed = read_u64("seed", v);
                 },
                 [](const ExperimentConfig& c) { return format_int(c.seed); }});
    t.push_back({"out_dir",
                 [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
                 [](const ExperimentConfig& c) { return c.out_dir; }});

    t.push_back(double_key("plant.inertia_h",
                           [](auto& c) -> auto& { return c.plant.inertia_h; }));
    t.push_back(double_key("plant.damping_d",
                           [](auto& c) -> auto& { return c.plant.damping_d; }));
    t.push_back(double_key("plant.transient_reactance_xd", [](auto& c) -> auto& {
      return c.plant.transient_reactance_xd;
    }));
    t.push_back(double_key("plant.transformer_reactance_xt",
                           [](auto& c) -> auto& {
                             return c.plant.transformer_reactance_xt;
                           }));
    t.push_back(double_key("plant.line_reactance_1", [](auto& c) -> auto& {
      return c.plant.line_reactance_1;
    }));
    t.push_back(double_key("plant.line_reactance_2", [](auto& c) -> auto& {
      return c.plant.line_reactance_2;
    }));
    t.push_back(double_key("plant.infinite_bus_voltage", [](auto& c) -> auto& {
      return c.plant.infinite_bus_voltage;
    }));
    t.push_back(double_key("plant.mechanical_power", [](auto& c) -> auto& {
      return c.plant.mechanical_power;
    }));
    t.push_back(double_key("plant.internal_emf",
                           [](auto& c) -> auto& { return c.plant.internal_emf; }));
    t.push_back(double_key("plant.base_frequency", [](auto& c) -> auto& {
      return c.plant.base_frequency;
    }));
    t.push_back(double_key("plant.fine_dt",
                           [](auto& c) -> auto& { return c.plant.fine_dt; }));
    t.push_back(double_key("plant.sample_dt",
                           [](auto& c) -> auto& { return c.plant.sample_dt; }));

    t.push_back(double_key("telegraph.rate_to_fault", [](auto& c) -> auto& {
      return c.telegraph.rate_to_fault;
    }));
    t.push_back(double_key("telegraph.rate_to_clear", [](auto& c) -> auto& {
      return c.telegraph.rate_to_clear;
    }));

    t.push_back(double_key("fault.resistance", [](auto& c) -> auto& {
      return c.fault.resistance;
    }));
    t.push_back({"fault.reactance",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "auto")
                     c.fault.reactance.reset();
                   else
                     c.fault.reactance = read_double("fault.reactance", v);
                 },
                 [](const ExperimentConfig& c) {
                   return c.fault.reactance ? format_double(*c.fault.reactance)
                                            : std::string("auto");
                 }});

    t.push_back(int_key("data.train_trajectories", [](auto& c) -> auto& {
      return c.data.train_trajectories;
    }));
    t.push_back(int_key("data.test_trajectories", [](auto& c) -> auto& {
      return c.data.test_trajectories;
    }));
    t.push_back(double_key("data.duration_seconds", [](auto& c) -> auto& {
      return c.data.duration_seconds;
    }));

    t.push_back({"var.order",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.var.order = (v == "auto") ? 0 : read_int("var.order", v);
                 },
                 [](const ExperimentConfig& c) {
                   return c.var.order == 0 ? std::string("auto")
                                           : format_int(c.var.order);
                 }});
    t.push_back(
        int_key("var.p_max", [](auto& c) -> auto& { return c.var.p_max; }));
    t.push_back({"var.criterion",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.var.criterion = read_criterion("var.criterion", v);
                 },
                 [](const ExperimentConfig& c) {
                   return to_string(c.var.criterion);
                 }});
    t.push_back(double_key("var.decay_epsilon", [](auto& c) -> auto& {
      return c.var.decay_epsilon;
    }));

    t.push_back(int_key("lstm.hidden_dim",
                        [](auto& c) -> auto& { return c.lstm.hidden_dim; }));
    t.push_back(int_key("lstm.num_layers",
                        [](auto& c) -> auto& { return c.lstm.num_layers; }));
    t.push_back(bool_key("lstm.standardize",
                         [](auto& c) -> auto& { return c.lstm.standardize; }));

    t.push_back(double_key("train.weight_drop_prob", [](auto& c) -> auto& {
      return c.train.weight_drop_prob;
    }));
    t.push_back(double_key("train.output_dropout_prob", [](auto& c) -> auto& {
      return c.train.output_dropout_prob;
    }));
    t.push_back(double_key("train.weight_decay", [](auto& c) -> auto& {
      return c.train.weight_decay;
    }));
    t.push_back(int_key("train.base_window_len", [](auto& c) -> auto& {
      return c.train.base_window_len;
    }));
    t.push_back(int_key("train.window_len_jitter", [](auto& c) -> auto& {
      return c.train.window_len_jitter;
    }));
    t.push_back(double_key("train.learning_rate", [](auto& c) -> auto& {
      return c.train.learning_rate;
    }));
    t.push_back(
        int_key("train.epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    t.push_back(int_key("train.batch_size",
                        [](auto& c) -> auto& { return c.train.batch_size; }));
    t.push_back(double_key("train.grad_clip_norm", [](auto& c) -> auto& {
      return c.train.grad_clip_norm;
    }));
    t.push_back(double_key("train.fine_tune_lr_scale", [](auto& c) -> auto& {
      return c.train.fine_tune_lr_scale;
    }));

    t.push_back(int_key("fine_tune.epochs",
                        [](auto& c) -> auto& { return c.fine_tune.epochs; }));

    t.push_back(double_key("randomize.spread", [](auto& c) -> auto& {
      return c.randomize.spread;
    }));

    t.push_back(bool_key("metrics.nrmse_literal", [](auto& c) -> auto& {
      return c.metrics.nrmse_literal;
    }));

    t.push_back(double_key("diag.duration_seconds", [](auto& c) -> auto& {
      return c.diag.duration_seconds;
    }));
    t.push_back(
        int_key("diag.max_lag", [](auto& c) -> auto& { return c.diag.max_lag; }));
    return t;
  }();
  return table;
}

const KeyDef* find_key(const std::string& key) {
  for (const KeyDef& def : key_table())
    if (def.key == key) return &def;
  return nullptr;
}

std::string section_of(const std::string& key) {
  const auto dot = key.find('.');
  return dot == std::string::npos ? "" : key.substr(0, dot);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::Regular: return "regular";
    case Regime::Randomized: return "randomized";
    case Regime::HighOrderNoise: return "high_order_noise";
  }
  throw InvalidArgument("unhandled regime");
}

std::string to_string(ModelKind model) {
  switch (model) {
    case ModelKind::Var: return "var";
    case ModelKind::WdLstm: return "wd_lstm";
    case ModelKind::FtWdLstm: return "ft_wd_lstm";
  }
  throw InvalidArgument("unhandled model kind");
}

Regime parse_regime(const std::string& text) {
  const std::string v = normalize_separators(text);
  if (v == "regular") return Regime::Regular;
  if (v == "randomized") return Regime::Randomized;
  if (v == "high_order_noise") return Regime::HighOrderNoise;
  throw ConfigError(
      "invalid regime '" + text +
      "': expected one of regular, randomized, high_order_noise");
}

ModelKind parse_model_kind(const std::string& text) {
  const std::string v = normalize_separators(text);
  if (v == "var") return ModelKind::Var;
  if (v == "wd_lstm") return ModelKind::WdLstm;
  if (v == "ft_wd_lstm") return ModelKind::FtWdLstm;
  throw ConfigError("invalid model '" + text +
                    "': expected one of var, wd_lstm, ft_wd_lstm");
}

void ExperimentConfig::validate() const {
  require(!out_dir.empty(), "out_dir must not be empty");
  require(out_dir.find('#') == std::string::npos &&
              out_dir.find('\n') == std::string::npos,
          "out_dir must not contain '#' or newlines");

  plant.validate();
  telegraph.validate();
  train.validate();

  require(std::isfinite(fault.resistance) && fault.resistance > 0.0,
          "fault.resistance must be positive and finite");
  if (fault.reactance)
    require(std::isfinite(*fault.reactance) && *fault.reactance >= 0.0,
            "fault.reactance must be nonnegative and finite");

  require(data.train_trajectories >= 1,
          "data.train_trajectories must be at least 1");
  require(data.test_trajectories >= 1,
          "data.test_trajectories must be at least 1");
  require(std::isfinite(data.duration_seconds) &&
              data.duration_seconds >= 2.0 * plant.sample_dt,
          "data.duration_seconds must cover at least two telemetry samples");

  require(var.order >= 0, "var.order must be nonnegative (0 means auto)");
  require(var.p_max >= 1, "var.p_max must be at least 1");
  require(std::isfinite(var.decay_epsilon) && var.decay_epsilon > 0.0,
          "var.decay_epsilon must be positive and finite");

  require(lstm.hidden_dim >= 1, "lstm.hidden_dim must be at least 1");
  require(lstm.num_layers >= 1, "lstm.num_layers must be at least 1");

  require(fine_tune.epochs >= 0, "fine_tune.epochs must be nonnegative");
  require(std::isfinite(randomize.spread) && randomize.spread >= 0.0,
          "randomize.spread must be nonnegative and finite");

  require(std::isfinite(diag.duration_seconds) &&
              diag.duration_seconds >= 2.0 * plant.sample_dt,
          "diag.duration_seconds must cover at least two telemetry samples");
  require(diag.max_lag >= 1, "diag.max_lag must be at least 1");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line is not 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("config line has an empty key", line_no);

    const KeyDef* def = find_key(key);
    if (def == nullptr)
      throw ConfigError("unknown config key '" + key + "' (line " +
                        std::to_string(line_no) + ")");
    if (value.empty())
      throw ConfigError("config key '" + key + "' has an empty value (line " +
                        std::to_string(line_no) + ")");
    try {
      def->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " +
                        std::to_string(line_no) + ")");
    }
  }
  cfg.validate();
  return cfg;
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  std::string last_section;
  bool first = true;
  for (const KeyDef& def : key_table()) {
    const std::string section = section_of(def.key);
    if (!first && section != last_section) out += '\n';
    out += def.key;
    out += " = ";
    out += def.get(config);
    out += '\n';
    last_section = section;
    first = false;
  }
  return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void save_config(const ExperimentConfig& config,
                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write config file '" + path.string() + "'");
  out << serialize_config(config);
  if (!out) throw ConfigError("failed writing config to '" + path.string() + "'");
}

}  // namespace genemu
