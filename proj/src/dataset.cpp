// SPDX-License-Identifier: Apache-2.0
#include "genemu/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "genemu/errors.hpp"

namespace genemu {

namespace {

constexpr double kStddevFloor = 1e-12;

std::vector<ChannelStats> channel_moments(const std::vector<const Channel*>& chans) {
  std::vector<ChannelStats> stats;
  stats.reserve(chans.size());
  for (const Channel* c : chans) {
    double mean = 0.0;
    for (double v : c->values) mean += v;
    mean /= static_cast<double>(c->values.size());
    double var = 0.0;
    for (double v : c->values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c->values.size());
    const double sd = std::sqrt(var);
    if (sd < kStddevFloor) {
      throw DegenerateChannel("channel '" + c->label +
                              "' has zero variance in the training set");
    }
    stats.push_back({mean, sd});
  }
  return stats;
}

MultiSeries standardize_series(const MultiSeries& s,
                               const std::vector<ChannelStats>& stats) {
  if (stats.size() != s.channels.size()) {
    throw ShapeError("standardization stats do not match channel count");
  }
  MultiSeries out = s;
  for (std::size_t c = 0; c < out.channels.size(); ++c) {
    for (double& v : out.channels[c].values) {
      v = (v - stats[c].mean) / stats[c].stddev;
    }
  }
  return out;
}

}  // namespace

void Dataset::validate() const {
  inputs.validate();
  outputs.validate();
  if (inputs.sample_rate != outputs.sample_rate) {
    throw ShapeError("input and output sample rates differ");
  }
  if (inputs.length() != outputs.length()) {
    throw ShapeError("input and output lengths differ");
  }
}

void SampleSet::validate() const {
  if (items.empty()) throw EmptyInput("sample set has no trajectories");
  const Transform t = items.front().transform;
  const std::size_t din = items.front().inputs.channels.size();
  const std::size_t dout = items.front().outputs.channels.size();
  for (const auto& d : items) {
    d.validate();
    if (d.transform != t) {
      throw ShapeError("mixed transforms inside one sample set");
    }
    if (d.inputs.channels.size() != din || d.outputs.channels.size() != dout) {
      throw ShapeError("trajectories disagree on channel counts");
    }
  }
}

Dataset select_direction(const MultiSeries& telemetry, Direction direction) {
  telemetry.validate();
  Dataset d;
  if (direction == Direction::PQtoVPhi) {
    d.inputs = telemetry.select({"P", "Q"});
    d.outputs = telemetry.select({"V", "phi"});
  } else {
    d.inputs = telemetry.select({"V", "phi"});
    d.outputs = telemetry.select({"P", "Q"});
  }
  d.transform = Transform::Raw;
  d.validate();
  return d;
}

std::pair<MultiSeries, std::vector<double>> difference(const MultiSeries& s) {
  s.validate();
  if (s.length() < 2) throw TooShort("need at least two samples to difference");
  MultiSeries out;
  out.sample_rate = s.sample_rate;
  std::vector<double> anchors;
  anchors.reserve(s.channels.size());
  for (const auto& c : s.channels) {
    Channel dc;
    dc.label = c.label;
    dc.values.resize(c.values.size() - 1);
    for (std::size_t t = 0; t + 1 < c.values.size(); ++t) {
      dc.values[t] = c.values[t + 1] - c.values[t];
    }
    anchors.push_back(c.values.front());
    out.channels.push_back(std::move(dc));
  }
  return {std::move(out), std::move(anchors)};
}

MultiSeries undifference(const MultiSeries& increments,
                         const std::vector<double>& anchors) {
  increments.validate();
  if (anchors.size() != increments.channels.size()) {
    throw ShapeError("anchor count does not match channel count");
  }
  MultiSeries out;
  out.sample_rate = increments.sample_rate;
  for (std::size_t c = 0; c < increments.channels.size(); ++c) {
    Channel lc;
    lc.label = increments.channels[c].label;
    lc.values.resize(increments.channels[c].values.size() + 1);
    lc.values[0] = anchors[c];
    for (std::size_t t = 0; t < increments.channels[c].values.size(); ++t) {
      lc.values[t + 1] = lc.values[t] + increments.channels[c].values[t];
    }
    out.channels.push_back(std::move(lc));
  }
  return out;
}

Dataset difference_dataset(const Dataset& d) {
  d.validate();
  if (d.transform != Transform::Raw) {
    throw InvalidArgument("can only difference raw datasets");
  }
  Dataset out;
  auto [di, ai] = difference(d.inputs);
  auto [do_, ao] = difference(d.outputs);
  out.inputs = std::move(di);
  out.outputs = std::move(do_);
  out.input_anchors = std::move(ai);
  out.output_anchors = std::move(ao);
  out.transform = Transform::FirstDifference;
  out.validate();
  return out;
}

StandardizeStats fit_standardize(const SampleSet& train) {
  train.validate();
  if (train.role != Role::Train) {
    throw InvalidArgument("standardization moments must come from training data");
  }
  // Pool all trajectories per channel.
  StandardizeStats stats;
  const auto& first = train.items.front();
  auto pooled = [&](bool inputs, std::size_t c) {
    Channel pool;
    pool.label = (inputs ? first.inputs : first.outputs).channels[c].label;
    for (const auto& d : train.items) {
      const auto& src = (inputs ? d.inputs : d.outputs).channels[c].values;
      pool.values.insert(pool.values.end(), src.begin(), src.end());
    }
    return pool;
  };
  std::vector<Channel> in_pool, out_pool;
  for (std::size_t c = 0; c < first.inputs.channels.size(); ++c) {
    in_pool.push_back(pooled(true, c));
  }
  for (std::size_t c = 0; c < first.outputs.channels.size(); ++c) {
    out_pool.push_back(pooled(false, c));
  }
  std::vector<const Channel*> in_ptrs, out_ptrs;
  for (const auto& c : in_pool) in_ptrs.push_back(&c);
  for (const auto& c : out_pool) out_ptrs.push_back(&c);
  stats.input = channel_moments(in_ptrs);
  stats.output = channel_moments(out_ptrs);
  return stats;
}

SampleSet apply_standardize(const StandardizeStats& stats, const SampleSet& s) {
  s.validate();
  if (s.items.front().transform != Transform::Raw) {
    throw InvalidArgument("standardization expects raw datasets");
  }
  SampleSet out;
  out.role = s.role;
  out.items.reserve(s.items.size());
  for (const auto& d : s.items) {
    Dataset sd;
    sd.inputs = standardize_series(d.inputs, stats.input);
    sd.outputs = standardize_series(d.outputs, stats.output);
    sd.transform = Transform::Standardized;
    sd.input_stats = stats.input;
    sd.output_stats = stats.output;
    out.items.push_back(std::move(sd));
  }
  out.validate();
  return out;
}

MultiSeries destandardize_outputs(const MultiSeries& outputs,
                                  const std::vector<ChannelStats>& stats) {
  outputs.validate();
  if (stats.size() != outputs.channels.size()) {
    throw ShapeError("stats do not match output channel count");
  }
  MultiSeries out = outputs;
  for (std::size_t c = 0; c < out.channels.size(); ++c) {
    for (double& v : out.channels[c].values) {
      v = v * stats[c].stddev + stats[c].mean;
    }
  }
  return out;
}

void save_csv(const MultiSeries& s, const std::filesystem::path& path) {
  s.validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << 't';
  for (const auto& c : s.channels) out << ',' << c.label;
  out << '\n';
  char buf[32];
  const std::size_t n = s.length();
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / s.sample_rate;
    std::snprintf(buf, sizeof buf, "%.17g", t);
    out << buf;
    for (const auto& c : s.channels) {
      const double v = c.values[k];
      if (!std::isfinite(v)) {
        throw InvalidArgument("refusing to write non-finite value in channel '" +
                              c.label + "'");
      }
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out.good()) throw Error("write failed for '" + path.string() + "'");
}

namespace {

double parse_double_field(const std::string& field, long line_no) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("bad numeric field '" + field + "'", line_no);
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

}  // namespace

MultiSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  long line_no = 0;

  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "t") {
    throw ParseError("header must start with 't' and name channels", line_no);
  }

  MultiSeries s;
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (header[i].empty()) throw ParseError("empty channel label", line_no);
    s.channels.push_back({header[i], {}});
  }

  std::vector<double> times;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("row has " + std::to_string(fields.size()) +
                           " cells, expected " + std::to_string(header.size()),
                       line_no);
    }
    times.push_back(parse_double_field(fields[0], line_no));
    for (std::size_t c = 0; c < s.channels.size(); ++c) {
      s.channels[c].values.push_back(parse_double_field(fields[c + 1], line_no));
    }
  }
  if (times.size() < 2) throw ParseError("need at least two data rows", line_no);

  const double dt = times[1] - times[0];
  if (!(dt > 0.0)) throw ParseError("time column must increase", 2);
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double expected = static_cast<double>(k) * dt;
    if (std::abs(times[k] - expected) > 1e-9 * std::max(1.0, std::abs(expected))) {
      throw ParseError("non-uniform sampling grid", static_cast<long>(k) + 2);
    }
  }
  s.sample_rate = 1.0 / dt;
  s.validate();
  return s;
}

}  // namespace genemu
