// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_set>
#include <vector>

#include "genemu/errors.hpp"

namespace genemu {

struct Channel {
  std::string label;
  std::vector<double> values;
};

/// Uniformly sampled multichannel time series. Channels share one clock;
/// every operation that consumes a MultiSeries calls validate() first.
struct MultiSeries {
  double sample_rate = 0.0;  // Hz
  std::vector<Channel> channels;

  std::size_t length() const {
    return channels.empty() ? 0 : channels.front().values.size();
  }

  bool has_channel(const std::string& label) const {
    for (const auto& c : channels) {
      if (c.label == label) return true;
    }
    return false;
  }

  const Channel& channel(const std::string& label) const {
    for (const auto& c : channels) {
      if (c.label == label) return c;
    }
    throw InvalidArgument("no channel named '" + label + "'");
  }

  Channel& channel(const std::string& label) {
    for (auto& c : channels) {
      if (c.label == label) return c;
    }
    throw InvalidArgument("no channel named '" + label + "'");
  }

  const std::vector<double>& values(const std::string& label) const {
    return channel(label).values;
  }

  void validate() const {
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) {
      throw InvalidArgument("sample_rate must be positive and finite");
    }
    if (channels.empty()) {
      throw InvalidArgument("series must have at least one channel");
    }
    std::unordered_set<std::string> seen;
    const std::size_t n = channels.front().values.size();
    for (const auto& c : channels) {
      if (c.label.empty()) {
        throw InvalidArgument("channel labels must be nonempty");
      }
      if (!seen.insert(c.label).second) {
        throw InvalidArgument("duplicate channel label '" + c.label + "'");
      }
      if (c.values.size() != n) {
        throw ShapeError("channel '" + c.label + "' length " +
                         std::to_string(c.values.size()) +
                         " differs from " + std::to_string(n));
      }
    }
  }

  /// Empty series with the given channel labels.
  static MultiSeries with_labels(double rate,
                                 const std::vector<std::string>& labels) {
    MultiSeries s;
    s.sample_rate = rate;
    s.channels.reserve(labels.size());
    for (const auto& l : labels) s.channels.push_back({l, {}});
    return s;
  }

  /// Copy of this series restricted to the given channels, in that order.
  MultiSeries select(const std::vector<std::string>& labels) const {
    MultiSeries out;
    out.sample_rate = sample_rate;
    out.channels.reserve(labels.size());
    for (const auto& l : labels) out.channels.push_back(channel(l));
    return out;
  }
};

}  // namespace genemu
