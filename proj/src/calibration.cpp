// Copyright 2026 The skillzip Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "skillzip/calibration.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skillzip/archive.hpp"
#include "skillzip/bytes.hpp"
#include "skillzip/error.hpp"

namespace skillzip {

ChannelStats::ChannelStats(std::size_t channels) : sum_abs_(channels, 0.0), max_abs_(channels, 0.0) {
  if (channels == 0) throw ValidationError("profile needs at least one channel");
}

void ChannelStats::accumulate(const DenseMatrix& x) {
  if (x.cols() != channels()) {
    throw ShapeError(fmt::format("profile: batch has {} columns, expected {}", x.cols(), channels()));
  }
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto row = x.row(t);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double a = std::fabs(static_cast<double>(row[c]));
      sum_abs_[c] += a;
      max_abs_[c] = std::max(max_abs_[c], a);
    }
  }
  tokens_ += x.rows();
}

void ChannelStats::merge(const ChannelStats& other) {
  if (other.channels() != channels()) throw ShapeError("profile merge: channel count mismatch");
  for (std::size_t c = 0; c < channels(); ++c) {
    sum_abs_[c] += other.sum_abs_[c];
    max_abs_[c] = std::max(max_abs_[c], other.max_abs_[c]);
  }
  tokens_ += other.tokens_;
}

std::vector<double> ChannelStats::mean_abs() const {
  std::vector<double> out(channels(), 0.0);
  if (tokens_ == 0) return out;
  for (std::size_t c = 0; c < channels(); ++c) out[c] = sum_abs_[c] / static_cast<double>(tokens_);
  return out;
}

ChannelStats ChannelStats::from_summary(std::span<const double> mean_abs, std::span<const double> max_abs,
                                        std::uint64_t tokens) {
  if (mean_abs.size() != max_abs.size()) throw ShapeError("profile summary: length mismatch");
  if (tokens == 0) throw ValidationError("profile summary: token_count must be >= 1");
  ChannelStats s(mean_abs.size());
  for (std::size_t c = 0; c < mean_abs.size(); ++c) {
    s.sum_abs_[c] = mean_abs[c] * static_cast<double>(tokens);
    s.max_abs_[c] = max_abs[c];
  }
  s.tokens_ = tokens;
  return s;
}

ChannelStats profile(std::span<const DenseMatrix> activations) {
  if (activations.empty()) throw ValidationError("profile: empty activation list");
  ChannelStats stats(activations.front().cols());
  for (const auto& x : activations) stats.accumulate(x);
  return stats;
}

void write_profile(const std::filesystem::path& stem, const CalibProfile& prof) {
  TensorArchive archive;
  nlohmann::json sidecar = nlohmann::json::object();
  for (const auto& [layer, stats] : prof) {
    const auto mean = stats.mean_abs();
    DenseMatrix mean_m(1, stats.channels());
    DenseMatrix max_m(1, stats.channels());
    for (std::size_t c = 0; c < stats.channels(); ++c) {
      mean_m(0, c) = static_cast<float>(mean[c]);
      max_m(0, c) = static_cast<float>(stats.max_abs()[c]);
    }
    archive.add(layer + "/mean_abs", std::move(mean_m));
    archive.add(layer + "/max_abs", std::move(max_m));
    sidecar[layer]["token_count"] = stats.token_count();
  }
  auto ftz = stem;
  ftz += ".ftz";
  auto json = stem;
  json += ".json";
  archive_write(ftz, archive);
  write_text_atomic(json, sidecar.dump(2) + "\n");
}

CalibProfile read_profile(const std::filesystem::path& stem) {
  auto ftz = stem;
  ftz += ".ftz";
  auto json_path = stem;
  json_path += ".json";
  const TensorArchive archive = archive_read(ftz);
  const auto raw = read_file(json_path);
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", json_path.string(), e.what()));
  }
  CalibProfile out;
  for (auto it = sidecar.begin(); it != sidecar.end(); ++it) {
    const std::string& layer = it.key();
    const auto& mean_m = archive.at(layer + "/mean_abs");
    const auto& max_m = archive.at(layer + "/max_abs");
    std::vector<double> mean(mean_m.values().begin(), mean_m.values().end());
    std::vector<double> mx(max_m.values().begin(), max_m.values().end());
    out.emplace(layer, ChannelStats::from_summary(mean, mx, it.value().at("token_count").get<std::uint64_t>()));
  }
  return out;
}

void OutlierSpec::validate(std::size_t channels) const {
  if (n_channels >= channels) {
    throw ValidationError(fmt::format("outlier channel count {} must be below channel count {}", n_channels, channels));
  }
  if (!(magnitude_ratio >= 1.0) || !std::isfinite(magnitude_ratio)) {
    throw ValidationError(fmt::format("outlier magnitude ratio {} must be >= 1", magnitude_ratio));
  }
  if (!(base_range > 0.0) || !std::isfinite(base_range)) {
    throw ValidationError("outlier base range must be positive");
  }
}

namespace {
// Partial Fisher-Yates over [0, channels) driven by rng.
std::vector<std::size_t> pick_channels(Prng& rng, std::size_t channels, std::size_t n) {
  std::vector<std::size_t> idx(channels);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(channels - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}
}  // namespace

std::vector<std::size_t> synth_outlier_channels(std::uint64_t seed, std::size_t channels, const OutlierSpec& spec) {
  spec.validate(channels);
  Prng rng(seed);
  return pick_channels(rng, channels, spec.n_channels);
}

DenseMatrix synth_activations(std::uint64_t seed, std::size_t tokens, std::size_t channels, const OutlierSpec& spec) {
  spec.validate(channels);
  Prng rng(seed);
  const auto outliers = pick_channels(rng, channels, spec.n_channels);
  const auto range = static_cast<float>(spec.base_range);
  DenseMatrix x = random_uniform(rng, tokens, channels, -range, range);
  const auto ratio = static_cast<float>(spec.magnitude_ratio);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t c : outliers) x(t, c) *= ratio;
  }
  return x;
}

}  // namespace skillzip
