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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "skillzip/prng.hpp"
#include "skillzip/tensor.hpp"

namespace skillzip {

// Running per-input-channel |x| statistics for one layer. Accumulators are
// f64 so splitting the token stream into batches changes results by at most
// rounding in the last place of the f64 sum.
class ChannelStats {
 public:
  explicit ChannelStats(std::size_t channels);

  // Folds every row of x into the statistics. Throws ShapeError on a
  // column-count mismatch.
  void accumulate(const DenseMatrix& x);
  // Monoid merge of two partial profiles over the same channel count.
  void merge(const ChannelStats& other);

  std::size_t channels() const { return sum_abs_.size(); }
  std::uint64_t token_count() const { return tokens_; }
  std::vector<double> mean_abs() const;
  const std::vector<double>& max_abs() const { return max_abs_; }

  // Rebuilds stats from stored means (used when loading a serialized profile).
  static ChannelStats from_summary(std::span<const double> mean_abs, std::span<const double> max_abs,
                                   std::uint64_t tokens);

 private:
  std::vector<double> sum_abs_;
  std::vector<double> max_abs_;
  std::uint64_t tokens_ = 0;
};

// layer name -> statistics.
using CalibProfile = std::map<std::string, ChannelStats>;

// Profiles one layer from a list of activation batches.
ChannelStats profile(std::span<const DenseMatrix> activations);

// Writes `<stem>.ftz` with `<layer>/mean_abs` and `<layer>/max_abs` (1 x C)
// entries and `<stem>.json` holding token counts.
void write_profile(const std::filesystem::path& stem, const CalibProfile& profile);
CalibProfile read_profile(const std::filesystem::path& stem);

struct OutlierSpec {
  std::size_t n_channels = 1;
  double magnitude_ratio = 100.0;
  double base_range = 15.0;

  void validate(std::size_t channels) const;
};

// T x C uniform draws in [-base_range, base_range]; spec.n_channels distinct
// columns chosen by the generator are multiplied by magnitude_ratio.
DenseMatrix synth_activations(std::uint64_t seed, std::size_t tokens, std::size_t channels,
                              const OutlierSpec& spec);
// Columns synth_activations(seed, ...) marks as outliers, ascending.
std::vector<std::size_t> synth_outlier_channels(std::uint64_t seed, std::size_t channels,
                                                const OutlierSpec& spec);

}  // namespace skillzip
