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

#include <array>
#include <cstdint>

#include "skillzip/tensor.hpp"

namespace skillzip {

// xoshiro256** with its four state words filled by successive splitmix64
// outputs of the seed. Pure integer arithmetic, so the u64 stream is the same
// on every platform. Derived floating-point draws use only IEEE basic
// operations except gaussian(), which also calls std::log/sqrt/cos.
class Prng {
 public:
  explicit Prng(std::uint64_t seed);

  std::uint64_t next_u64();
  // 53 random bits mapped to [0, 1).
  double uniform01();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; consumes two uniforms per call.
  double gaussian();

  // Independent generator derived from this one's next output.
  Prng fork() { return Prng(next_u64()); }

 private:
  std::array<std::uint64_t, 4> s_;
};

std::uint64_t splitmix64(std::uint64_t& state);

DenseMatrix random_uniform(Prng& rng, std::size_t rows, std::size_t cols, float lo, float hi);
DenseMatrix random_gaussian(Prng& rng, std::size_t rows, std::size_t cols, float stddev = 1.0f);

}  // namespace skillzip
