// Copyright 2026 The dpblo Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace dpblo {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stable seed for (run seed, sweep cell, trial). Independent of worker count.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t cell,
                                    std::uint64_t trial) {
  return mix64(mix64(mix64(seed) ^ (cell * 0xd1b54a32d192ed03ULL)) ^
               (trial * 0x8cb92ba72f3d8dd7ULL));
}

// Counter-based generator: output i is mix64(key + i * golden). Streams are
// split off by hashing, so no state is shared between consumers.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed) : key_(mix64(seed)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  CounterRng split(std::uint64_t stream) const {
    return CounterRng(key_ ^ mix64(stream + 0x632be59bd9b4e019ULL));
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(*this); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(*this); }
  std::uint64_t below(std::uint64_t bound) {
    return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(*this);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace dpblo
