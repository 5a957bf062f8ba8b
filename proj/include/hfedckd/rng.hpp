// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace hfedckd {

// Every random draw in the artifact flows through a generator seeded by
// derive_seed(master, tag, a, b). Sub-streams are therefore independent of
// scheduling: a client update gets the same stream no matter which worker
// thread runs it.

enum class SeedTag : std::uint64_t {
  GlobalInit = 1,
  ClientInit = 2,
  GeneratorInit = 3,
  SpecAssign = 4,
  Partition = 5,
  Synthetic = 6,
  ClientSampling = 7,
  PseudoLabels = 8,
  PseudoNoise = 9,
  LocalUpdate = 10,
  GeneratorStep = 11,
  MissingFill = 12,
  FeatureDump = 13,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, SeedTag tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t s = master;
  std::uint64_t h = splitmix64(s);
  s ^= static_cast<std::uint64_t>(tag) + 0x632be59bd9b4e019ULL;
  h ^= splitmix64(s);
  s ^= a + 0x9e3779b97f4a7c15ULL;
  h ^= splitmix64(s);
  s ^= b + 0xd1b54a32d192ed03ULL;
  h ^= splitmix64(s);
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, SeedTag tag, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
  return Rng(derive_seed(master, tag, a, b));
}

}  // namespace hfedckd
