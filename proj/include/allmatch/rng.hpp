#pragma once

#include <cstdint>
#include <random>

namespace allmatch {

// Counter-based seeding: every random draw in the project comes from a
// mt19937_64 whose seed is derived from (run seed, stream tag, counter).
// State never has to be serialized; replaying an iteration number replays
// its randomness.
enum class RngStream : std::uint64_t {
  kModelInit = 1,
  kDataset = 2,
  kLabeledSampling = 3,
  kLabeledAugment = 4,
  kUnlabeledShuffle = 5,
  kWeakAugment = 6,
  kStrongAugment = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, RngStream stream,
                              std::uint64_t counter = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^
                               static_cast<std::uint64_t>(stream)) ^
                    counter);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream,
                                std::uint64_t counter = 0) {
  return std::mt19937_64(mix_seed(seed, stream, counter));
}

}  // namespace allmatch
