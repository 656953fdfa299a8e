#pragma once

#include <cstdint>
#include <random>

namespace layerlens {

/// SplitMix64 (Steele, Lea & Flood). Used to expand a single user seed into
/// well-separated engine seeds.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Engine seeded from `seed` mixed with a stream tag, so distinct purposes
/// (init, shuffling, task generation) never share a stream.
inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  SplitMix64 mix(seed ^ (stream * 0xd1b54a32d192ed03ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(mix.next()), static_cast<std::uint32_t>(mix.next()),
                    static_cast<std::uint32_t>(mix.next()), static_cast<std::uint32_t>(mix.next())};
  return std::mt19937_64(seq);
}

}  // namespace layerlens
