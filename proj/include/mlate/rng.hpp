#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace mlate {

// Self-contained xoshiro256++ stream with splitmix64 seeding.  All random
// draws in the project go through this class so that results do not depend
// on standard-library distribution internals.  Streams for parallel work are
// derived from a master seed plus an integer path (e.g. {cell, replicate}),
// which makes output invariant to thread scheduling and worker count.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  // Derives a child stream keyed by (master seed, path).  The same path
  // always yields the same stream, different paths yield streams seeded by
  // avalanching mixes of the path elements.
  static RngStream derive(std::uint64_t master,
                          std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64();

  double uniform();      // [0, 1)
  double uniform_pos();  // (0, 1)
  double normal();       // standard normal via Box-Muller, second value cached
  bool bernoulli(double p);

 private:
  std::array<std::uint64_t, 4> state_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

// boost-style hash combine built on splitmix64; used for stream derivation.
std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v);

// Child seed keyed by (master, path); RngStream::derive(master, path) is
// exactly RngStream(derive_seed(master, path)).
std::uint64_t derive_seed(std::uint64_t master,
                          std::initializer_list<std::uint64_t> path);

}  // namespace mlate
