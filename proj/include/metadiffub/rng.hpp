#pragma once

#include <cstdint>

#include "metadiffub/ndarray.hpp"

namespace metadiffub {

/// Counter-based random stream: draw i is a pure function of (seed, i), so a
/// stream is reproducible from its (seed, position) pair on any platform.
/// Not thread-safe; fork a child per task instead of sharing.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t position = 0)
      : seed_(seed), position_(position) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

  std::uint64_t next_u64();
  // Uniform in the open interval (0, 1).
  double uniform();
  double normal();
  bool bernoulli(double p);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Independent child stream; depends only on (seed, tag).
  RngStream fork(std::uint64_t tag) const;

 private:
  std::uint64_t draw(std::uint64_t lane) const;

  std::uint64_t seed_;
  std::uint64_t position_;
};

std::uint64_t mix64(std::uint64_t x);

NDArray sample_gaussian(const Shape& shape, RngStream& rng);

}  // namespace metadiffub
