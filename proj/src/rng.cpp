#include "metadiffub/rng.hpp"

#include <cmath>
#include <numbers>

namespace metadiffub {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t RngStream::draw(std::uint64_t lane) const {
  return mix64(seed_ ^ mix64(position_ * 2 + lane));
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t v = draw(0);
  ++position_;
  return v;
}

namespace {
double to_open_unit(std::uint64_t bits) {
  // 53 random bits mapped to (0, 1)
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}
}  // namespace

double RngStream::uniform() { return to_open_unit(next_u64()); }

double RngStream::normal() {
  const double u1 = to_open_unit(draw(0));
  const double u2 = to_open_unit(draw(1));
  ++position_;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) return 0;
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
}

RngStream RngStream::fork(std::uint64_t tag) const {
  return RngStream(mix64(seed_ ^ mix64(tag ^ 0x632BE59BD9B4E019ULL)), 0);
}

NDArray sample_gaussian(const Shape& shape, RngStream& rng) {
  NDArray out(shape);
  for (auto& x : out.data()) x = rng.normal();
  return out;
}

}  // namespace metadiffub
