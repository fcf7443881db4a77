#ifndef U2C_RNG_HPP
#define U2C_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace u2c {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter, slot), so records can be generated in any order
/// or in parallel and still match the sequential output bit for bit.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t bits(std::uint64_t counter, std::uint64_t slot) const {
    std::uint64_t x = mix(seed_ ^ mix(stream_ + 0x9e3779b97f4a7c15ull));
    x = mix(x + counter);
    x = mix(x + slot + 0x2545f4914f6cdd1dull);
    return x;
  }

  /// Uniform in (0, 1); never returns 0 so log() stays finite.
  double uniform(std::uint64_t counter, std::uint64_t slot) const {
    return (static_cast<double>(bits(counter, slot) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; consumes slots (slot, slot+1).
  double normal(std::uint64_t counter, std::uint64_t slot) const {
    const double u1 = uniform(counter, slot);
    const double u2 = uniform(counter, slot + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace u2c

#endif
