#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "cptrl/errors.hpp"

namespace cptrl {

// SplitMix64 finalizer, used to scramble seeds and to derive independent
// sub-stream seeds from (seed, iteration, trajectory-index) style tuples.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x853c49e6748fea9bULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

// Deterministic random stream. All sampling goes through explicit draws with a
// fixed draw order (no cached pairs, no library distribution objects), so a
// given seed reproduces byte-identical results on any platform/thread layout.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  // Independent stream for a tuple such as {seed, iteration, trajectory}.
  static Rng stream(std::initializer_list<std::uint64_t> parts) {
    return Rng(mix_seed(parts));
  }

  std::uint64_t bits() { return gen_(); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // +1 or -1 with equal probability.
  int rademacher() { return (gen_() & 1ULL) ? 1 : -1; }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(gen_()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  // Index drawn from a (not necessarily normalized) non-negative weight
  // vector. Falls back to the last positive-weight index on rounding spill.
  int categorical(const std::vector<double>& probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    if (!(total > 0.0)) throw ArgumentError("categorical: no positive mass");
    double x = uniform() * total;
    double cum = 0.0;
    int last_positive = -1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] > 0.0) {
        cum += probs[i];
        last_positive = static_cast<int>(i);
        if (x < cum) return static_cast<int>(i);
      }
    }
    return last_positive;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace cptrl
