#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace metapi {

// Portable generator: mt19937_64 for raw bits, with distributions computed
// here rather than through <random>'s implementation-defined ones, so the
// same seed gives the same draws with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  // Independent stream keyed by name. Depends only on (seed, name), never on
  // how many draws the parent has made.
  Rng substream(std::string_view name) const { return Rng(derive(seed_, name)); }
  Rng substream(std::uint64_t index) const { return Rng(mix(seed_ ^ mix(index + 0x9e37u))); }

  std::uint64_t bits() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  // Box-Muller; caches the second value.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <class V>
  void shuffle(std::vector<V>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Index drawn according to non-negative weights.
  std::size_t categorical(const std::vector<double>& weights);

  static std::uint64_t mix(std::uint64_t x);
  static std::uint64_t derive(std::uint64_t seed, std::string_view name);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace metapi
