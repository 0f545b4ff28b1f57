// Counter-based deterministic random streams.
//
// Every random quantity in the degradation pipeline is drawn from a stream
// keyed by (seed, frame_index, effect_id), so per-frame parameters are
// reproducible independent of iteration order.
#pragma once

#include <cmath>
#include <cstdint>

namespace tape {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix_key(uint64_t a, uint64_t b) { return splitmix64(splitmix64(a) ^ b); }

}  // namespace detail

// Stateless-per-draw generator: output i is a pure function of (key, i).
class KeyedRng {
 public:
  explicit KeyedRng(uint64_t key) : key_(key) {}

  KeyedRng(uint64_t seed, uint64_t stream, uint64_t substream = 0)
      : key_(detail::mix_key(detail::mix_key(seed, stream), substream)) {}

  uint64_t next_u64() { return detail::splitmix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // uniform in [0,1)
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  // uniform integer in [lo, hi] inclusive
  int64_t next_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  bool next_bernoulli(double p) { return next_uniform() < p; }

  // Box-Muller; both outputs of a pair are consumed in order
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    double u2 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tape
