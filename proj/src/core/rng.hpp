#pragma once

#include <cstdint>
#include <vector>

namespace mstage {

// Seeded counter-style generator (splitmix64). Integer and uniform draws are
// bit-exact across platforms; normal draws go through an inverse-CDF
// approximation so they only touch sqrt/log.
class RngStream {
public:
  explicit RngStream(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();

  // [0, 1), 53-bit resolution
  double uniform();
  double uniform(double lo, double hi);

  // standard normal
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // unbiased integer in [0, n)
  uint64_t below(uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  // independent child stream; same (seed, salt) always gives the same child
  RngStream split(uint64_t salt) const;

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  uint64_t state_;
};

}  // namespace mstage
