#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "teaf/tensor.hpp"

namespace teaf {

/* Deterministic random source. mt19937_64 produces a bit-exact stream for a
 * given seed on every platform; uniform and normal draws below avoid the
 * standard library distributions, whose output is implementation-defined.
 * Normal deviates come from the Box-Muller transform. */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  static const char* algorithm() { return "mt19937_64+box-muller"; }

  std::uint64_t next_u64() { return gen_(); }

  /* uniform in [0, 1) with 53 bits of entropy */
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /* integer in [lo, hi] inclusive */
  int uniform_int(int lo, int hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Tensor normal_tensor(std::vector<int> shape, double mean = 0.0, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = normal(mean, stddev);
    return t;
  }

  Tensor uniform_tensor(std::vector<int> shape, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace teaf
