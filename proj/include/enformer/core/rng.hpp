#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace enformer {

// Deterministic RNG with serializable state. Box-Muller for normals so the
// stream is identical across standard libraries (std::normal_distribution is
// implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw std::invalid_argument("rng: uniform_int needs n > 0");
    uint64_t span = static_cast<uint64_t>(n);
    uint64_t lim = UINT64_MAX - UINT64_MAX % span;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= lim);
    return static_cast<int64_t>(v % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // resample until |z| <= 2, then scale: matches the usual trunc_normal init
  double truncated_normal(double mean, double stddev) {
    double z;
    do {
      z = normal();
    } while (z < -2.0 || z > 2.0);
    return mean + stddev * z;
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (decltype(n) i = n - 1; i > 0; --i) {
      auto j = uniform_int(static_cast<int64_t>(i) + 1);
      std::swap(first[i], first[j]);
    }
  }

  // derive an independent stream for (epoch, index) style sub-tasks
  static uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0) {
    uint64_t h = base ^ 0x9e3779b97f4a7c15ull;
    auto mix = [&h](uint64_t v) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      h *= 0xff51afd7ed558ccdull;
      h ^= h >> 33;
    };
    mix(a);
    mix(b);
    return h;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_ << " " << (have_spare_ ? 1 : 0) << " ";
    os.precision(17);
    os << spare_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    is >> eng_ >> spare_flag >> spare_;
    if (is.fail()) throw std::runtime_error("rng: bad serialized state");
    have_spare_ = spare_flag != 0;
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace enformer
