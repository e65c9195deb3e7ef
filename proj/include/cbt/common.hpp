#ifndef CBT_COMMON_HPP
#define CBT_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbt {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

template <class... A>
std::string cat(A&&... a) {
  std::ostringstream o;
  (o << ... << a);
  return o.str();
}

#define CBT_REQUIRE(cond, ...)                       \
  do {                                               \
    if (!(cond)) throw ::cbt::Error(::cbt::cat(__VA_ARGS__)); \
  } while (0)

// Seeded RNG with implementation-independent distributions, so the same seed
// yields the same parameters and data order on every platform.
class RandomSource {
 public:
  explicit RandomSource(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double canonical() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * canonical(); }

  // uniform integer in [lo, hi] inclusive
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(eng_() % span);
  }

  // Box-Muller, deterministic pair caching
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = canonical();
    double u2 = canonical();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Sum that is independent of thread count: fixed-size chunks are summed
// serially and the partials combined in index order.
template <typename T>
double deterministic_sum(const T* data, int64_t n) {
  constexpr int64_t kChunk = 4096;
  double total = 0.0;
  for (int64_t base = 0; base < n; base += kChunk) {
    int64_t end = std::min(base + kChunk, n);
    double part = 0.0;
    for (int64_t i = base; i < end; ++i) part += static_cast<double>(data[i]);
    total += part;
  }
  return total;
}

template <typename T>
bool all_finite(const T* data, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(data[i]))) return false;
  return true;
}

}  // namespace cbt

#endif
