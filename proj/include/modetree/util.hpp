#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace modetree {

using Vector = std::vector<double>;

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// Cosine similarity. Returns -infinity when either vector is all zeros so
// that zero vectors never win an argmax.
double cosine(std::span<const double> a, std::span<const double> b);

// Portable seeded generator. The standard distributions are
// implementation-defined, so all draws are derived from raw 64-bit words.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (one value per call).
  double normal();
  // Uniform point on the unit sphere in R^dim.
  Vector unit_vector(std::size_t dim);

 private:
  std::mt19937_64 engine_;
};

// Runs fn(i) for i in [0, count) over up to `threads` workers with a static
// partition. Results must be written to per-index slots by the caller. The
// first exception thrown by any worker is rethrown after all workers join.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn);

// 17 significant digits; parses back to the identical double.
std::string format_real(double value);

}  // namespace modetree
