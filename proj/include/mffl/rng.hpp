#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <thread>
#include <vector>

namespace mffl {

// splitmix64 finalizer; used to turn (seed, stream, substream) tuples into
// well-separated engine seeds so that results do not depend on scheduling.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return mix64(mix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix64(mix64(a, b), c);
}

// Deterministic per-stream RNG. Each logical stream (client, path, round,
// replicate) gets its own engine keyed by the master seed plus stream ids.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(mix64(seed, stream)) {}
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream)
      : engine_(mix64(seed, stream, substream)) {}

  double gauss() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t bits() { return engine_(); }

  // integer in [0, n)
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  Eigen::VectorXd gauss_vector(Eigen::Index d) {
    Eigen::VectorXd v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = gauss();
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Static-partition parallel loop. Work items must be independent and write
// to disjoint slots; with per-item RNG streams the result is identical for
// any thread count.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mffl
