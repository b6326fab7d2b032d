#ifndef REFBCM_RNG_HPP
#define REFBCM_RNG_HPP

#include <cstdint>
#include <random>

namespace refbcm {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random stream identified by (seed, stream).
///
/// Children obtained with split() depend only on the parent's identity,
/// never on how many numbers the parent has produced, so a replication or
/// chain can be replayed in isolation.
class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    const std::uint64_t a = mix64(seed ^ mix64(stream));
    const std::uint64_t b = mix64(a ^ 0x5851f42d4c957f2dULL);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  Rng split(std::uint64_t tag) const { return Rng(derive_seed(tag), tag); }

  std::uint64_t derive_seed(std::uint64_t tag) const {
    return mix64(mix64(seed_) ^ mix64(stream_ + 0x632be59bd9b4e019ULL) ^ mix64(~tag));
  }

  double normal() { return normal_(engine_); }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    double u = 0.0;
    while (u == 0.0) u = uniform_(engine_);
    return u;
  }

  double gamma(double shape) {
    std::gamma_distribution<double> g(shape, 1.0);
    return g(engine_);
  }

  engine_type& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace refbcm

#endif  // REFBCM_RNG_HPP
