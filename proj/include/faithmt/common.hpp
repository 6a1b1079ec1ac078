#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace faithmt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Domain errors map to CLI exit code 1, usage/IO errors to exit code 2.
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : DomainError {
  using DomainError::DomainError;
};
struct ShapeError : DomainError {
  using DomainError::DomainError;
};
struct LengthError : DomainError {
  using DomainError::DomainError;
};
struct NumericError : DomainError {
  using DomainError::DomainError;
};
struct CausalityError : DomainError {
  using DomainError::DomainError;
};
struct DegenerateOutputError : DomainError {
  using DomainError::DomainError;
};
struct EmptyLossError : DomainError {
  using DomainError::DomainError;
};
struct EmptyCurveError : DomainError {
  using DomainError::DomainError;
};
struct EmptyInputError : DomainError {
  using DomainError::DomainError;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64; used to derive independent seed streams.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. mt19937_64 output is fixed by the standard and the
// uniform mapping below avoids distribution objects, so identical seeds give
// identical streams on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 bits of randomness.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n) without modulo bias.
  int uniform_int(int n) {
    const uint64_t bound = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<int>(x % bound);
  }

  bool bernoulli(double p) { return uniform() < p; }

  Rng fork(uint64_t stream) { return Rng(mix_seed(engine_(), stream)); }

 private:
  std::mt19937_64 engine_;
};

// Half-open token index range [begin, end).
struct IndexRange {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(int i) const { return i >= begin && i < end; }
};

inline int argmax_lowest_id(const Vector& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace faithmt
