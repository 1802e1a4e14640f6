#pragma once

// Shared primitives: dense row-major matrix, error types and the
// portable seeded random stream used by every stochastic component.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace scorefuse {

// Thrown when an input file or manifest cannot be ingested.
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a dataset or mask violates one of its invariants.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string message, std::vector<std::string> issues)
      : std::runtime_error(std::move(message)), issues_(std::move(issues)) {}

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  std::vector<std::string> issues_;
};

// Thrown when a caller breaks a function precondition (bad anchor, empty
// selection, mismatched shapes).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Thrown for mathematically undefined inputs.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// SplitMix64 finalizer; used to derive independent seed streams from
// (base_seed, index) pairs.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return mix_seed(mix_seed(base) ^ (index + 0x632BE59BD9B4E019ULL));
}

// Seeded SplitMix64 random stream. The distributions are written out here
// because the standard library distributions are not specified bit-for-bit
// across implementations, and reports must reproduce exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed == 0 ? 0x853C49E6748FEA9BULL : seed) {
    // Warm up so nearby seeds diverge immediately.
    for (int i = 0; i < 4; ++i) next();
  }

  std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix_seed(state_);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::size_t below(std::size_t n) {
    if (n == 0) throw ContractError("Rng::below: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return static_cast<std::size_t>(x % bound);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

inline bool all_finite(std::span<const double> xs) noexcept {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace scorefuse
