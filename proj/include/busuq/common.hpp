#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace busuq {

// Rejected input: malformed files, shape mismatches, out-of-range arguments.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite losses, divergence, failed convergence that cannot be recovered.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Independent stream for (seed, index); results do not depend on call order.
inline Rng derived_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InputError(message);
}

}  // namespace busuq
