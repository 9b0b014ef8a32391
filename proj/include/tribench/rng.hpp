#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tribench {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Named sub-streams derived from one master seed. Every component draws
// from its own stream ("sim", "patches", "policy", "stylize", ...) so a
// component can be re-run in isolation with the same numbers.
class SeedStreams {
 public:
  explicit SeedStreams(std::uint64_t master) : master_(master) {}

  std::uint64_t master() const { return master_; }
  std::uint64_t seed(std::string_view name, std::uint64_t index = 0) const;
  Rng stream(std::string_view name, std::uint64_t index = 0) const {
    return Rng(seed(name, index));
  }

 private:
  std::uint64_t master_;
};

}  // namespace tribench
