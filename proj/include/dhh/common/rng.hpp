#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dhh {

using Rng = std::mt19937_64;

// Splits a run seed into independent streams keyed by role ("initial_state",
// "noise", "collocation", ...). Same (seed, role) always gives the same stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view role);

inline Rng make_rng(std::uint64_t seed, std::string_view role) {
  return Rng(derive_seed(seed, role));
}

}  // namespace dhh
