#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hnt {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

/// Stable sub-seed for (root, stage, task). Every random stream in the
/// toolkit is obtained through this so results do not depend on scheduling.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage,
                          std::uint64_t task = 0);

inline Rng make_rng(std::uint64_t root, std::string_view stage,
                    std::uint64_t task = 0) {
  return Rng(derive_seed(root, stage, task));
}

}  // namespace hnt
