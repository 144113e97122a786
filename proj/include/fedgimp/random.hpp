#pragma once

#include <cstdint>

namespace fedgimp {

// Independent 64-bit seed for a numbered sub-stream of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fedgimp
