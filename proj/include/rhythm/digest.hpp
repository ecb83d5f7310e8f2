#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace rhythm {

using Digest256 = std::array<std::uint8_t, 32>;

Digest256 sha256(const void* data, std::size_t len);
Digest256 sha256(std::string_view text);

std::string to_hex(const Digest256& digest);

// XOR-fold of the four little-endian 64-bit words; used to key stub RNG streams.
std::uint64_t fold_to_u64(const Digest256& digest);

}  // namespace rhythm
