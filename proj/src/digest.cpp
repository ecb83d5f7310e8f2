#include "rhythm/digest.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace rhythm {

Digest256 sha256(const void* data, std::size_t len) {
  Digest256 out{};
  unsigned int out_len = 0;
  if (EVP_Digest(data, len, out.data(), &out_len, EVP_sha256(), nullptr) != 1 ||
      out_len != out.size()) {
    throw std::runtime_error("sha256 computation failed");
  }
  return out;
}

Digest256 sha256(std::string_view text) {
  return sha256(text.data(), text.size());
}

std::string to_hex(const Digest256& digest) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (std::uint8_t b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

std::uint64_t fold_to_u64(const Digest256& digest) {
  std::uint64_t acc = 0;
  for (int w = 0; w < 4; ++w) {
    std::uint64_t word = 0;
    for (int i = 7; i >= 0; --i) {
      word = (word << 8) | digest[w * 8 + i];
    }
    acc ^= word;
  }
  return acc;
}

}  // namespace rhythm
