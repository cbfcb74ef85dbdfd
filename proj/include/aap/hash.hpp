#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace aap {

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string s(static_cast<std::size_t>(len) * 2, '0');
  for (unsigned int i = 0; i < len; ++i) {
    s[2 * i] = hex[out[i] >> 4];
    s[2 * i + 1] = hex[out[i] & 0xf];
  }
  return s;
}

inline std::string short_digest(std::string_view data, std::size_t chars = 12) {
  return sha256_hex(data).substr(0, chars);
}

// First 8 bytes of the digest as an integer; used to fold content into seeds.
inline std::uint64_t digest_to_seed(std::string_view data) {
  const std::string h = sha256_hex(data);
  std::uint64_t v = 0;
  for (int i = 0; i < 16; ++i) {
    char c = h[static_cast<std::size_t>(i)];
    v = (v << 4) | static_cast<std::uint64_t>(c <= '9' ? c - '0' : c - 'a' + 10);
  }
  return v;
}

}  // namespace aap
