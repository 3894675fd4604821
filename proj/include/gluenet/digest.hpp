#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "gluenet/error.hpp"

namespace gluenet {

using Sha256 = std::array<std::uint8_t, 32>;

inline Sha256 sha256(std::string_view bytes) {
  Sha256 out{};
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) == 1 &&
              len == out.size(),
          ErrorKind::kContract, "SHA-256 computation failed");
  return out;
}

inline std::string to_hex(const Sha256& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : d) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 0xf]);
  }
  return s;
}

}  // namespace gluenet
