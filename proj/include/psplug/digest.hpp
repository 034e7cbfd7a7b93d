#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psplug/errors.hpp"

namespace psplug {

using Sha256 = std::array<unsigned char, 32>;

inline Sha256 sha256(std::span<const unsigned char> data) {
  Sha256 out{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, out.data(), &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw NumericError("sha256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  return out;
}

inline Sha256 sha256(const std::vector<unsigned char>& data) {
  return sha256(std::span<const unsigned char>(data.data(), data.size()));
}

inline std::string to_hex(std::span<const unsigned char> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

inline std::string sha256_hex(std::span<const unsigned char> data) {
  Sha256 d = sha256(data);
  return to_hex(std::span<const unsigned char>(d.data(), d.size()));
}

// First 8 bytes of the SHA-256 digest; used as a payload checksum in the
// binary cache/checkpoint containers.
using Checksum8 = std::array<unsigned char, 8>;

inline Checksum8 checksum8(std::span<const unsigned char> data) {
  Sha256 d = sha256(data);
  Checksum8 out{};
  std::memcpy(out.data(), d.data(), 8);
  return out;
}

inline Checksum8 checksum8(std::string_view data) {
  return checksum8(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(data.data()), data.size()));
}

inline std::string sha256_hex(std::string_view data) {
  return sha256_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(data.data()), data.size()));
}

// Incremental accumulator for hashing heterogeneous buffers (e.g. all
// parameter tensors of a model) into one content digest.
class DigestAccumulator {
 public:
  DigestAccumulator() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw NumericError("sha256 init failed");
    }
  }
  ~DigestAccumulator() {
    if (ctx_ != nullptr) EVP_MD_CTX_free(ctx_);
  }
  DigestAccumulator(const DigestAccumulator&) = delete;
  DigestAccumulator& operator=(const DigestAccumulator&) = delete;

  void update(const void* data, std::size_t size) {
    if (EVP_DigestUpdate(ctx_, data, size) != 1) {
      throw NumericError("sha256 update failed");
    }
  }

  void update_doubles(std::span<const double> values) {
    update(values.data(), values.size() * sizeof(double));
  }

  std::string hex() {
    Sha256 out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, out.data(), &len) != 1) {
      throw NumericError("sha256 final failed");
    }
    return to_hex(std::span<const unsigned char>(out.data(), out.size()));
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace psplug
