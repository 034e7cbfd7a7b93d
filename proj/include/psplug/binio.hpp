#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>

#include "psplug/errors.hpp"

namespace psplug {

// Little-endian scalar append/read over a byte buffer. All on-disk artifacts
// (profile cache, checkpoints) go through these so the format is
// host-endianness independent.

namespace detail {
template <typename T>
inline void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}
}  // namespace detail

inline void put_u16(std::string& out, std::uint16_t v) { detail::put_le(out, v); }
inline void put_u32(std::string& out, std::uint32_t v) { detail::put_le(out, v); }
inline void put_f32(std::string& out, float v) { detail::put_le(out, v); }
inline void put_f64(std::string& out, double v) { detail::put_le(out, v); }

inline void put_string(std::string& out, std::string_view s) {
  put_u32(out, std::uint32_t(s.size()));
  out.append(s.data(), s.size());
}

// Sequential reader that throws a cache-integrity error on truncation; the
// caller names the artifact for the message.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what)
      : data_(data), what_(std::move(what)) {}

  size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  std::string_view take(size_t n) {
    if (remaining() < n) {
      throw CacheIntegrityError(what_ + ": truncated (wanted " + std::to_string(n) +
                                " bytes, " + std::to_string(remaining()) + " left)");
    }
    std::string_view v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  template <typename T>
  T get_le() {
    std::string_view raw = take(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, raw.data(), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::uint16_t get_u16() { return get_le<std::uint16_t>(); }
  std::uint32_t get_u32() { return get_le<std::uint32_t>(); }
  float get_f32() { return get_le<float>(); }
  double get_f64() { return get_le<double>(); }

  std::string get_string(size_t max_len = 1 << 20) {
    std::uint32_t n = get_u32();
    if (n > max_len) throw CacheIntegrityError(what_ + ": unreasonable string length");
    return std::string(take(n));
  }

 private:
  std::string_view data_;
  std::string what_;
  size_t pos_ = 0;
};

inline std::optional<std::string> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// Write-temp-then-rename so concurrent readers never observe a partial file.
inline void atomic_write_file(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace psplug
