#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "xsim/core.hpp"

namespace xsim::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

/// Appends little-endian values to a byte buffer.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }

  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

/// Bounds-checked little-endian reader. Every failure is a format error that
/// names the byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes)
      : bytes_(std::move(bytes)) {}

  void expect_magic(std::string_view m) {
    if (bytes_.size() < m.size() ||
        std::memcmp(bytes_.data(), m.data(), m.size()) != 0)
      throw format_error("bad magic at offset 0 (expected \"" +
                         std::string(m) + "\")");
    pos_ = m.size();
  }
  void expect_version(std::uint8_t v) {
    const std::size_t at = pos_;
    const auto got = u8();
    if (got != v)
      throw format_error("unsupported version " + std::to_string(got) +
                         " at offset " + std::to_string(at));
  }
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  /// Checks that exactly n more bytes remain.
  void expect_remaining(std::size_t n) const {
    if (remaining() < n)
      throw format_error("truncated payload at offset " +
                         std::to_string(pos_) + ": need " + std::to_string(n) +
                         " bytes, have " + std::to_string(remaining()));
    if (remaining() > n)
      throw format_error("trailing bytes at offset " +
                         std::to_string(pos_ + n));
  }
  void expect_end() const { expect_remaining(0); }
  void expect_at_least(std::size_t n) const {
    if (remaining() < n)
      throw format_error("truncated payload at offset " +
                         std::to_string(pos_) + ": need " + std::to_string(n) +
                         " bytes, have " + std::to_string(remaining()));
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n)
      throw format_error("truncated at offset " + std::to_string(pos_) +
                         ": need " + std::to_string(n) + " bytes");
  }
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }

  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorKind::Io, "io", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a temporary sibling and renames, so a failed write never
/// leaves a partial file at `path`.
inline void write_file(const std::filesystem::path& path,
                       const std::vector<unsigned char>& bytes) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error(ErrorKind::Io, "io", "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorKind::Io, "io", "write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::Io, "io", "cannot rename into " + path.string());
  }
}

}  // namespace xsim::io
