#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "xsim/binary_io.hpp"
#include "xsim/core.hpp"

namespace xsim {

/// 16-bit detector image, row-major.
struct SyntheticImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint16_t> pixels;

  std::uint16_t at(std::size_t x, std::size_t y) const {
    return pixels[y * width + x];
  }

  friend bool operator==(const SyntheticImage&, const SyntheticImage&) = default;
};

// XSIM layout: "XSIM" | u8 version=1 | u32 width | u32 height |
// width*height u16, all little-endian, row-major.
inline constexpr std::string_view kImageMagic = "XSIM";
inline constexpr std::uint8_t kImageVersion = 1;

inline std::vector<unsigned char> encode_image(const SyntheticImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw format_error("image pixel count does not match dimensions");
  io::ByteWriter w;
  w.magic(kImageMagic);
  w.u8(kImageVersion);
  w.u32(img.width);
  w.u32(img.height);
  w.raw(img.pixels.data(), img.pixels.size() * sizeof(std::uint16_t));
  return w.bytes();
}

inline SyntheticImage decode_image(std::vector<unsigned char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kImageMagic);
  r.expect_version(kImageVersion);
  SyntheticImage img;
  img.width = r.u32();
  img.height = r.u32();
  const std::uint64_t count = std::uint64_t{img.width} * img.height;
  if (count > std::numeric_limits<std::size_t>::max() / 2)
    throw format_error("dimension overflow at offset 5");
  r.expect_remaining(static_cast<std::size_t>(count) * 2);
  img.pixels.resize(static_cast<std::size_t>(count));
  r.raw(img.pixels.data(), img.pixels.size() * 2);
  return img;
}

inline void write_image(const std::filesystem::path& path,
                        const SyntheticImage& img) {
  io::write_file(path, encode_image(img));
}

inline SyntheticImage read_image(const std::filesystem::path& path) {
  return decode_image(io::read_file(path));
}

}  // namespace xsim
