#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xsim/binary_io.hpp"
#include "xsim/core.hpp"

namespace xsim::cli {

/// 8-bit RGB PNG, encoded in memory and written atomically.
inline void write_png_rgb(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                          const std::vector<std::uint8_t>& rgb) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = width;
  img.height = height;
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, rgb.data(), 0, nullptr))
    throw Error(ErrorKind::Io, "png", std::string("png encoding failed: ") + img.message);
  std::vector<unsigned char> bytes(size);
  if (!png_image_write_to_memory(&img, bytes.data(), &size, 0, rgb.data(), 0, nullptr))
    throw Error(ErrorKind::Io, "png", std::string("png encoding failed: ") + img.message);
  bytes.resize(size);
  io::write_file(path, bytes);
}

}  // namespace xsim::cli
