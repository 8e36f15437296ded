#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace glaformer {

/// 8-bit greyscale raster as stored in a binary PGM (P5) file.
struct GreyImage {
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 255;
  std::vector<std::uint8_t> pixels;  // row-major, width*height bytes
};

/// Parses a P5 file with maxval <= 255. Header comments are skipped.
/// Throws FormatError on a malformed header or short payload, IoError when
/// the file cannot be opened.
GreyImage read_pgm(const std::filesystem::path& path);

/// Writes "P5\n<w> <h>\n<maxval>\n" followed by the raw bytes.
void write_pgm(const std::filesystem::path& path, const GreyImage& image);

}  // namespace glaformer
