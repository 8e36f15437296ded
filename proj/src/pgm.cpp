#include "glaformer/pgm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "glaformer/errors.hpp"

namespace glaformer {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(const std::vector<char>& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])) &&
         buf[pos] != '#') {
    tok.push_back(buf[pos++]);
  }
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::filesystem::path& path) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("PGM " + path.string() + ": bad header field '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

GreyImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  if (next_token(buf, pos) != "P5") {
    throw FormatError("PGM " + path.string() + ": missing P5 magic");
  }
  GreyImage img;
  img.width = parse_dim(next_token(buf, pos), path);
  img.height = parse_dim(next_token(buf, pos), path);
  const std::size_t maxval = parse_dim(next_token(buf, pos), path);
  if (img.width == 0 || img.height == 0) {
    throw FormatError("PGM " + path.string() + ": zero dimension");
  }
  if (maxval == 0 || maxval > 255) {
    throw FormatError("PGM " + path.string() + ": unsupported maxval " + std::to_string(maxval));
  }
  img.maxval = static_cast<unsigned>(maxval);
  // Exactly one whitespace byte separates the header from the payload.
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    throw FormatError("PGM " + path.string() + ": truncated header");
  }
  ++pos;
  const std::size_t expected = img.width * img.height;
  const std::size_t available = buf.size() - pos;
  if (available < expected) {
    throw FormatError("PGM " + path.string() + ": payload has " + std::to_string(available) +
                      " bytes, expected " + std::to_string(expected));
  }
  img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                    buf.begin() + static_cast<std::ptrdiff_t>(pos + expected));
  return img;
}

void write_pgm(const std::filesystem::path& path, const GreyImage& image) {
  if (image.pixels.size() != image.width * image.height) {
    throw DimensionError("PGM payload of " + std::to_string(image.pixels.size()) +
                         " bytes for a " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + " image");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << '\n' << image.maxval << '\n';
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace glaformer
