#include "gradpath/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

namespace gradpath {

namespace {

// Reads the next header integer, skipping whitespace and '#' comments.
std::size_t header_int(const std::vector<unsigned char>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  std::size_t v = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
  if (pos == start) throw FormatError("PGM header: expected an integer", start);
  return v;
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw FormatError(path.string() + ": not a binary PGM (P5)", 0);
  }
  std::size_t pos = 2;
  const std::size_t w = header_int(bytes, pos);
  const std::size_t h = header_int(bytes, pos);
  const std::size_t maxval_at = pos;
  const std::size_t maxval = header_int(bytes, pos);
  if (w == 0 || h == 0) throw FormatError(path.string() + ": zero image dimension", 2);
  if (maxval == 0 || maxval > 255) {
    throw FormatError(path.string() + ": only 8-bit PGM is supported", maxval_at);
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError(path.string() + ": missing whitespace after header", pos);
  }
  ++pos;
  if (bytes.size() - pos < w * h) {
    throw FormatError(path.string() + ": truncated pixel data", bytes.size());
  }
  std::vector<float> pixels(w * h);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<float>(bytes[pos + i]) / static_cast<float>(maxval);
  }
  return Tensor(Shape{1, 1, h, w}, std::move(pixels));
}

PgmRange write_pgm_rescaled(const Tensor& image, const std::filesystem::path& path) {
  const auto& d = image.shape().dims();
  const std::size_t h = d[d.size() - 2], w = d[d.size() - 1];
  if (image.rank() < 2 || image.size() != h * w) {
    throw DimensionError("write_pgm_rescaled needs a single-channel image, got " +
                         image.shape().to_string());
  }
  const auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
  const PgmRange range{*lo, *hi};
  const double span = static_cast<double>(range.max) - range.min;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (float v : image.data()) {
    const double scaled = span > 0.0 ? (v - range.min) / span * 255.0 : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
  }
  if (!out) throw DataError("failed writing " + path.string());
  return range;
}

}  // namespace gradpath
