#include "bcr/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "bcr/errors.hpp"

namespace bcr::io {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = header_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError("malformed PPM header in " + path.string());
  }
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); }

}  // namespace

ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open image " + path.string());
  if (header_token(in) != "P6") throw ParseError(path.string() + " is not a binary PPM (P6)");
  const int width = header_int(in, path);
  const int height = header_int(in, path);
  const int maxval = header_int(in, path);
  if (width <= 0 || height <= 0 || maxval != 255) {
    throw ParseError(path.string() + ": only 8-bit PPM images with positive dimensions are supported");
  }
  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  std::vector<unsigned char> raw(pixels * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw ParseError(path.string() + ": truncated pixel data");
  std::vector<double> chw(raw.size());
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < 3; ++c) chw[c * pixels + p] = raw[p * 3 + c] / 255.0;
  }
  return ImageTensor(height, width, std::move(chw));
}

void write_ppm(const ImageTensor& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write image " + path.string());
  out << "P6\n" << image.width() << " " << image.height() << "\n255\n";
  const std::size_t pixels = image.pixel_count();
  std::vector<unsigned char> raw(pixels * 3);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < 3; ++c) raw[p * 3 + c] = to_byte(image.data()[c * pixels + p]);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IOError("failed writing image " + path.string());
}

ImageTensor quantize_8bit(const ImageTensor& image) {
  std::vector<double> q(image.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = to_byte(image.data()[i]) / 255.0;
  return ImageTensor(image.height(), image.width(), std::move(q));
}

}  // namespace bcr::io
