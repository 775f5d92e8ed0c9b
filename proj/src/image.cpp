#include "taxon/image.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include <fmt/core.h>

#include "taxon/error.hpp"
#include "taxon/tensor.hpp"

namespace taxon {

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

namespace {

int read_header_int(std::istream& in, const std::string& name) {
  // Skips whitespace and '#' comments between header fields.
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw FormatError(fmt::format("{}: malformed PPM header", name));
  return v;
}

}  // namespace

RawImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open image '{}'", path.string()));
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw FormatError(fmt::format("{}: not a binary PPM (P6) file", path.string()));
  RawImage img;
  img.width = read_header_int(in, path.string());
  img.height = read_header_int(in, path.string());
  const int maxval = read_header_int(in, path.string());
  if (img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw FormatError(fmt::format("{}: unsupported PPM geometry or maxval", path.string()));
  }
  in.get();  // single whitespace byte before the raster
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw FormatError(fmt::format("{}: truncated PPM raster", path.string()));
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const RawImage& image) {
  if (image.channels != 3) throw FormatError("PPM output requires 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write image '{}'", path.string()));
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

}  // namespace taxon
