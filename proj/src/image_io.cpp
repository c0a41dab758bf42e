#include "dcae/image_io.hpp"

#include <cstdio>
#include <string>

namespace dcae {

namespace {

struct ByteReader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  int peek() const { return pos < bytes.size() ? bytes[pos] : -1; }
  int next() { return pos < bytes.size() ? bytes[pos++] : -1; }

  static bool is_space(int c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

  // Skips whitespace and '#' comment lines.
  void skip_separators() {
    for (;;) {
      while (is_space(peek())) next();
      if (peek() == '#') {
        while (peek() != '\n' && peek() != -1) next();
      } else {
        return;
      }
    }
  }

  int read_int() {
    skip_separators();
    if (peek() < '0' || peek() > '9') throw FormatError("ppm: expected an integer");
    long v = 0;
    while (peek() >= '0' && peek() <= '9') {
      v = v * 10 + (next() - '0');
      if (v > 1 << 24) throw FormatError("ppm: integer out of range");
    }
    return static_cast<int>(v);
  }
};

}  // namespace

PixmapImage read_ppm(const std::vector<uint8_t>& bytes) {
  ByteReader r{bytes};
  if (r.next() != 'P') throw FormatError("ppm: bad magic");
  const int kind = r.next();
  if (kind == '3') throw FormatError("ppm: plain-text P3 is not supported, use binary P6");
  if (kind != '6') throw FormatError("ppm: bad magic");
  PixmapImage img;
  img.width = r.read_int();
  img.height = r.read_int();
  const int maxval = r.read_int();
  if (img.width < 1 || img.height < 1) throw FormatError("ppm: non-positive dimensions");
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
  // exactly one whitespace byte separates the header from the payload
  if (!ByteReader::is_space(r.next())) throw FormatError("ppm: missing header terminator");
  const size_t need = size_t(img.width) * img.height * 3;
  if (bytes.size() - r.pos < need) throw FormatError("ppm: truncated pixel data");
  if (bytes.size() - r.pos > need) throw FormatError("ppm: trailing bytes after pixel data");
  img.pixels.assign(bytes.begin() + r.pos, bytes.end());
  return img;
}

std::vector<uint8_t> write_ppm(const PixmapImage& image) {
  if (image.width < 1 || image.height < 1) throw FormatError("ppm: non-positive dimensions");
  if (image.pixels.size() != size_t(image.width) * image.height * 3)
    throw FormatError("ppm: pixel buffer does not match dimensions");
  std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

std::vector<uint8_t> write_pgm(int width, int height, const std::vector<uint8_t>& gray) {
  if (gray.size() != size_t(width) * height) throw FormatError("pgm: buffer does not match dims");
  std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), gray.begin(), gray.end());
  return out;
}

std::vector<uint8_t> read_file(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError("cannot open file: " + path);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> bytes(size_t(size < 0 ? 0 : size));
  if (!bytes.empty() && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    throw FormatError("cannot read file: " + path);
  }
  std::fclose(f);
  return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot open file for writing: " + path);
  if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    throw FormatError("cannot write file: " + path);
  }
  std::fclose(f);
}

}  // namespace dcae
