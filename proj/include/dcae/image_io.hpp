#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "dcae/errors.hpp"

namespace dcae {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct PixmapImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // exactly 3*width*height bytes

  uint8_t& at(int x, int y, int c) { return pixels[(size_t(y) * width + x) * 3 + c]; }
  uint8_t at(int x, int y, int c) const { return pixels[(size_t(y) * width + x) * 3 + c]; }
};

// Binary PPM (P6, maxval 255) with standard whitespace/comment handling.
PixmapImage read_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> write_ppm(const PixmapImage& image);

// Binary PGM (P5, maxval 255) writer for grayscale maps.
std::vector<uint8_t> write_pgm(int width, int height, const std::vector<uint8_t>& gray);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace dcae
