#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mcseg {

// Interleaved 8-bit image, HWC; channels is 1 (grayscale) or 3 (RGB).
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;
};

// Single-channel 16-bit image (stored big-endian on disk per netpbm).
struct ImageU16 {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> data;
};

// Binary PPM (P6, maxval 255). channels must be 3.
void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);

// Binary PGM (P5). 8-bit variant uses maxval 255, 16-bit maxval 65535.
void write_pgm8(const std::string& path, const ImageU8& img);
ImageU8 read_pgm8(const std::string& path);
void write_pgm16(const std::string& path, const ImageU16& img);
ImageU16 read_pgm16(const std::string& path);

}  // namespace mcseg
