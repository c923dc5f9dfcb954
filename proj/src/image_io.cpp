#include "mcseg/image_io.hpp"

#include <cstdio>
#include <fstream>

#include "mcseg/common.hpp"

namespace mcseg {

namespace {

[[noreturn]] void io_fail(const std::string& path, const std::string& what) {
  throw IoError(cat(path, ": ", what));
}

// Skips whitespace and '#' comments, then parses a non-negative integer.
int read_header_int(std::istream& in, const std::string& path) {
  int ch = in.get();
  for (;;) {
    while (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') ch = in.get();
    if (ch == '#') {
      while (ch != '\n' && ch != EOF) ch = in.get();
      continue;
    }
    break;
  }
  if (ch < '0' || ch > '9') io_fail(path, "malformed netpbm header");
  long v = 0;
  while (ch >= '0' && ch <= '9') {
    v = v * 10 + (ch - '0');
    if (v > 1 << 30) io_fail(path, "absurd header value");
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return static_cast<int>(v);
}

void expect_single_whitespace(std::istream& in, const std::string& path) {
  const int ch = in.get();
  if (ch != ' ' && ch != '\t' && ch != '\r' && ch != '\n') {
    io_fail(path, "missing whitespace before raster data");
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail(path, "cannot open for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open for reading");
  return in;
}

void read_magic(std::istream& in, const std::string& path, char expected) {
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != expected) {
    io_fail(path, cat("expected P", expected, " magic"));
  }
}

}  // namespace

void write_ppm(const std::string& path, const ImageU8& img) {
  if (img.channels != 3) throw ContractError("write_ppm: image must have 3 channels");
  if (img.data.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    throw ContractError("write_ppm: data size does not match dimensions");
  }
  auto out = open_out(path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) io_fail(path, "short write");
}

ImageU8 read_ppm(const std::string& path) {
  auto in = open_in(path);
  read_magic(in, path, '6');
  ImageU8 img;
  img.channels = 3;
  img.width = read_header_int(in, path);
  img.height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (maxval != 255) io_fail(path, cat("unsupported PPM maxval ", maxval));
  expect_single_whitespace(in, path);
  img.data.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) {
    io_fail(path, "truncated raster data");
  }
  return img;
}

void write_pgm8(const std::string& path, const ImageU8& img) {
  if (img.channels != 1) throw ContractError("write_pgm8: image must have 1 channel");
  if (img.data.size() != static_cast<std::size_t>(img.height) * img.width) {
    throw ContractError("write_pgm8: data size does not match dimensions");
  }
  auto out = open_out(path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) io_fail(path, "short write");
}

ImageU8 read_pgm8(const std::string& path) {
  auto in = open_in(path);
  read_magic(in, path, '5');
  ImageU8 img;
  img.channels = 1;
  img.width = read_header_int(in, path);
  img.height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (maxval != 255) io_fail(path, cat("expected 8-bit PGM, maxval is ", maxval));
  expect_single_whitespace(in, path);
  img.data.resize(static_cast<std::size_t>(img.height) * img.width);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) {
    io_fail(path, "truncated raster data");
  }
  return img;
}

void write_pgm16(const std::string& path, const ImageU16& img) {
  if (img.data.size() != static_cast<std::size_t>(img.height) * img.width) {
    throw ContractError("write_pgm16: data size does not match dimensions");
  }
  auto out = open_out(path);
  out << "P5\n" << img.width << " " << img.height << "\n65535\n";
  std::vector<std::uint8_t> raw(img.data.size() * 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    raw[2 * i] = static_cast<std::uint8_t>(img.data[i] >> 8);  // big-endian
    raw[2 * i + 1] = static_cast<std::uint8_t>(img.data[i] & 0xff);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) io_fail(path, "short write");
}

ImageU16 read_pgm16(const std::string& path) {
  auto in = open_in(path);
  read_magic(in, path, '5');
  ImageU16 img;
  img.width = read_header_int(in, path);
  img.height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (maxval != 65535) io_fail(path, cat("expected 16-bit PGM, maxval is ", maxval));
  expect_single_whitespace(in, path);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.height) * img.width * 2);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    io_fail(path, "truncated raster data");
  }
  img.data.resize(raw.size() / 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  }
  return img;
}

}  // namespace mcseg
