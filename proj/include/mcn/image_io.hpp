#pragma once

// Binary PPM (P6) for RGB images in [0, 1] and PGM (P5) for label maps.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "mcn/labels.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

template <typename T>
void write_ppm(const std::filesystem::path& path, const Tensor<T>& image, std::size_t item = 0) {
  const Shape s = image.shape();
  if (s.c != 3) throw ShapeError("write_ppm: need 3 channels, got " + s.str());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << s.w << " " << s.h << "\n255\n";
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(image.at(item, c, y, x)), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
}

// Raw class indices (ignore stays 255).
inline void write_pgm(const std::filesystem::path& path, const LabelMap& labels, std::size_t item = 0) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << labels.w << " " << labels.h << "\n255\n";
  for (std::size_t y = 0; y < labels.h; ++y)
    for (std::size_t x = 0; x < labels.w; ++x)
      out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(labels.at(item, y, x), 0, 255))));
}

namespace detail {

inline std::size_t read_header_int(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return static_cast<std::size_t>(std::stoul(tok));
  }
  throw IoError("truncated PNM header");
}

}  // namespace detail

inline LabelMap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  if (!(in >> magic) || magic != "P5") throw IoError(path.string() + ": not a binary PGM");
  const std::size_t w = detail::read_header_int(in), h = detail::read_header_int(in);
  if (detail::read_header_int(in) != 255) throw IoError(path.string() + ": only maxval 255 supported");
  in.get();
  LabelMap out(1, h, w);
  for (auto& v : out.data) {
    const int c = in.get();
    if (c == EOF) throw IoError(path.string() + ": truncated pixel data");
    v = c;
  }
  return out;
}

inline Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  if (!(in >> magic) || magic != "P6") throw IoError(path.string() + ": not a binary PPM");
  const std::size_t w = detail::read_header_int(in), h = detail::read_header_int(in);
  if (detail::read_header_int(in) != 255) throw IoError(path.string() + ": only maxval 255 supported");
  in.get();
  Tensor<float> out(Shape{1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const int v = in.get();
        if (v == EOF) throw IoError(path.string() + ": truncated pixel data");
        out.at(0, c, y, x) = static_cast<float>(v) / 255.f;
      }
  return out;
}

}  // namespace mcn
