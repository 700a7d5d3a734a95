#pragma once

// "MCNT" flat tensor files:
//   bytes 0..3   'M' 'C' 'N' 'T'
//   byte  4      version (0x01)
//   bytes 5..20  n, c, h, w as uint32 little-endian
//   then n*c*h*w float32 little-endian values

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

inline constexpr std::array<char, 4> kTensorMagic{'M', 'C', 'N', 'T'};
inline constexpr std::uint8_t kTensorVersion = 0x01;

namespace detail {

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode_tensor(const Tensor<float>& t) {
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w})
    if (d > 0xffffffffu) throw IoError("tensor dimension exceeds uint32: " + s.str());
  std::vector<unsigned char> buf;
  buf.reserve(21 + 4 * t.size());
  buf.insert(buf.end(), kTensorMagic.begin(), kTensorMagic.end());
  buf.push_back(kTensorVersion);
  for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(buf, static_cast<std::uint32_t>(d));
  for (float v : t.data()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
  return buf;
}

inline Tensor<float> decode_tensor(const std::vector<unsigned char>& buf) {
  if (buf.size() < 21 || std::memcmp(buf.data(), kTensorMagic.data(), 4) != 0)
    throw IoError("not an MCNT tensor (bad magic)");
  if (buf[4] != kTensorVersion)
    throw IoError("unsupported MCNT version " + std::to_string(static_cast<int>(buf[4])));
  const unsigned char* p = buf.data() + 5;
  Shape s{detail::get_u32(p), detail::get_u32(p + 4), detail::get_u32(p + 8), detail::get_u32(p + 12)};
  if (buf.size() != 21 + 4 * s.size())
    throw IoError("MCNT payload length " + std::to_string(buf.size() - 21) + " does not match shape " +
                  s.str());
  std::vector<float> data(s.size());
  p = buf.data() + 21;
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(detail::get_u32(p + 4 * i));
  return Tensor<float>(s, std::move(data));
}

inline void write_tensor(std::ostream& os, const Tensor<float>& t) {
  const auto buf = encode_tensor(t);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("failed writing tensor");
}

inline Tensor<float> read_tensor(std::istream& is) {
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor(buf);
}

inline void save_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

inline Tensor<float> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace mcn
