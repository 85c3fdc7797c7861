#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "slfh/error.hpp"
#include "slfh/grid.hpp"

namespace slfh::io {

// 16-byte header: rows, cols, dtype tag, endianness tag (uint32 each, writer's
// native byte order), followed by float32 samples.
enum class DType : std::uint32_t { real32 = 1, complex64 = 2 };
inline constexpr std::uint32_t kEndianTag = 0x01020304u;

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000FF00u) | ((v << 8) & 0x00FF0000u) | (v << 24);
}

inline void write_header(std::ofstream& out, std::size_t rows, std::size_t cols, DType dtype) {
  const std::uint32_t header[4] = {static_cast<std::uint32_t>(rows),
                                   static_cast<std::uint32_t>(cols),
                                   static_cast<std::uint32_t>(dtype), kEndianTag};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
}

struct Payload {
  std::size_t rows, cols;
  DType dtype;
  std::vector<float> samples;
};

inline Payload read_payload(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open float grid: " + path);
  std::uint32_t header[4];
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header)))
    throw Error("truncated float grid header: " + path);
  const bool swap = header[3] == byteswap32(kEndianTag);
  if (!swap && header[3] != kEndianTag) throw Error("bad endianness tag in " + path);
  if (swap)
    for (auto& h : header) h = byteswap32(h);
  Payload p{header[0], header[1], static_cast<DType>(header[2]), {}};
  if (p.dtype != DType::real32 && p.dtype != DType::complex64)
    throw Error("unknown dtype tag in " + path);
  const std::size_t n = p.rows * p.cols * (p.dtype == DType::complex64 ? 2 : 1);
  p.samples.resize(n);
  if (!in.read(reinterpret_cast<char*>(p.samples.data()),
               static_cast<std::streamsize>(n * sizeof(float))))
    throw Error("truncated float grid payload: " + path);
  if (swap)
    for (auto& s : p.samples) s = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(s)));
  return p;
}

}  // namespace detail

inline void write_float_grid(const std::string& path, const RealGrid& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  detail::write_header(out, g.rows(), g.cols(), DType::real32);
  std::vector<float> samples(g.begin(), g.end());
  out.write(reinterpret_cast<const char*>(samples.data()),
            static_cast<std::streamsize>(samples.size() * sizeof(float)));
}

inline void write_float_grid(const std::string& path, const ComplexGrid& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  detail::write_header(out, g.rows(), g.cols(), DType::complex64);
  std::vector<float> samples;
  samples.reserve(2 * g.size());
  for (const auto& v : g) {
    samples.push_back(static_cast<float>(v.real()));
    samples.push_back(static_cast<float>(v.imag()));
  }
  out.write(reinterpret_cast<const char*>(samples.data()),
            static_cast<std::streamsize>(samples.size() * sizeof(float)));
}

inline RealGrid read_real_grid(const std::string& path) {
  auto p = detail::read_payload(path);
  if (p.dtype != DType::real32) throw Error("expected a real grid in " + path);
  RealGrid g(p.rows, p.cols);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = p.samples[i];
  return g;
}

inline ComplexGrid read_complex_grid(const std::string& path) {
  auto p = detail::read_payload(path);
  if (p.dtype != DType::complex64) throw Error("expected a complex grid in " + path);
  ComplexGrid g(p.rows, p.cols);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = {p.samples[2 * i], p.samples[2 * i + 1]};
  return g;
}

}  // namespace slfh::io
