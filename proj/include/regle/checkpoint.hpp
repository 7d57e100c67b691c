#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "regle/adam.hpp"
#include "regle/errors.hpp"
#include "regle/tensor.hpp"

// Binary tensor container:
//   "RGL1" | u32 count | count x { u32 rank | rank x u32 extent |
//                                  f32 data (little-endian) | u32 name_len | name bytes }

namespace regle {

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("checkpoint truncated");
  return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
}

}  // namespace detail

inline void write_tensors(std::ostream& os, const std::vector<NamedTensor<float>>& tensors) {
  os.write("RGL1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
    for (float f : t.value.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(f));
    detail::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
  }
  if (!os) throw IoError("failed writing checkpoint");
}

inline std::vector<NamedTensor<float>> read_tensors(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RGL1", 4) != 0) throw IoError("bad checkpoint magic");
  const std::uint32_t count = detail::get_u32(is);
  std::vector<NamedTensor<float>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rank = detail::get_u32(is);
    Shape shape(rank);
    for (auto& e : shape) e = detail::get_u32(is);
    std::vector<float> data(shape_size(shape));
    for (float& f : data) f = std::bit_cast<float>(detail::get_u32(is));
    const std::uint32_t len = detail::get_u32(is);
    std::string name(len, '\0');
    if (len && !is.read(name.data(), len)) throw IoError("checkpoint truncated in tensor name");
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  return out;
}

inline void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor<float>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensors(os, tensors);
}

inline std::vector<NamedTensor<float>> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensors(is);
}

}  // namespace regle
