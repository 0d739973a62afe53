#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fednids::binio {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void write(std::ostream& os, T v) {
  const T le = to_little(v);
  os.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

template <typename T>
T read(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of binary stream");
  return to_little(v);
}

inline void write_magic(std::ostream& os, std::string_view magic, std::uint8_t version) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write<std::uint8_t>(os, version);
}

// Returns the version byte after checking the magic.
inline std::uint8_t read_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) throw std::runtime_error("bad magic: expected " + std::string(magic));
  return read<std::uint8_t>(is);
}

}  // namespace fednids::binio
