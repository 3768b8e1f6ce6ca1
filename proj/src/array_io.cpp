#include "pc2m/array_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace pc2m {

namespace {

constexpr std::array<char, 4> kMagic{'P', 'C', '2', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat64 = 1;

template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
    throw ArrayFormatError("array file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

std::uint64_t NamedArray::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void write_arrays(const std::filesystem::path& path, std::span<const NamedArray> arrays) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.element_count() != a.data.size())
      throw std::invalid_argument("write_arrays: shape of '" + a.name + "' does not match its data");
    put<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint8_t>(os, kFloat64);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(os, d);
    for (double v : a.data) put<double>(os, v);
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<NamedArray> read_arrays(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw ArrayFormatError(path.string() + ": bad magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw ArrayFormatError(path.string() + ": unsupported version " + std::to_string(version));
  const auto count = get<std::uint32_t>(is);
  std::vector<NamedArray> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    const auto name_len = get<std::uint32_t>(is);
    a.name.resize(name_len);
    if (!is.read(a.name.data(), name_len)) throw ArrayFormatError("array file truncated");
    if (get<std::uint8_t>(is) != kFloat64) throw ArrayFormatError(a.name + ": unsupported dtype");
    const auto ndim = get<std::uint32_t>(is);
    for (std::uint32_t d = 0; d < ndim; ++d) a.shape.push_back(get<std::uint64_t>(is));
    a.data.resize(a.element_count());
    for (auto& v : a.data) v = get<double>(is);
    out.push_back(std::move(a));
  }
  return out;
}

const NamedArray& find_array(std::span<const NamedArray> arrays, const std::string& name) {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw ArrayFormatError("array '" + name + "' not found");
}

}  // namespace pc2m
