#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pc2m {

/// Named float64 tensor, row-major.
struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  std::uint64_t element_count() const;
};

struct ArrayFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Container layout, all integers little-endian:
///   "PC2M" | u32 version (=1) | u32 array count
///   per array: u32 name length | name bytes | u8 dtype (1 = float64)
///              | u32 ndim | u64 dims[ndim] | float64 payload
void write_arrays(const std::filesystem::path& path, std::span<const NamedArray> arrays);
std::vector<NamedArray> read_arrays(const std::filesystem::path& path);

const NamedArray& find_array(std::span<const NamedArray> arrays, const std::string& name);

}  // namespace pc2m
