#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tripcast/core/tensor.hpp"

namespace tripcast {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

/// One named array as stored in a checkpoint container.
struct StoredArray {
  std::string name;
  Shape shape;
  DType dtype = DType::f32;
  std::vector<double> values;
};

/// Binary container layout (all integers little-endian):
///   "TCKP" | u32 version=1 | u64 count
///   per array: u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank] |
///              raw little-endian f32/f64 values
void write_arrays(const std::filesystem::path& path, const std::vector<StoredArray>& arrays);
std::vector<StoredArray> read_arrays(const std::filesystem::path& path);

/// Ordered key = value text manifest stored next to a container.
using Manifest = std::map<std::string, std::string>;
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

template <typename T>
StoredArray to_stored(const std::string& name, const Tensor<T>& tensor);

}  // namespace tripcast
