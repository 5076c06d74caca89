#include "tripcast/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tripcast/core/error.hpp"

namespace tripcast {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ofstream& out, V value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V get(std::ifstream& in, const std::filesystem::path& path) {
  V value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(V))) {
    throw IoError("checkpoint: truncated file " + path.string());
  }
  return value;
}

}  // namespace

void write_arrays(const std::filesystem::path& path, const std::vector<StoredArray>& arrays) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, arrays.size());
  for (const auto& a : arrays) {
    if (numel(a.shape) != a.values.size()) {
      throw ShapeError("checkpoint: array '" + a.name + "' shape " + to_string(a.shape) +
                       " does not match " + std::to_string(a.values.size()) + " values");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    for (double v : a.values) {
      if (a.dtype == DType::f32) {
        put<float>(out, static_cast<float>(v));
      } else {
        put<double>(out, v);
      }
    }
  }
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

std::vector<StoredArray> read_arrays(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("checkpoint: " + path.string() + " is not a checkpoint container");
  }
  if (get<std::uint32_t>(in, path) != kVersion) throw IoError("checkpoint: unsupported version in " + path.string());
  const auto count = get<std::uint64_t>(in, path);
  std::vector<StoredArray> arrays;
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredArray a;
    const auto len = get<std::uint32_t>(in, path);
    a.name.resize(len);
    if (!in.read(a.name.data(), len)) throw IoError("checkpoint: truncated file " + path.string());
    const auto dtype = get<std::uint8_t>(in, path);
    if (dtype > 1) throw IoError("checkpoint: bad dtype for '" + a.name + "'");
    a.dtype = static_cast<DType>(dtype);
    const auto rank = get<std::uint32_t>(in, path);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(get<std::uint64_t>(in, path));
    a.values.resize(numel(a.shape));
    for (auto& v : a.values) {
      v = a.dtype == DType::f32 ? static_cast<double>(get<float>(in, path)) : get<double>(in, path);
    }
    arrays.push_back(std::move(a));
  }
  return arrays;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("manifest: cannot write " + path.string());
  for (const auto& [k, v] : manifest) out << k << " = " << v << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    m[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

template <typename T>
StoredArray to_stored(const std::string& name, const Tensor<T>& tensor) {
  StoredArray a;
  a.name = name;
  a.shape = tensor.shape();
  a.dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
  a.values.assign(tensor.values().begin(), tensor.values().end());
  return a;
}

template StoredArray to_stored(const std::string&, const Tensor<float>&);
template StoredArray to_stored(const std::string&, const Tensor<double>&);

}  // namespace tripcast
