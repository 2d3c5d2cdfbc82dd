#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "starsr/common.hpp"

namespace starsr {

// Named-array container: text header (format version, config echo,
// iteration) followed by raw little-endian array payloads. Parameter values
// are stored as 32-bit floats so a save/load/save round-trip is
// bit-identical.
struct NamedArray {
  enum class Kind { kF32, kU64, kI64 };
  Kind kind = Kind::kF32;
  std::vector<int> shape;
  std::vector<float> f32;
  std::vector<uint64_t> u64;
  std::vector<int64_t> i64;

  size_t count() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return shape.empty() ? 0 : n;
  }
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  int64_t iteration = 0;
  std::string config_json;  // canonical echo of the running config
  std::map<std::string, NamedArray> arrays;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const NamedArray& require(const std::string& name) const;
};

}  // namespace starsr
