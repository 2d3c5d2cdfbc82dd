#include "starsr/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace starsr {

namespace {

const char* kind_name(NamedArray::Kind k) {
  switch (k) {
    case NamedArray::Kind::kF32: return "f32";
    case NamedArray::Kind::kU64: return "u64";
    case NamedArray::Kind::kI64: return "i64";
  }
  return "f32";
}

NamedArray::Kind kind_from(const std::string& s) {
  if (s == "f32") return NamedArray::Kind::kF32;
  if (s == "u64") return NamedArray::Kind::kU64;
  if (s == "i64") return NamedArray::Kind::kI64;
  throw DataError("checkpoint: unknown dtype '" + s + "'");
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f << "STARSR-CKPT " << kFormatVersion << "\n";
  f << "iteration " << iteration << "\n";
  f << "config " << config_json << "\n";
  f << "arrays " << arrays.size() << "\n";
  for (const auto& [name, arr] : arrays) {
    f << name << " " << kind_name(arr.kind) << " " << arr.shape.size();
    for (int d : arr.shape) f << " " << d;
    f << "\n";
    switch (arr.kind) {
      case NamedArray::Kind::kF32:
        f.write(reinterpret_cast<const char*>(arr.f32.data()),
                static_cast<std::streamsize>(arr.f32.size() * sizeof(float)));
        break;
      case NamedArray::Kind::kU64:
        f.write(reinterpret_cast<const char*>(arr.u64.data()),
                static_cast<std::streamsize>(arr.u64.size() * sizeof(uint64_t)));
        break;
      case NamedArray::Kind::kI64:
        f.write(reinterpret_cast<const char*>(arr.i64.data()),
                static_cast<std::streamsize>(arr.i64.size() * sizeof(int64_t)));
        break;
    }
  }
  if (!f) throw DataError("short write on checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read checkpoint " + path.string());
  Checkpoint ckpt;
  std::string line;

  auto next_line = [&](const char* what) {
    if (!std::getline(f, line))
      throw DataError(std::string("checkpoint truncated at ") + what);
  };

  next_line("magic");
  {
    std::istringstream is(line);
    std::string magic;
    int version = 0;
    is >> magic >> version;
    if (magic != "STARSR-CKPT")
      throw DataError("not a checkpoint file: " + path.string());
    if (version != kFormatVersion)
      throw DataError("unsupported checkpoint format version " +
                      std::to_string(version));
  }
  next_line("iteration");
  {
    std::istringstream is(line);
    std::string key;
    is >> key >> ckpt.iteration;
    if (key != "iteration") throw DataError("checkpoint: expected iteration");
  }
  next_line("config");
  if (line.rfind("config ", 0) != 0)
    throw DataError("checkpoint: expected config echo");
  ckpt.config_json = line.substr(7);

  next_line("array count");
  size_t count = 0;
  {
    std::istringstream is(line);
    std::string key;
    is >> key >> count;
    if (key != "arrays") throw DataError("checkpoint: expected arrays count");
  }

  for (size_t i = 0; i < count; ++i) {
    next_line("array header");
    std::istringstream is(line);
    std::string name, dtype;
    size_t ndims = 0;
    is >> name >> dtype >> ndims;
    NamedArray arr;
    arr.kind = kind_from(dtype);
    arr.shape.resize(ndims);
    for (size_t d = 0; d < ndims; ++d) is >> arr.shape[d];
    if (!is) throw DataError("checkpoint: bad array header '" + line + "'");
    const size_t n = arr.count();
    switch (arr.kind) {
      case NamedArray::Kind::kF32:
        arr.f32.resize(n);
        f.read(reinterpret_cast<char*>(arr.f32.data()),
               static_cast<std::streamsize>(n * sizeof(float)));
        break;
      case NamedArray::Kind::kU64:
        arr.u64.resize(n);
        f.read(reinterpret_cast<char*>(arr.u64.data()),
               static_cast<std::streamsize>(n * sizeof(uint64_t)));
        break;
      case NamedArray::Kind::kI64:
        arr.i64.resize(n);
        f.read(reinterpret_cast<char*>(arr.i64.data()),
               static_cast<std::streamsize>(n * sizeof(int64_t)));
        break;
    }
    if (!f) throw DataError("checkpoint truncated in array '" + name + "'");
    ckpt.arrays.emplace(std::move(name), std::move(arr));
  }
  return ckpt;
}

const NamedArray& Checkpoint::require(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end())
    throw DataError("checkpoint missing array '" + name + "'");
  return it->second;
}

}  // namespace starsr
