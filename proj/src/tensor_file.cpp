#include "taxon/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <fmt/core.h>

#include "taxon/error.hpp"

namespace taxon {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'X', 'O', 'N', 'T', 'M', '\0'};

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    const auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void put_bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end, std::string source)
      : bytes_(bytes), end_(end), source_(std::move(source)) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw LoadError(fmt::format("{}: truncated tensor file", source_));
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file, TensorDType dtype) {
  Writer w;
  w.put_bytes(std::string(kMagic, sizeof kMagic));
  w.put<std::uint32_t>(kTensorFileVersion);
  const std::string meta = file.metadata.dump();
  w.put<std::uint64_t>(meta.size());
  w.put_bytes(meta);
  w.put<std::uint64_t>(file.tensors.size());
  for (const auto& [name, t] : file.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    for (double v : t.data) {
      if (dtype == TensorDType::kFloat32) {
        w.put<float>(static_cast<float>(v));
      } else {
        w.put<double>(v);
      }
    }
  }
  auto& bytes = w.bytes();
  w.put<std::uint64_t>(fnv1a(bytes.data(), bytes.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("short write to '{}'", path.string()));
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(fmt::format("cannot open '{}'", path.string()));
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string src = path.string();
  if (bytes.size() < sizeof kMagic + 4 + 8) throw LoadError(fmt::format("{}: truncated tensor file", src));
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw LoadError(fmt::format("{}: not a tensor file (bad magic)", src));
  }

  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (stored != fnv1a(bytes.data(), body)) {
    throw LoadError(fmt::format("{}: checksum mismatch (corrupt or truncated file)", src));
  }

  Reader r(bytes, body, src);
  r.get_bytes(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kTensorFileVersion) {
    throw LoadError(fmt::format("{}: unsupported tensor file version {} (expected {})", src, version,
                                kTensorFileVersion));
  }
  TensorFile file;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    file.metadata = nlohmann::json::parse(r.get_bytes(meta_len));
  } catch (const nlohmann::json::parse_error&) {
    throw LoadError(fmt::format("{}: metadata block is not valid JSON", src));
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto name = r.get_bytes(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != static_cast<std::uint8_t>(TensorDType::kFloat32) &&
        dtype != static_cast<std::uint8_t>(TensorDType::kFloat64)) {
      throw LoadError(fmt::format("{}: tensor '{}' has unknown dtype {}", src, name, dtype));
    }
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Tensor t(shape);
    for (auto& v : t.data) {
      v = dtype == static_cast<std::uint8_t>(TensorDType::kFloat32) ? static_cast<double>(r.get<float>())
                                                                     : r.get<double>();
    }
    if (!file.tensors.emplace(name, std::move(t)).second) {
      throw LoadError(fmt::format("{}: duplicate tensor '{}'", src, name));
    }
  }
  if (!r.done()) throw LoadError(fmt::format("{}: trailing bytes after tensor data", src));
  return file;
}

}  // namespace taxon
