#include "deepbet/weights_io.hpp"

#include <bit>
#include <cstring>

#include "deepbet/nifti.hpp"

namespace deepbet {
namespace {

static_assert(std::endian::native == std::endian::little, "DBW1 I/O assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'B', 'W', '1'};
constexpr std::uint8_t kFloat32 = 0;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    if (n > in_.size() - pos_) throw Error(ErrorCode::kTruncatedData, "weights file ends early");
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

std::string encode_metadata(const std::map<std::string, std::string>& m) {
  std::string text;
  for (const auto& [k, v] : m) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "metadata entry '" + k + "' cannot be encoded");
    }
    text += k + "=" + v + "\n";
  }
  return text;
}

std::map<std::string, std::string> decode_metadata(const std::string& text) {
  std::map<std::string, std::string> m;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string::npos) throw Error(ErrorCode::kCorruptHeader, "metadata line not terminated");
    const std::string line = text.substr(start, end - start);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::kCorruptHeader, "malformed metadata line");
    m[line.substr(0, eq)] = line.substr(eq + 1);
    start = end + 1;
  }
  return m;
}

}  // namespace

std::vector<std::byte> encode_weights(const NetworkWeights& w) {
  Writer out;
  out.bytes(kMagic, 4);
  out.put(static_cast<std::uint32_t>(w.tensors.size()));
  for (const auto& t : w.tensors) {
    if (t.name.empty() || t.name.size() > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "bad tensor name");
    if (t.shape.size() > 0xFF) throw Error(ErrorCode::kInvalidArgument, "too many tensor dims");
    std::int64_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.size()) throw Error(ErrorCode::kShapeMismatch, "tensor " + t.name + " shape and value count differ");
    out.put(static_cast<std::uint16_t>(t.name.size()));
    out.bytes(t.name.data(), t.name.size());
    out.put(kFloat32);
    out.put(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) out.put(d);
    out.bytes(t.values.data(), t.values.size() * sizeof(float));
  }
  const std::string meta = encode_metadata(w.metadata);
  out.put(static_cast<std::uint32_t>(meta.size()));
  out.bytes(meta.data(), meta.size());
  return out.take();
}

NetworkWeights decode_weights(std::span<const std::byte> bytes) {
  Reader in(bytes);
  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::kCorruptHeader, "not a DBW1 weights file");
  NetworkWeights w;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(in.get<std::uint16_t>());
    in.bytes(t.name.data(), t.name.size());
    if (in.get<std::uint8_t>() != kFloat32) throw Error(ErrorCode::kUnsupportedDtype, "tensor " + t.name);
    t.shape.resize(in.get<std::uint8_t>());
    std::uint64_t n = 1;
    for (auto& d : t.shape) {
      d = in.get<std::uint32_t>();
      n *= d;
    }
    if (n > bytes.size() / sizeof(float)) throw Error(ErrorCode::kTruncatedData, "tensor " + t.name + " too large");
    t.values.resize(static_cast<std::size_t>(n));
    in.bytes(t.values.data(), t.values.size() * sizeof(float));
    if (w.find(t.name) != nullptr) throw Error(ErrorCode::kCorruptHeader, "duplicate tensor " + t.name);
    w.tensors.push_back(std::move(t));
  }
  std::string meta(in.get<std::uint32_t>(), '\0');
  in.bytes(meta.data(), meta.size());
  if (!in.done()) throw Error(ErrorCode::kCorruptHeader, "trailing bytes after metadata");
  w.metadata = decode_metadata(meta);
  return w;
}

void save_weights(const NetworkWeights& w, const std::filesystem::path& path) {
  write_file_bytes(path, encode_weights(w));
}

NetworkWeights load_weights(const std::filesystem::path& path) { return decode_weights(read_file_bytes(path)); }

NetworkWeights merge_weights(const WeightsSet& set) {
  NetworkWeights merged;
  for (const auto& [role, w] : set) {
    if (role.empty() || role.find('/') != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "bad network role '" + role + "'");
    }
    for (const auto& t : w.tensors) {
      NamedTensor copy = t;
      copy.name = role + "/" + t.name;
      merged.tensors.push_back(std::move(copy));
    }
    for (const auto& [k, v] : w.metadata) merged.metadata[role + "/" + k] = v;
  }
  return merged;
}

WeightsSet split_weights(const NetworkWeights& merged) {
  WeightsSet set;
  auto split = [](const std::string& name) {
    const auto slash = name.find('/');
    if (slash == std::string::npos || slash == 0) {
      throw Error(ErrorCode::kCorruptHeader, "'" + name + "' lacks a role prefix");
    }
    return std::pair{name.substr(0, slash), name.substr(slash + 1)};
  };
  for (const auto& t : merged.tensors) {
    auto [role, name] = split(t.name);
    NamedTensor copy = t;
    copy.name = name;
    set[role].tensors.push_back(std::move(copy));
  }
  for (const auto& [k, v] : merged.metadata) {
    auto [role, key] = split(k);
    set[role].metadata[key] = v;
  }
  return set;
}

void save_weights_set(const WeightsSet& set, const std::filesystem::path& path) {
  save_weights(merge_weights(set), path);
}

WeightsSet load_weights_set(const std::filesystem::path& path) { return split_weights(load_weights(path)); }

}  // namespace deepbet
