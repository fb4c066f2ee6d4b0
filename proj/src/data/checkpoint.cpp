#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <unordered_set>

#include "catcd/checkpoint.hpp"

namespace catcd::data {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

namespace {

constexpr char kMagic[4] = {'C', 'A', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename V>
void put(std::vector<std::uint8_t>& out, V v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(V));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename V>
  V get(const char* what) {
    V v;
    std::memcpy(&v, take(sizeof(V), what).data(), sizeof(V));
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(std::span<const Parameter<T>> tensors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(tensors.size()));
  std::unordered_set<std::string> seen;
  for (const auto& t : tensors) {
    if (!seen.insert(t.name).second) {
      throw std::invalid_argument("checkpoint: duplicate tensor name " + t.name);
    }
    if (t.name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: name too long");
    put(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put(out, dtype_code<T>());
    const Shape& s = t.value.shape();
    put(out, static_cast<std::uint8_t>(s.rank()));
    for (std::size_t a = 0; a < s.rank(); ++a) put(out, static_cast<std::uint32_t>(s[a]));
    auto d = t.value.data();
    const auto* p = reinterpret_cast<const std::uint8_t*>(d.data());
    out.insert(out.end(), p, p + d.size_bytes());
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw FormatError("checkpoint: bad magic, not a CATW file");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<Parameter<T>> out;
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    auto name_bytes = r.take(len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    if (!seen.insert(name).second) throw FormatError("checkpoint: duplicate tensor name " + name);
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != dtype_code<T>()) {
      throw FormatError("checkpoint: tensor " + name + " has dtype " + std::to_string(dtype) +
                        ", expected " + std::to_string(dtype_code<T>()));
    }
    const auto ndim = r.get<std::uint8_t>("rank");
    std::vector<std::size_t> dims(ndim);
    std::size_t n = 1;
    for (auto& d : dims) {
      d = r.get<std::uint32_t>("dims");
      n *= d;
    }
    if (n > bytes.size()) throw FormatError("checkpoint: truncated payload of " + name);
    auto payload = r.take(n * sizeof(T), "payload");
    std::vector<T> values(n);
    std::memcpy(values.data(), payload.data(), payload.size());
    out.push_back({std::move(name), Tensor<T>(Shape(std::move(dims)), std::move(values))});
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after the last tensor");
  return out;
}

template <typename T>
void save_checkpoint(std::span<const Parameter<T>> tensors, const fs::path& path) {
  const auto bytes = encode_checkpoint(tensors);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <typename T>
std::vector<Parameter<T>> load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint<T>(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T>
std::vector<Parameter<T>> collect(const ParamSet<T>& ps) {
  std::vector<Parameter<T>> out(ps.params().begin(), ps.params().end());
  out.insert(out.end(), ps.buffers().begin(), ps.buffers().end());
  return out;
}

template <typename T>
void restore(ParamSet<T>& ps, std::span<const Parameter<T>> tensors) {
  std::map<std::string, const Tensor<T>*> found;
  for (const auto& t : tensors) {
    if (!t.name.starts_with("opt.")) found.emplace(t.name, &t.value);
  }
  std::string diff;
  const auto targets = collect(ps);
  for (const auto& p : targets) {
    auto it = found.find(p.name);
    if (it == found.end()) {
      diff += "  missing " + p.name + ": expected " + p.value.shape().str() + "\n";
      continue;
    }
    if (it->second->shape() != p.value.shape()) {
      diff += "  " + p.name + ": expected " + p.value.shape().str() + ", found " +
              it->second->shape().str() + "\n";
    }
    found.erase(it);
  }
  for (const auto& [name, t] : found) {
    diff += "  unexpected " + name + ": found " + t->shape().str() + "\n";
  }
  if (!diff.empty()) {
    throw CheckpointMismatch("checkpoint does not match the model:\n" + diff);
  }
  for (const auto& t : tensors) {
    if (t.name.starts_with("opt.")) continue;
    for (const auto& p : targets) {
      if (p.name == t.name) {
        auto dst = Tensor<T>(p.value).data();
        std::ranges::copy(t.value.data(), dst.begin());
        break;
      }
    }
  }
}

#define CATCD_CHECKPOINT(T)                                                                       \
  template std::vector<std::uint8_t> encode_checkpoint(std::span<const Parameter<T>>);           \
  template std::vector<Parameter<T>> decode_checkpoint(std::span<const std::uint8_t>);           \
  template void save_checkpoint(std::span<const Parameter<T>>, const fs::path&);                 \
  template std::vector<Parameter<T>> load_checkpoint(const fs::path&);                           \
  template std::vector<Parameter<T>> collect(const ParamSet<T>&);                                \
  template void restore(ParamSet<T>&, std::span<const Parameter<T>>);

CATCD_CHECKPOINT(float)
CATCD_CHECKPOINT(double)

}  // namespace catcd::data
