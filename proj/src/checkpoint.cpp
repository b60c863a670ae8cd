#include "hsad/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hsad {

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("tensor container is truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out(kContainerMagic, sizeof(kContainerMagic));
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, value] : tensors) {
    if (value.empty()) throw ContractError("cannot serialise empty tensor '" + name + "'");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint8_t>(out, value.dtype() == DType::kFloat32 ? 0 : 1);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(value.rank()));
    for (auto d : value.shape()) put_le<std::uint64_t>(out, d);
    dispatch(value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      for (T x : value.data<T>()) put_le<T>(out, x);
    });
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(const std::string& bytes) {
  Reader in(bytes);
  if (in.bytes(sizeof(kContainerMagic)) != std::string(kContainerMagic, sizeof(kContainerMagic))) {
    throw std::runtime_error("not a tensor container (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kContainerVersion) {
    throw std::runtime_error("unsupported tensor container version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = in.bytes(in.get<std::uint32_t>());
    const auto code = in.get<std::uint8_t>();
    if (code > 1) throw std::runtime_error("unknown dtype code in tensor '" + t.name + "'");
    const DType dtype = code == 0 ? DType::kFloat32 : DType::kFloat64;
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    t.value = Tensor(shape, dtype);
    dispatch(dtype, [&](auto tag) {
      using T = decltype(tag);
      for (auto& x : t.value.mutable_data<T>()) x = in.get<T>();
    });
    out.push_back(std::move(t));
  }
  if (!in.done()) throw std::runtime_error("trailing bytes after tensor container");
  return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_tensors(tensors);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_tensors(ss.str());
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw std::runtime_error("tensor '" + name + "' missing from container");
}

}  // namespace hsad
