#include "csn/container.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "csn/errors.hpp"

namespace csn {
namespace {

static_assert(std::endian::native == std::endian::little, "CSNT I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw DataError(std::string("CSNT truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string encode_container(const std::vector<NamedTensor>& entries) {
  std::string out = "CSNT";
  put<std::uint16_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw DataError("CSNT entry name too long: " + e.name.substr(0, 32) + "...");
    for (char c : e.name)
      if (c < 0x20 || c > 0x7E) throw DataError("CSNT entry name must be printable ASCII: " + e.name);
    if (e.value.rank() > 0xFF) throw DataError("CSNT rank too large for " + e.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.rank()));
    for (auto d : e.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    std::string payload;
    payload.reserve(e.value.numel() * 4);
    for (double v : e.value.data()) {
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) throw DataError("CSNT entry " + e.name + " holds a value not representable as f32");
      put<float>(payload, f);
    }
    out += payload;
    put<std::uint32_t>(out, crc_of(payload));
  }
  return out;
}

std::vector<NamedTensor> decode_container(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != "CSNT") throw DataError("not a CSNT container (bad magic)");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kContainerVersion) throw DataError("unsupported CSNT version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("entry count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.take(len, "name"));
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto extent = r.get<std::uint32_t>("dims");
      if (extent == 0) throw DataError("CSNT entry " + name + " has a zero extent");
      shape.push_back(extent);
    }
    const std::size_t n = shape_numel(shape);
    std::string_view payload = r.take(n * 4, "payload");
    const auto stored_crc = r.get<std::uint32_t>("checksum");
    if (crc_of(payload) != stored_crc) throw DataError("CSNT checksum mismatch for entry " + name);
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) {
      float f;
      std::memcpy(&f, payload.data() + 4 * k, 4);
      data[k] = f;
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (!r.done()) throw DataError("CSNT has trailing bytes after " + std::to_string(count) + " entries");
  return out;
}

void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  const std::string bytes = encode_container(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

std::vector<NamedTensor> read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_container(ss.str());
}

Tensor round_to_f32(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.vec()) v = static_cast<float>(v);
  return out;
}

}  // namespace csn
