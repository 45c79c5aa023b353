#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lgnn/model.hpp"

// Checkpoint layout (little endian):
//   "LGNN" | u16 version=1 | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 dtype (0 = f32) | u8 rank
//               | u32 dims... | f32 payload
//   u32 crc32 of everything before it

namespace lgnn {

namespace {

constexpr char kMagic[4] = {'L', 'G', 'N', 'N'};
constexpr uint16_t kVersion = 1;

template <typename V>
void put(std::vector<uint8_t>& buf, V v) {
  uint8_t raw[sizeof(V)];
  std::memcpy(raw, &v, sizeof(V));
  buf.insert(buf.end(), raw, raw + sizeof(V));
}

struct Reader {
  const uint8_t* p;
  size_t left;

  void need(size_t n) const {
    if (left < n) throw FormatError("checkpoint: truncated file");
  }
  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, p, sizeof(V));
    p += sizeof(V);
    left -= sizeof(V);
    return v;
  }
  std::string get_string(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

}  // namespace

void save_checkpoint(ModelGraph& model, const std::string& path) {
  auto entries = model.entries();
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put<uint16_t>(buf, kVersion);
  put<uint32_t>(buf, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put<uint16_t>(buf, static_cast<uint16_t>(e.name.size()));
    buf.insert(buf.end(), e.name.begin(), e.name.end());
    put<uint8_t>(buf, 0);
    put<uint8_t>(buf, static_cast<uint8_t>(e.value->rank()));
    for (int64_t d : e.value->shape) put<uint32_t>(buf, static_cast<uint32_t>(d));
    const auto* raw = reinterpret_cast<const uint8_t*>(e.value->ptr());
    buf.insert(buf.end(), raw, raw + e.value->size() * sizeof(float));
  }
  const uint32_t crc =
      static_cast<uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
  put<uint32_t>(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("checkpoint: short write to " + path);
}

void load_checkpoint(ModelGraph& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 14) throw FormatError("checkpoint: truncated file");

  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  const uint32_t crc =
      static_cast<uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (crc != stored_crc) throw FormatError("checkpoint: crc mismatch");

  Reader r{buf.data(), buf.size() - 4};
  if (std::memcmp(r.p, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  r.p += 4;
  r.left -= 4;
  if (r.get<uint16_t>() != kVersion) throw FormatError("checkpoint: unsupported version");
  const uint32_t count = r.get<uint32_t>();

  auto entries = model.entries();
  if (count != entries.size())
    throw RegistryError("checkpoint: tensor count does not match the model registry");

  std::vector<bool> seen(entries.size(), false);
  for (uint32_t t = 0; t < count; ++t) {
    const uint16_t name_len = r.get<uint16_t>();
    const std::string name = r.get_string(name_len);
    const uint8_t dtype = r.get<uint8_t>();
    if (dtype != 0) throw FormatError("checkpoint: unsupported dtype code");
    const uint8_t rank = r.get<uint8_t>();
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = r.get<uint32_t>();

    size_t idx = entries.size();
    for (size_t i = 0; i < entries.size(); ++i)
      if (!seen[i] && entries[i].name == name) {
        idx = i;
        break;
      }
    if (idx == entries.size())
      throw RegistryError("checkpoint: unknown tensor name " + name);
    seen[idx] = true;

    Tensor& dst = *entries[idx].value;
    if (dims != dst.shape)
      throw ShapeError("checkpoint: shape disagreement for " + name);
    const size_t bytes = static_cast<size_t>(dst.size()) * sizeof(float);
    r.need(bytes);
    std::memcpy(dst.ptr(), r.p, bytes);
    r.p += bytes;
    r.left -= bytes;
  }
  if (r.left != 0) throw FormatError("checkpoint: trailing bytes");
}

}  // namespace lgnn
