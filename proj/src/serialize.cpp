#include "fot/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fot {

namespace {
constexpr char kMagic[4] = {'F', 'O', 'T', 'W'};
constexpr uint16_t kVersion = 1;

bool is_table_name(const std::string& name) { return name.rfind("cdf/", 0) == 0; }

[[noreturn]] void bad(const std::string& msg) { throw std::runtime_error("checkpoint: " + msg); }
}  // namespace

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

uint64_t fnv1a64(const void* data, size_t len) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

const std::vector<uint16_t>* Checkpoint::find_table(const std::string& name) const {
  for (const auto& [n, t] : tables)
    if (n == name) return &t;
  return nullptr;
}

namespace {

void append_record_header(std::vector<uint8_t>& out, const std::string& name,
                          const std::vector<uint32_t>& dims) {
  if (name.size() > 0xFFFF) bad("record name too long");
  put_u16(out, static_cast<uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  if (dims.size() > 0xFF) bad("record rank too large");
  out.push_back(static_cast<uint8_t>(dims.size()));
  for (uint32_t d : dims) put_u32(out, d);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u16(buf, kVersion);
  put_u32(buf, static_cast<uint32_t>(ckpt.params.size() + ckpt.tables.size()));
  for (const auto& [name, t] : ckpt.params) {
    if (is_table_name(name)) bad("parameter name reserved for tables: " + name);
    std::vector<uint32_t> dims;
    for (int64_t d : t.shape()) dims.push_back(static_cast<uint32_t>(d));
    append_record_header(buf, name, dims);
    for (float v : t.data()) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(buf, bits);
    }
  }
  for (const auto& [name, vals] : ckpt.tables) {
    if (!is_table_name(name)) bad("table name must start with cdf/: " + name);
    append_record_header(buf, name, {static_cast<uint32_t>(vals.size())});
    for (uint16_t v : vals) put_u16(buf, v);
  }
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) bad("cannot open " + tmp + " for writing");
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) bad("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) bad("rename to " + path + " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) bad("cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > buf.size()) bad("truncated file " + path);
  };
  need(10);
  if (std::memcmp(buf.data(), kMagic, 4) != 0) bad("bad magic in " + path);
  uint16_t version = get_u16(buf.data() + 4);
  if (version != kVersion) bad("unsupported version " + std::to_string(version));
  uint32_t count = get_u32(buf.data() + 6);
  pos = 10;
  Checkpoint ckpt;
  for (uint32_t r = 0; r < count; ++r) {
    need(2);
    uint16_t name_len = get_u16(buf.data() + pos);
    pos += 2;
    need(name_len);
    std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
    pos += name_len;
    need(1);
    uint8_t rank = buf[pos++];
    Shape shape;
    int64_t n = 1;
    need(static_cast<size_t>(rank) * 4);
    for (int i = 0; i < rank; ++i) {
      uint32_t d = get_u32(buf.data() + pos);
      pos += 4;
      shape.push_back(d);
      n *= d;
    }
    if (is_table_name(name)) {
      need(static_cast<size_t>(n) * 2);
      std::vector<uint16_t> vals(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        vals[static_cast<size_t>(i)] = get_u16(buf.data() + pos);
        pos += 2;
      }
      ckpt.tables.emplace_back(std::move(name), std::move(vals));
    } else {
      need(static_cast<size_t>(n) * 4);
      std::vector<float> vals(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        uint32_t bits = get_u32(buf.data() + pos);
        pos += 4;
        std::memcpy(&vals[static_cast<size_t>(i)], &bits, 4);
      }
      ckpt.params.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(vals)));
    }
  }
  return ckpt;
}

}  // namespace fot
