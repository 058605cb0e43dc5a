#include "fot/container.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fot/rans.hpp"
#include "fot/serialize.hpp"

namespace fot {

namespace {
constexpr char kMagic[4] = {'F', 'O', 'T', 'C'};
[[noreturn]] void bad(const std::string& msg) { throw std::runtime_error("container: " + msg); }
}  // namespace

int64_t CompressedContainer::payload_bytes() const {
  int64_t total = 0;
  for (const Slot& s : slots) total += static_cast<int64_t>(s.payload.size());
  return total;
}

int64_t CompressedContainer::split_payload_bytes(Split s) const {
  return static_cast<int64_t>(slots[static_cast<size_t>(slot_index(false, s))].payload.size()) +
         static_cast<int64_t>(slots[static_cast<size_t>(slot_index(true, s))].payload.size());
}

void CompressedContainer::validate() const {
  for (Split s : kAllSplits) {
    const Slot& z = slots[static_cast<size_t>(slot_index(false, s))];
    const Slot& y = slots[static_cast<size_t>(slot_index(true, s))];
    bool present = has_split(s);
    if (present && (z.payload.empty() || y.payload.empty()))
      bad(std::string("split '") + split_name(s) + "' flagged present but has an empty substream");
    if (!present && (!z.payload.empty() || !y.payload.empty()))
      bad(std::string("split '") + split_name(s) + "' has data but its flag is clear");
  }
  if (width == 0 || height == 0) bad("zero image dimensions");
}

std::vector<uint8_t> CompressedContainer::serialize() const {
  validate();
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, version);
  out.push_back(flags);
  put_u32(out, width);
  put_u32(out, height);
  put_u64(out, model_id);
  for (const Slot& s : slots) {
    auto framed = frame_substream(s.symbol_count, s.payload);
    out.insert(out.end(), framed.begin(), framed.end());
  }
  return out;
}

CompressedContainer CompressedContainer::deserialize(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 23) bad("truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) bad("bad magic");
  CompressedContainer c;
  c.version = get_u16(bytes.data() + 4);
  if (c.version != kVersion) bad("unsupported version " + std::to_string(c.version));
  c.flags = bytes[6];
  c.width = get_u32(bytes.data() + 7);
  c.height = get_u32(bytes.data() + 11);
  c.model_id = get_u64(bytes.data() + 15);
  size_t pos = 23;
  for (Slot& s : c.slots) {
    auto view = parse_substream(
        std::span<const uint8_t>(bytes.data() + pos, bytes.size() - pos));
    s.symbol_count = view.symbol_count;
    s.payload.assign(view.payload.begin(), view.payload.end());
    pos += view.bytes_consumed;
  }
  if (pos != bytes.size()) bad("trailing bytes after the last substream");
  c.validate();
  return c;
}

void CompressedContainer::write_file(const std::string& path) const {
  auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) bad("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) bad("short write to " + path);
}

CompressedContainer CompressedContainer::read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) bad("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace fot
