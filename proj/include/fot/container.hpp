#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fot/latents.hpp"

namespace fot {

/// Versioned scalable bitstream. Header: magic "FOTC", version u16, flags u8
/// (bit 0 low, bit 1 mid, bit 2 high), original width/height u32, model id
/// u64; then six substream slots in the fixed order z_high, z_mid, z_low,
/// y_high, y_mid, y_low (absent slots have zero count and length). All
/// integers little-endian.
struct CompressedContainer {
  static constexpr uint16_t kVersion = 1;

  uint16_t version = kVersion;
  uint8_t flags = 0;
  uint32_t width = 0;
  uint32_t height = 0;
  uint64_t model_id = 0;

  struct Slot {
    uint32_t symbol_count = 0;
    std::vector<uint8_t> payload;
  };
  std::array<Slot, 6> slots;  // z_high, z_mid, z_low, y_high, y_mid, y_low

  static int slot_index(bool is_y, Split s) { return (is_y ? 3 : 0) + split_index(s); }

  bool has_split(Split s) const { return (flags >> split_flag_bit(s)) & 1; }
  void set_split(Split s) { flags = static_cast<uint8_t>(flags | (1u << split_flag_bit(s))); }
  static int split_flag_bit(Split s) {
    switch (s) {
      case Split::kLow: return 0;
      case Split::kMid: return 1;
      case Split::kHigh: return 2;
    }
    return 0;
  }
  SplitMask stored_mask() const {
    SplitMask m{false, false, false};
    for (Split s : kAllSplits) m.set(s, has_split(s));
    return m;
  }

  /// Sum of substream payload bytes (framing and header excluded).
  int64_t payload_bytes() const;
  int64_t split_payload_bytes(Split s) const;
  double bpp() const { return payload_bytes() * 8.0 / (static_cast<double>(width) * height); }

  std::vector<uint8_t> serialize() const;
  static CompressedContainer deserialize(const std::vector<uint8_t>& bytes);

  void write_file(const std::string& path) const;
  static CompressedContainer read_file(const std::string& path);

  /// Flag/slot consistency (a present split has non-empty y and z slots).
  void validate() const;
};

}  // namespace fot
