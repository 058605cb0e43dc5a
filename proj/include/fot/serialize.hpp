#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fot/tensor.hpp"

namespace fot {

/// Named parameter tensors plus optional u16 table records. On disk:
/// magic "FOTW", format version u16, record count u32, then per record
/// name length u16 + UTF-8 name, rank u8, dims u32 each, raw little-endian
/// payload. Records named "cdf/..." carry u16 payloads, everything else f32.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, std::vector<uint16_t>>> tables;

  const Tensor* find(const std::string& name) const;
  const std::vector<uint16_t>* find_table(const std::string& name) const;
};

/// Write-temp-then-rename.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Little-endian scalar helpers shared by the checkpoint and container codecs.
void put_u16(std::vector<uint8_t>& out, uint16_t v);
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_u64(std::vector<uint8_t>& out, uint64_t v);
uint16_t get_u16(const uint8_t* p);
uint32_t get_u32(const uint8_t* p);
uint64_t get_u64(const uint8_t* p);

uint64_t fnv1a64(const void* data, size_t len);

}  // namespace fot
