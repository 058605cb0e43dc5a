#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fot/entropy_model.hpp"

namespace fot {

/// One element of a symbol stream: an integer value coded under the given
/// context of a CdfTable. Out-of-support values take the context's escape
/// slot followed by 32 raw bits.
struct StreamSymbol {
  int32_t value;
  int32_t context;
};

/// rANS with 16-bit renormalization words and a wide (64-bit) state, LIFO
/// encoding with in-memory reversal. Output reads forward and is
/// byte-identical across platforms (little-endian words).
std::vector<uint8_t> rans_encode(std::span<const StreamSymbol> stream, const CdfTable& table);

/// Exact inverse of rans_encode given the same table and context sequence.
/// Throws on truncated or corrupt buffers (the final coder state must
/// unwind to its initial value with every word consumed).
std::vector<int32_t> rans_decode(std::span<const uint8_t> bytes, const CdfTable& table,
                                 std::span<const int32_t> contexts);

/// Substream framing: u32 LE symbol count, u32 LE byte length, payload.
std::vector<uint8_t> frame_substream(uint32_t symbol_count, std::span<const uint8_t> payload);

struct SubstreamView {
  uint32_t symbol_count = 0;
  std::span<const uint8_t> payload;
  size_t bytes_consumed = 0;
};

SubstreamView parse_substream(std::span<const uint8_t> bytes);

}  // namespace fot
