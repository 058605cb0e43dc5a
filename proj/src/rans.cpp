#include "fot/rans.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace fot {

namespace {

// State lives in [2^32, 2^48) between symbols; renormalization emits 16-bit
// words. The wide state keeps the measured rate within a few bits of the
// quantized-pmf entropy even on heavy-tailed tables.
constexpr uint64_t kRansL = 1ull << 32;

struct Encoder {
  uint64_t state = kRansL;
  std::vector<uint16_t> words;  // emitted in reverse, flipped at the end

  void put(uint32_t freq, uint32_t cum) {
    uint64_t max_state = static_cast<uint64_t>(freq) << 32;
    while (state >= max_state) {
      words.push_back(static_cast<uint16_t>(state & 0xFFFF));
      state >>= 16;
    }
    state = (state / freq) << 16 | (cum + state % freq);
  }

  // 16 raw bits (freq 1 over the full range).
  void put_bits16(uint16_t v) { put(1, v); }

  std::vector<uint8_t> finish() {
    words.push_back(static_cast<uint16_t>(state & 0xFFFF));
    words.push_back(static_cast<uint16_t>((state >> 16) & 0xFFFF));
    words.push_back(static_cast<uint16_t>(state >> 32));
    std::vector<uint8_t> bytes;
    bytes.reserve(words.size() * 2);
    for (auto it = words.rbegin(); it != words.rend(); ++it) {
      bytes.push_back(static_cast<uint8_t>(*it & 0xFF));
      bytes.push_back(static_cast<uint8_t>(*it >> 8));
    }
    return bytes;
  }
};

struct Decoder {
  std::span<const uint8_t> bytes;
  size_t pos = 0;
  uint64_t state = 0;

  explicit Decoder(std::span<const uint8_t> b) : bytes(b) {
    if (bytes.size() < 6 || bytes.size() % 2 != 0)
      throw std::runtime_error("rans: truncated substream header");
    state = (static_cast<uint64_t>(read_word()) << 32) |
            (static_cast<uint64_t>(read_word()) << 16) | read_word();
  }

  uint16_t read_word() {
    if (pos + 2 > bytes.size()) throw std::runtime_error("rans: truncated substream");
    uint16_t w = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return w;
  }

  uint32_t peek_slot() const { return static_cast<uint32_t>(state & 0xFFFF); }

  void advance(uint32_t freq, uint32_t cum) {
    state = freq * (state >> 16) + peek_slot() - cum;
    while (state < kRansL) state = (state << 16) | read_word();
  }

  uint16_t get_bits16() {
    uint16_t v = static_cast<uint16_t>(peek_slot());
    advance(1, v);
    return v;
  }

  void expect_done() const {
    if (pos != bytes.size() || state != kRansL)
      throw std::runtime_error("rans: corrupt or trailing data in substream");
  }
};

}  // namespace

std::vector<uint8_t> rans_encode(std::span<const StreamSymbol> stream, const CdfTable& table) {
  Encoder enc;
  // LIFO: process the stream back to front; within an escaped element the
  // raw halves go in before the escape slot so the decoder sees
  // escape, low 16, high 16.
  for (size_t i = stream.size(); i-- > 0;) {
    const StreamSymbol& s = stream[i];
    if (s.context < 0 || static_cast<size_t>(s.context) >= table.contexts.size())
      throw std::invalid_argument("rans_encode: bad context id at position " + std::to_string(i));
    const CdfContext& ctx = table.contexts[static_cast<size_t>(s.context)];
    int64_t rel = static_cast<int64_t>(s.value) - ctx.min_symbol;
    if (rel >= 0 && rel < ctx.in_range_count()) {
      int slot = static_cast<int>(rel);
      enc.put(ctx.freq(slot), ctx.cdf[static_cast<size_t>(slot)]);
    } else {
      if (!ctx.has_escape)
        throw std::invalid_argument("rans_encode: symbol " + std::to_string(s.value) +
                                    " outside support at position " + std::to_string(i) +
                                    " and context has no escape");
      uint32_t raw = static_cast<uint32_t>(s.value);
      enc.put_bits16(static_cast<uint16_t>(raw >> 16));
      enc.put_bits16(static_cast<uint16_t>(raw & 0xFFFF));
      int slot = ctx.escape_index();
      enc.put(ctx.freq(slot), ctx.cdf[static_cast<size_t>(slot)]);
    }
  }
  return enc.finish();
}

std::vector<int32_t> rans_decode(std::span<const uint8_t> bytes, const CdfTable& table,
                                 std::span<const int32_t> contexts) {
  Decoder dec(bytes);
  std::vector<int32_t> out;
  out.reserve(contexts.size());
  for (size_t i = 0; i < contexts.size(); ++i) {
    int32_t cid = contexts[i];
    if (cid < 0 || static_cast<size_t>(cid) >= table.contexts.size())
      throw std::invalid_argument("rans_decode: bad context id at position " + std::to_string(i));
    const CdfContext& ctx = table.contexts[static_cast<size_t>(cid)];
    uint32_t slot_val = dec.peek_slot();
    auto it = std::upper_bound(ctx.cdf.begin(), ctx.cdf.end(), slot_val);
    int slot = static_cast<int>(it - ctx.cdf.begin()) - 1;
    dec.advance(ctx.freq(slot), ctx.cdf[static_cast<size_t>(slot)]);
    if (ctx.has_escape && slot == ctx.escape_index()) {
      uint32_t lo = dec.get_bits16();
      uint32_t hi = dec.get_bits16();
      out.push_back(static_cast<int32_t>((hi << 16) | lo));
    } else {
      out.push_back(ctx.min_symbol + slot);
    }
  }
  dec.expect_done();
  return out;
}

std::vector<uint8_t> frame_substream(uint32_t symbol_count, std::span<const uint8_t> payload) {
  std::vector<uint8_t> out;
  out.reserve(payload.size() + 8);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(symbol_count >> (8 * i)));
  uint32_t len = static_cast<uint32_t>(payload.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(len >> (8 * i)));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

SubstreamView parse_substream(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8) throw std::runtime_error("substream: truncated header");
  auto rd32 = [&](size_t at) {
    return static_cast<uint32_t>(bytes[at]) | (static_cast<uint32_t>(bytes[at + 1]) << 8) |
           (static_cast<uint32_t>(bytes[at + 2]) << 16) | (static_cast<uint32_t>(bytes[at + 3]) << 24);
  };
  SubstreamView v;
  v.symbol_count = rd32(0);
  uint32_t len = rd32(4);
  if (bytes.size() < 8 + static_cast<size_t>(len)) throw std::runtime_error("substream: truncated payload");
  v.payload = bytes.subspan(8, len);
  v.bytes_consumed = 8 + len;
  return v;
}

}  // namespace fot
