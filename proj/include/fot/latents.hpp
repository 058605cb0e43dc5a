#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "fot/tensor.hpp"

namespace fot {

/// Frequency split ids. The paper labels the coarsest band "high" and the
/// finest residual "low"; container slots and flag bits follow this order.
enum class Split { kHigh = 0, kMid = 1, kLow = 2 };

inline constexpr std::array<Split, 3> kAllSplits = {Split::kHigh, Split::kMid, Split::kLow};

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kHigh: return "high";
    case Split::kMid: return "mid";
    case Split::kLow: return "low";
  }
  return "?";
}

inline int split_index(Split s) { return static_cast<int>(s); }

/// Which splits participate in a decode. At least one must be enabled.
struct SplitMask {
  bool low = true;
  bool mid = true;
  bool high = true;

  static SplitMask all() { return {true, true, true}; }
  static SplitMask only(Split s) {
    SplitMask m{false, false, false};
    m.set(s, true);
    return m;
  }

  bool get(Split s) const {
    switch (s) {
      case Split::kHigh: return high;
      case Split::kMid: return mid;
      case Split::kLow: return low;
    }
    return false;
  }
  void set(Split s, bool v) {
    switch (s) {
      case Split::kHigh: high = v; break;
      case Split::kMid: mid = v; break;
      case Split::kLow: low = v; break;
    }
  }
  int count() const { return (low ? 1 : 0) + (mid ? 1 : 0) + (high ? 1 : 0); }
  bool any() const { return count() > 0; }
  bool subset_of(const SplitMask& o) const {
    return (!low || o.low) && (!mid || o.mid) && (!high || o.high);
  }
  std::string str() const {
    std::string s;
    if (low) s += "low";
    if (mid) s += s.empty() ? "mid" : ",mid";
    if (high) s += s.empty() ? "high" : ",high";
    return s.empty() ? "(none)" : s;
  }

  /// Parses "low,mid,high" style lists.
  static SplitMask parse(const std::string& text);
};

/// Per-split latents y_k, hyper-latents z_k and their quantized forms.
struct LatentBundle {
  std::array<Tensor, 3> y;      // indexed by Split
  std::array<Tensor, 3> z;
  std::array<Tensor, 3> y_hat;
  std::array<Tensor, 3> z_hat;

  Tensor& y_of(Split s) { return y[static_cast<size_t>(s)]; }
  Tensor& z_of(Split s) { return z[static_cast<size_t>(s)]; }
  Tensor& y_hat_of(Split s) { return y_hat[static_cast<size_t>(s)]; }
  Tensor& z_hat_of(Split s) { return z_hat[static_cast<size_t>(s)]; }
  const Tensor& y_hat_of(Split s) const { return y_hat[static_cast<size_t>(s)]; }
  const Tensor& z_hat_of(Split s) const { return z_hat[static_cast<size_t>(s)]; }
};

}  // namespace fot
