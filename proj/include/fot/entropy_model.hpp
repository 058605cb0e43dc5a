#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fot/nn.hpp"
#include "fot/rng.hpp"
#include "fot/tensor.hpp"

namespace fot {

enum class QuantMode { kNoise, kRound };

/// Likelihoods below this are clamped for rate stability.
inline constexpr float kLikelihoodFloor = 5.9604644775390625e-08f;  // 2^-24

/// Scale parameters are clamped to this lower bound before use.
inline constexpr float kScaleBound = 0.11f;

/// Noise mode adds i.i.d. uniform(-1/2,1/2) (training surrogate, needs a
/// seeded rng); round mode rounds half to even with a straight-through
/// gradient.
Tensor quantize(const Tensor& y, QuantMode mode, Rng* rng);

/// p = Phi((v+1/2)/sigma) - Phi((v-1/2)/sigma), zero mean, sigma clamped to
/// kScaleBound, result clamped to kLikelihoodFloor.
Tensor gaussian_likelihood(const Tensor& y_hat, const Tensor& sigma);

/// Number of non-positive sigma values seen by gaussian_likelihood since
/// process start (they are clamped, not fatal).
int64_t gaussian_clamp_count();

/// Channel-wise monotone cumulative model for the hyper-latent: a depth-4
/// composition of softplus-positive linear maps with tanh gating, sigmoid
/// output.
class FactorizedDensity {
 public:
  static constexpr int kDepth = 4;
  static constexpr int kWidth = 3;

  FactorizedDensity() = default;
  FactorizedDensity(int channels, Rng& rng);

  int channels() const { return channels_; }

  /// c(v), elementwise over [N,C,H,W]; monotone in v per channel.
  Tensor cumulative(const Tensor& v) const;

  /// p(v) = c(v+1/2) - c(v-1/2), clamped to kLikelihoodFloor.
  Tensor likelihood(const Tensor& z_hat) const;

  void collect(const std::string& prefix, ParamList& out);

 private:
  int channels_ = 0;
  std::vector<Tensor> matrices_;  // [1,C,d_out,d_in], softplus-reparametrized
  std::vector<Tensor> biases_;    // [1,C,d_out,1]
  std::vector<Tensor> factors_;   // [1,C,d_out,1], tanh-reparametrized gates
};

/// Sum of -log2 p with 64-bit accumulation. Rejects p <= 0.
double estimate_rate(const Tensor& p);

/// Graph version of estimate_rate for the training loss.
Tensor rate_bits(const Tensor& p);

/// One coding context: integer support [min_symbol, min_symbol+n-1] plus an
/// optional escape slot at the end. cdf is strictly increasing from 0 to
/// 2^16.
struct CdfContext {
  int32_t min_symbol = 0;
  bool has_escape = true;
  std::vector<uint32_t> cdf;

  int slot_count() const { return static_cast<int>(cdf.size()) - 1; }
  int in_range_count() const { return slot_count() - (has_escape ? 1 : 0); }
  int escape_index() const { return slot_count() - 1; }
  uint32_t freq(int slot) const { return cdf[static_cast<size_t>(slot) + 1] - cdf[static_cast<size_t>(slot)]; }
  void validate() const;
};

struct CdfTable {
  static constexpr int kPrecisionBits = 16;
  static constexpr uint32_t kTotal = 1u << 16;

  std::vector<CdfContext> contexts;

  /// Expected code length in bits of coding `values` under the quantized
  /// pmf, including 32 raw bits per escape.
  double expected_bits(std::span<const int32_t> values, std::span<const int32_t> contexts_ids) const;

  std::vector<uint16_t> serialize() const;
  static CdfTable deserialize(const std::vector<uint16_t>& words);
};

/// Quantizes a pmf (last entry = escape mass when with_escape) to integer
/// frequencies summing to 2^16 with every slot >= 1.
std::vector<uint32_t> quantize_pmf(const std::vector<double>& pmf);

/// Gaussian conditional coding model: 64 log-spaced scales in
/// [kScaleBound, 256]; sigma maps to the smallest table scale >= sigma.
struct GaussianConditional {
  std::vector<float> scale_table;

  static GaussianConditional standard();
  int scale_index(float sigma) const;
};

inline constexpr double kTailMass = 1e-9;

/// One context per scale-table entry.
CdfTable build_gaussian_cdf(const GaussianConditional& gc);

/// One context per channel, support scanned from the trained cumulative.
CdfTable build_factorized_cdf(const FactorizedDensity& fd);

}  // namespace fot
