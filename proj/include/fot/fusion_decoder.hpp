#pragma once

#include <array>

#include "fot/latents.hpp"
#include "fot/model_config.hpp"
#include "fot/nn.hpp"

namespace fot {

/// Q/K project to C/r channels, V keeps C; all 1x1 convs with bias. For
/// C=64, r=8 this is exactly 5200 learnable scalars.
struct AttentionParams {
  Tensor q_weight, q_bias;  // [C/r, C, 1, 1], [C/r]
  Tensor k_weight, k_bias;
  Tensor v_weight, v_bias;  // [C, C, 1, 1], [C]
  int reduction = 8;

  AttentionParams() = default;
  AttentionParams(int channels, int reduction, Rng& rng);

  int channels() const { return static_cast<int>(v_weight.dim(0)); }
  int64_t param_count() const;
  void collect(const std::string& prefix, ParamList& out);
};

/// Attention over each position's row and column (H+W-1 positions, the
/// shared one counted once), softmax-normalized, aggregated over value
/// projections and added back as a plain residual.
Tensor criss_cross_attention(const Tensor& f, const AttentionParams& params);

/// Synthesis side: per-split hyper-decoders (scales) and reconstruction
/// branches R_k fused by a point-wise sum over the enabled splits.
class FusionDecoder {
 public:
  FusionDecoder() = default;
  FusionDecoder(const ModelConfig& cfg, Rng& rng);

  /// sigma_k, strictly positive (exponential mapping, clamped >= 0.11);
  /// spatial dims are z's times 4, channels match y.
  Tensor hyper_decode(const Tensor& z_hat, Split split) const;

  /// One reconstruction branch: transposed-conv chain to full resolution
  /// (x4 low, x8 mid, x16 high) with one attention block after the first
  /// transposed conv.
  Tensor branch(const Tensor& y_hat, Split split) const;

  /// Point-wise sum of the enabled branches. Disabled splits contribute
  /// exactly zero. Not clamped; clamping happens at image export only.
  Tensor reconstruct(const LatentBundle& latents, const SplitMask& mask) const;

  const AttentionParams& attention(Split s) const { return attn_[static_cast<size_t>(s)]; }
  void collect(ParamList& out);

 private:
  ModelConfig cfg_;
  std::array<ConvTranspose2d, 3> hdec1_, hdec2_;
  std::array<Conv2d, 3> hdec3_;
  std::array<std::vector<ConvTranspose2d>, 3> branch_;  // 4/3/2 deconvs for high/mid/low
  std::array<AttentionParams, 3> attn_;
};

}  // namespace fot
