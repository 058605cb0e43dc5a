#pragma once

#include <array>

#include "fot/latents.hpp"
#include "fot/model_config.hpp"
#include "fot/nn.hpp"

namespace fot {

/// Analysis side: spatial sampling, the frequency-oriented pyramid and the
/// per-split hyper-encoders.
///
/// Pyramid (with d = the shared stride-2 feature of I):
///   y_high = down2(d),  y_mid = d - u(y_high),  y_low = low(I) - u(y_mid)
/// followed by a two-conv unification per split.
class FreqTransform {
 public:
  FreqTransform() = default;
  FreqTransform(const ModelConfig& cfg, Rng& rng);

  /// Test configuration with exact pyramid identities: the stride-2 operator
  /// is a fixed 2x2 average pool, the stride-1 operator and the unification
  /// are identities, activations off.
  static FreqTransform linear_mode(int channels);

  /// Two stride-2 convs; output spatial dims are the input's quartered.
  Tensor spatial_sample(const Tensor& x) const;

  struct Decomposition {
    std::array<Tensor, 3> y;  // unified latents, indexed by Split
    Tensor shared_down;       // the stride-2 feature both high and mid consume
    Tensor full_res;          // the stride-1 feature y_low subtracts from
  };
  Decomposition decompose(const Tensor& I) const;

  Tensor hyper_encode(const Tensor& y, Split split) const;

  void collect(ParamList& out);
  bool linear() const { return linear_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  bool linear_ = false;
  Conv2d sample1_, sample2_;
  Conv2d down1_, down2_, low_;
  std::array<Conv2d, 3> unify1_, unify2_;
  std::array<Conv2d, 3> henc1_, henc2_, henc3_;
};

}  // namespace fot
