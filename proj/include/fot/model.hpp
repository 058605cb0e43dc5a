#pragma once

#include <array>
#include <string>
#include <vector>

#include "fot/entropy_model.hpp"
#include "fot/freq_transform.hpp"
#include "fot/fusion_decoder.hpp"
#include "fot/latents.hpp"
#include "fot/model_config.hpp"
#include "fot/serialize.hpp"

namespace fot {

// Layer descriptors for the parameter/MAC counter.
enum class LayerKind { kConv, kDeconv, kAttention, kUpsample };

struct LayerDesc {
  LayerKind kind;
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int output_padding = 0;
  int reduction = 0;  // attention only
};

struct NetDesc {
  std::string name;
  std::vector<LayerDesc> layers;
  int input_div = 1;  // the net starts on a grid of (H/input_div, W/input_div)
};

/// The full codec: analysis transform, per-split factorized densities for
/// the hyper-latents, Gaussian-conditional main latents, fusion decoder.
class CodecModel {
 public:
  CodecModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  uint64_t model_id() const { return cfg_.id_hash(); }

  FreqTransform& transform() { return transform_; }
  const FreqTransform& transform() const { return transform_; }
  FusionDecoder& decoder() { return decoder_; }
  const FusionDecoder& decoder() const { return decoder_; }
  const FactorizedDensity& density(Split s) const { return density_[static_cast<size_t>(s)]; }

  struct Forward {
    LatentBundle latents;
    std::array<Tensor, 3> sigma;         // per split, matching y's shape
    std::array<Tensor, 3> y_likelihood;  // of y_hat under sigma
    std::array<Tensor, 3> z_likelihood;  // of z_hat under the factorized model
    Tensor x_hat;                        // undefined when mask empty splits lack latents
  };

  /// Runs the full pipeline on x [N,3,H,W] (H,W divisible by 64 after CLI
  /// padding; divisibility by 16 is the hard floor here). All splits are
  /// computed; the mask selects the reconstruction sum.
  Forward forward(const Tensor& x, QuantMode mode, Rng* noise_rng,
                  const SplitMask& mask = SplitMask::all()) const;

  ParamList parameters();

  /// Checkpoint includes config records; with_tables embeds the coding CDFs.
  Checkpoint to_checkpoint(bool with_tables = true) const;
  static CodecModel from_checkpoint(const Checkpoint& ckpt, uint64_t seed = 0);

  // Counter descriptors.
  std::vector<NetDesc> describe_all() const;
  /// Encoder work attributable to one split (the shared stride-2 feature is
  /// counted in the high branch whose chain computes it).
  NetDesc describe_encoder_branch(Split s) const;

 private:
  ModelConfig cfg_;
  FreqTransform transform_;
  FusionDecoder decoder_;
  std::array<FactorizedDensity, 3> density_;
};

struct CountResult {
  int64_t macs = 0;
  int64_t params = 0;
};

/// Exact learnable-scalar and conv-layer multiply-accumulate counts. Bias
/// counts one MAC per output element; attention counts only its Q/K/V convs;
/// upsampling reshapes cost nothing.
CountResult count_params_macs(const NetDesc& net, int64_t in_h, int64_t in_w);

}  // namespace fot
