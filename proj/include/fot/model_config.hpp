#pragma once

#include <cstdint>
#include <string>

#include "fot/nn.hpp"

namespace fot {

/// Architecture hyperparameters. The canonical serialization hashes into the
/// 64-bit model id used to match checkpoints against containers.
struct ModelConfig {
  int pyramid_depth = 2;  // K; levels = K+1
  int base_channels = 32;
  int latent_channels = 32;
  int hyper_channels = 16;
  int attention_reduction = 8;
  std::string activation = "relu";  // "relu" | "none"

  static ModelConfig desk();   // 32/32/16, the supported training target
  static ModelConfig paper();  // 128/192/128, untested for RD parity

  Activation act() const;
  void validate() const;
  std::string canonical() const;
  uint64_t id_hash() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace fot
