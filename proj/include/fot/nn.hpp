#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fot/rng.hpp"
#include "fot/tensor.hpp"

namespace fot {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

enum class Activation { kNone, kRelu };

Tensor apply_activation(const Tensor& x, Activation act);

/// 2-D convolution layer. Square kernels in {1,3,5}; stride 1 keeps spatial
/// dims when padding = (k-1)/2.
struct Conv2d {
  Tensor weight;  // [out_ch, in_ch, k, k]
  Tensor bias;    // [out_ch]
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  /// init_gain scales the Kaiming bound (used where the output must start
  /// at a specific dynamic range, e.g. latents vs quantization noise).
  Conv2d(int in_ch, int out_ch, int k, int stride, Rng& rng, float init_gain = 1.0f);
  /// 1x1 identity mapping (requires in_ch == out_ch).
  static Conv2d identity(int ch);
  /// 2x2 average pooling expressed as a fixed 3x3 stride-2 conv.
  static Conv2d avg_down2(int ch);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  void collect(const std::string& prefix, ParamList& out);
};

struct ConvTranspose2d {
  Tensor weight;  // [in_ch, out_ch, k, k]
  Tensor bias;    // [out_ch]
  int stride = 2;
  int padding = 0;
  int output_padding = 0;

  ConvTranspose2d() = default;
  /// Upsamples by exactly `stride` (padding/output_padding derived from k).
  ConvTranspose2d(int in_ch, int out_ch, int k, int stride, Rng& rng);

  Tensor operator()(const Tensor& x) const {
    return conv_transpose2d(x, weight, bias, stride, padding, output_padding);
  }
  void collect(const std::string& prefix, ParamList& out);
};

/// Adam with bias correction. Moment buffers are keyed by parameter order;
/// the list must not change between steps.
class Adam {
 public:
  Adam(ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  /// Applies one update from the accumulated gradients. A non-finite
  /// gradient rejects the whole step and reports the parameter name.
  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t step_count() const { return step_; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
};

}  // namespace fot
